"""Gaussian splat containers, covariance algebra and per-splat geometry."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import sh as shlib

GROUPS = ("scene", "avatar", "object")
OPACITY_MIN = 1e-4
OPACITY_MAX = 1.0 - 1e-4


class DegenerateInputError(ValueError):
    """Raised when an operation gets an empty or zero-weight input."""


def quat_to_rotmat(q):
    """Rotation matrices from (w, x, y, z) quaternions, shape (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def rotmat_to_quat(r):
    """(w, x, y, z) quaternions of rotation matrices (..., 3, 3) -> (..., 4)."""
    from scipy.spatial.transform import Rotation

    r = np.asarray(r, dtype=np.float64)
    xyzw = Rotation.from_matrix(r.reshape(-1, 3, 3)).as_quat()
    return xyzw[:, [3, 0, 1, 2]].reshape(r.shape[:-2] + (4,))


def covariances(rotations, scales):
    """Sigma = R diag(s^2) R^T for stacked splats."""
    r = np.asarray(rotations, dtype=np.float64)
    s2 = np.asarray(scales, dtype=np.float64) ** 2
    return np.einsum("...ij,...j,...kj->...ik", r, s2, r)


def precisions(rotations, scales):
    """A = Sigma^-1 = R diag(1/s^2) R^T, built without a matrix inverse."""
    r = np.asarray(rotations, dtype=np.float64)
    inv = 1.0 / np.asarray(scales, dtype=np.float64) ** 2
    return np.einsum("...ij,...j,...kj->...ik", r, inv, r)


@dataclass(frozen=True)
class Covariance3:
    sigma: np.ndarray
    precision: np.ndarray
    eigenvalues: np.ndarray
    sqrt_det: float

    @classmethod
    def from_matrix(cls, sigma):
        sigma = np.asarray(sigma, dtype=np.float64)
        sigma = 0.5 * (sigma + sigma.T)
        evals, evecs = np.linalg.eigh(sigma)
        if evals[0] <= 0:
            raise ValueError("covariance is not positive definite")
        prec = (evecs / evals) @ evecs.T
        return cls(sigma, prec, evals, float(np.sqrt(np.prod(evals))))

    @classmethod
    def from_splat(cls, rotation, scales):
        r = quat_to_rotmat(rotation)
        s = np.asarray(scales, dtype=np.float64)
        return cls(
            covariances(r, s),
            precisions(r, s),
            np.sort(s**2),
            float(np.prod(s)),
        )


@dataclass(frozen=True)
class GaussianSplat:
    mean: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    scales: np.ndarray  # per-axis standard deviations, metres
    opacity: float
    sh_coeffs: np.ndarray  # (K, 3)

    @property
    def sh_degree(self):
        return shlib.degree_from_count(len(self.sh_coeffs))

    @property
    def rotation_matrix(self):
        return quat_to_rotmat(self.rotation)

    @property
    def covariance(self):
        return Covariance3.from_splat(self.rotation, self.scales)


@dataclass
class SplatScene:
    """Structure-of-arrays collection of splats with one group tag per splat.

    Arrays are treated as read-only after construction; operations that
    change splats return a new scene via :meth:`replace`.
    """

    means: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) unit quaternions
    scales: np.ndarray  # (N, 3)
    opacities: np.ndarray  # (N,)
    sh: np.ndarray  # (N, K, 3)
    groups: np.ndarray = None  # (N,) int codes into GROUPS
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.means)
        self.means = np.asarray(self.means, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        sh = np.asarray(self.sh, dtype=np.float64)
        if sh.ndim != 3 or sh.shape[0] != n or sh.shape[2] != 3:
            raise ValueError(f"sh must have shape (N, K, 3), got {sh.shape}")
        shlib.degree_from_count(sh.shape[1])
        self.sh = sh
        if self.groups is None:
            self.groups = np.zeros(n, dtype=np.int8)
        elif isinstance(self.groups, str):
            self.groups = np.full(n, GROUPS.index(self.groups), dtype=np.int8)
        else:
            g = np.asarray(self.groups)
            if g.dtype.kind in "US":
                g = np.array([GROUPS.index(str(x)) for x in g], dtype=np.int8)
            self.groups = np.broadcast_to(g.astype(np.int8), (n,)).copy()
        if np.any(self.scales <= 0):
            raise ValueError("splat scales must be strictly positive")
        if np.any((self.opacities <= 0) | (self.opacities >= 1)):
            raise ValueError("splat opacities must lie in (0, 1)")

    @classmethod
    def empty(cls, sh_degree=0):
        k = shlib.num_coeffs(sh_degree)
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, k, 3)))

    @classmethod
    def from_splats(cls, splats, group="scene"):
        splats = list(splats)
        if not splats:
            return cls.empty()
        return cls(
            np.stack([s.mean for s in splats]),
            np.stack([s.rotation for s in splats]),
            np.stack([s.scales for s in splats]),
            np.array([s.opacity for s in splats]),
            np.stack([s.sh_coeffs for s in splats]),
            np.full(len(splats), GROUPS.index(group), dtype=np.int8),
        )

    @classmethod
    def concat(cls, scenes):
        scenes = [s for s in scenes if s is not None]
        degree = max(s.sh_degree for s in scenes)
        k = shlib.num_coeffs(degree)
        padded = []
        for s in scenes:
            pad = np.zeros((len(s), k, 3))
            pad[:, : s.sh.shape[1]] = s.sh
            padded.append(pad)
        return cls(
            np.concatenate([s.means for s in scenes]),
            np.concatenate([s.rotations for s in scenes]),
            np.concatenate([s.scales for s in scenes]),
            np.concatenate([s.opacities for s in scenes]),
            np.concatenate(padded),
            np.concatenate([s.groups for s in scenes]),
        )

    def __len__(self):
        return len(self.means)

    def __getitem__(self, i):
        return GaussianSplat(
            self.means[i].copy(), self.rotations[i].copy(), self.scales[i].copy(),
            float(self.opacities[i]), self.sh[i].copy(),
        )

    @property
    def splats(self):
        return [self[i] for i in range(len(self))]

    @property
    def sh_degree(self):
        return shlib.degree_from_count(self.sh.shape[1])

    @property
    def bounds(self):
        if len(self) == 0:
            return np.zeros(3), np.zeros(3)
        return self.means.min(axis=0), self.means.max(axis=0)

    def group_mask(self, group):
        return self.groups == GROUPS.index(group)

    def subset(self, mask_or_index):
        idx = np.asarray(mask_or_index)
        return SplatScene(
            self.means[idx], self.rotations[idx], self.scales[idx],
            self.opacities[idx], self.sh[idx], self.groups[idx],
        )

    def select(self, *groups):
        mask = np.zeros(len(self), dtype=bool)
        for g in groups:
            mask |= self.group_mask(g)
        return self.subset(mask)

    def with_group(self, group):
        return self.replace(groups=np.full(len(self), GROUPS.index(group), dtype=np.int8))

    def replace(self, **changes):
        fields = dict(
            means=self.means, rotations=self.rotations, scales=self.scales,
            opacities=self.opacities, sh=self.sh, groups=self.groups,
        )
        fields.update(changes)
        return SplatScene(**fields)

    # geometry caches; arrays are never mutated in place so this is safe
    def rotation_matrices(self):
        if "rot" not in self._cache:
            self._cache["rot"] = quat_to_rotmat(self.rotations) if len(self) else np.zeros((0, 3, 3))
        return self._cache["rot"]

    def covariances(self):
        if "cov" not in self._cache:
            self._cache["cov"] = covariances(self.rotation_matrices(), self.scales)
        return self._cache["cov"]

    def precisions(self):
        if "prec" not in self._cache:
            self._cache["prec"] = precisions(self.rotation_matrices(), self.scales)
        return self._cache["prec"]

    def colors(self, view_dirs):
        return shlib.eval_sh_colors(self.sh, view_dirs)

    def colors_from(self, point):
        """Colors seen from ``point`` (direction point -> splat)."""
        d = self.means - np.asarray(point, dtype=np.float64)
        n = np.linalg.norm(d, axis=1, keepdims=True)
        d = np.where(n > 0, d / np.where(n > 0, n, 1.0), np.array([0.0, 0.0, 1.0]))
        return self.colors(d)

    def dc_colors(self):
        """View-independent part of the color (band 0 plus offset), unclamped."""
        return 0.5 + shlib.SH_C0 * self.sh[:, 0, :]


def _weights_and_means(splats):
    if isinstance(splats, SplatScene):
        return splats.opacities, splats.means
    splats = list(splats)
    if not splats:
        return np.zeros(0), np.zeros((0, 3))
    return np.array([s.opacity for s in splats]), np.stack([s.mean for s in splats])


def alpha_weighted_centroid(splats):
    alpha, means = _weights_and_means(splats)
    total = alpha.sum()
    if len(alpha) == 0 or total <= 0:
        raise DegenerateInputError("alpha-weighted centroid needs splats with positive opacity")
    return (alpha[:, None] * means).sum(axis=0) / total


def estimate_pseudo_normals(scene, neighbors=16, orient_ref=None, max_radius=None):
    """Per-splat unit normals from alpha/distance-weighted local PCA.

    The weighted neighbour covariance uses weights alpha_j * exp(-d^2 / 2h^2)
    with h the median neighbour distance of the query splat. Splats with
    fewer than 4 usable neighbours fall back to the rotation axis of their
    smallest scale. Normals are flipped to point away from ``orient_ref``
    (default: the alpha-weighted centroid of the scene).
    """
    n = len(scene)
    if n == 0:
        raise DegenerateInputError("pseudo-normals need a non-empty scene")
    means = scene.means
    if orient_ref is None:
        orient_ref = alpha_weighted_centroid(scene)
    orient_ref = np.asarray(orient_ref, dtype=np.float64)

    rot = scene.rotation_matrices()
    smallest = np.argmin(scene.scales, axis=1)
    normals = rot[np.arange(n), :, smallest].copy()

    k = min(neighbors, n - 1)
    if k >= 4:
        tree = cKDTree(means)
        dist, idx = tree.query(means, k=k + 1)
        dist, idx = dist[:, 1:], idx[:, 1:]
        valid = np.isfinite(dist)
        if max_radius is not None:
            valid &= dist <= max_radius
        idx = np.where(valid, idx, 0)
        h = np.array([np.median(d[v]) if v.any() else 1.0 for d, v in zip(dist, valid)])
        h = np.maximum(h, 1e-12)
        w = scene.opacities[idx] * np.exp(-(dist**2) / (2 * h[:, None] ** 2)) * valid
        wsum = w.sum(axis=1)
        usable = (valid.sum(axis=1) >= 4) & (wsum > 0)
        if usable.any():
            wu = w[usable] / wsum[usable, None]
            nb = means[idx[usable]]
            mu = np.einsum("nk,nkj->nj", wu, nb)
            d = nb - mu[:, None, :]
            cov = np.einsum("nk,nki,nkj->nij", wu, d, d)
            _, evecs = np.linalg.eigh(cov)
            normals[usable] = evecs[:, :, 0]

    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    away = means - orient_ref
    flip = np.einsum("ij,ij->i", normals, away) < 0
    normals[flip] *= -1
    return normals
