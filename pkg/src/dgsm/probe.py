"""Environment probe at the avatar and SH-based relighting of avatar splats.

A cubemap rendered from the scene is fitted with real SH by weighted ridge
least squares. Per-splat color scales come from contracting the fitted
radiance with a clamped cosine lobe around the splat's pseudo-normal.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import sh as shlib
from .atlas import cube_face_coords, cube_pixel_directions
from .images import write_pfm
from .render import composite
from .splats import DegenerateInputError, alpha_weighted_centroid


@dataclass
class CubemapSamples:
    Y: np.ndarray  # (N, 3) linear rgb radiance
    D: np.ndarray  # (N, 3) unit directions
    w: np.ndarray  # (N,) solid angles in sr
    face_res: int = 0

    def image(self):
        """Face-major (6F, F, 3) view of the radiance."""
        f = self.face_res
        return self.Y.reshape(6 * f, f, 3)


def solid_angle_weight(x, y, face_res):
    """Solid angle of a cube-face texel at face-local (x, y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return (2.0 / face_res) ** 2 * (1.0 + x * x + y * y) ** -1.5


def cubemap_directions(face_res):
    """Texel directions (6F*F, 3) and solid-angle weights (6F*F,)."""
    d = cube_pixel_directions(face_res).reshape(-1, 3)
    _, s, t = cube_face_coords(d)
    return d, solid_angle_weight(s, t, face_res)


def render_cubemap(scene, position, face_res=64, exclude_avatar=True, near=1e-3):
    """Six 90-degree faces of the scene seen from ``position``; black background."""
    if face_res < 4:
        raise ValueError("face_res must be >= 4")
    if exclude_avatar:
        scene = scene.select("scene", "object")
    dirs = cube_pixel_directions(face_res)
    img, _ = composite(scene, position, dirs, near=near)
    D, w = cubemap_directions(face_res)
    return CubemapSamples(img.reshape(-1, 3), D, w, face_res)


def probe_position(avatar, chest=0.4):
    """Avatar centroid raised by ``chest`` of the way to the top of the avatar."""
    c = alpha_weighted_centroid(avatar)
    top = float(avatar.means[:, 2].max())
    return c + np.array([0.0, 0.0, chest * (top - c[2])])


@dataclass
class ShProbe:
    degree: int
    coeffs: np.ndarray  # (K, 3)
    lam: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (shlib.num_coeffs(self.degree), 3):
            raise ValueError(f"probe of degree {self.degree} needs {(shlib.num_coeffs(self.degree), 3)} coefficients")
        if not np.isfinite(self.coeffs).all():
            raise ValueError("probe coefficients must be finite")

    def to_json(self):
        return {"degree": self.degree, "lambda": self.lam, "coeffs": self.coeffs.T.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(int(obj["degree"]), np.array(obj["coeffs"], dtype=np.float64).T, float(obj["lambda"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def fit_sh(samples, degree=3, lam=None):
    """Solve (B^T W B + lam I) A = B^T W Y; ``lam=None`` uses 1e-6 tr(B^T W B)/K."""
    k = shlib.num_coeffs(degree)
    if len(samples.D) < k:
        raise DegenerateInputError(f"need at least {k} samples for degree {degree}")
    B = shlib.sh_basis(samples.D, degree)
    BW = B * samples.w[:, None]
    gram = BW.T @ B
    rhs = BW.T @ samples.Y
    if lam is None:
        lam = 1e-6 * np.trace(gram) / k
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    system = gram + lam * np.eye(k)
    try:
        cho = scipy.linalg.cho_factor(system)
        A = scipy.linalg.cho_solve(cho, rhs)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("SH normal equations are singular; use lambda > 0") from None
    resid = np.linalg.norm(system @ A - rhs)
    if not np.isfinite(A).all() or resid > 1e-6 * (1.0 + np.linalg.norm(rhs)):
        raise np.linalg.LinAlgError(f"SH solve is ill-conditioned (residual {resid:.3g}); use lambda > 0")
    return ShProbe(degree, A, float(lam))


def eval_sh_env(probe, dirs):
    return shlib.sh_basis(dirs, probe.degree) @ probe.coeffs


@dataclass(frozen=True)
class TransferParams:
    q: float = 1.0
    n_theta: int = 64
    n_phi: int = 128
    s_max: float = 4.0
    eps: float = 1e-6
    gamma: float = 1.0

    def __post_init__(self):
        if self.q < 0 or self.s_max <= 0 or self.eps <= 0 or self.gamma < 0:
            raise ValueError(f"invalid transfer parameters {self}")
        if min(self.n_theta, self.n_phi) < 1:
            raise ValueError("transfer grid must be non-empty")


def latlong_grid(n_theta, n_phi):
    """Cell-centered lat-long directions (M, 3) and weights proportional to sin(theta), sum 4 pi."""
    theta = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    phi = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    d = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1).reshape(-1, 3)
    w = np.sin(th).reshape(-1)
    return d, w * (4.0 * np.pi / w.sum())


def lobe(cosines, q):
    if q == 0:
        return (cosines > 0).astype(np.float64)
    return np.maximum(cosines, 0.0) ** q


def contract(radiance, dirs, weights, normals, q, eps, s_max, chunk=2048):
    """Normalized lobe-weighted average of ``radiance`` (M, 3) for each normal."""
    normals = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    wl = weights[:, None] * np.maximum(radiance, 0.0)
    out = np.empty((len(normals), 3))
    for lo in range(0, len(normals), chunk):
        S = lobe(normals[lo:lo + chunk] @ dirs.T, q)  # (n, M)
        out[lo:lo + chunk] = (S @ wl) / (S @ weights + eps)[:, None]
    return np.clip(out, 0.0, s_max)


def relight_scales(probe, normals, params=TransferParams()):
    """Per-channel scales s(n) in [0, s_max]^3; one row per normal."""
    dirs, w = latlong_grid(params.n_theta, params.n_phi)
    L = eval_sh_env(probe, dirs)
    return contract(L, dirs, w, normals, params.q, params.eps, params.s_max)


def apply_relight(avatar, normals, probe, params=TransferParams()):
    """Scale every splat's rendered color by gamma * s(n), per channel."""
    if len(normals) != len(avatar):
        raise ValueError("normals must align with the avatar splats")
    if len(avatar) == 0:
        return avatar
    s = params.gamma * relight_scales(probe, normals, params)
    return avatar.replace(sh=shlib.scale_sh(avatar.sh, s))


def export_latlong(probe, path, width=256):
    """Write the fitted environment as a (width/2, width) lat-long PFM."""
    h = width // 2
    d, _ = latlong_grid(h, width)
    img = eval_sh_env(probe, d).reshape(h, width, 3)
    write_pfm(path, img)
    return img
