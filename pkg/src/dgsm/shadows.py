"""Receiver-side shadow queries: footprint sampling of atlases and color attenuation."""

from dataclasses import dataclass

import numpy as np

from . import sh as shlib
from .atlas import sample
from .splats import quat_to_rotmat

KINDS = ("center", "stencil", "mc")
_CHUNK = 1 << 16  # lookup points per batch


@dataclass(frozen=True)
class FootprintMode:
    kind: str = "mc"
    delta: float = 1.0  # stencil offset in standard deviations
    n: int = 32  # Monte Carlo samples
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"footprint kind must be one of {KINDS}, got {self.kind!r}")
        if not self.delta > 0:
            raise ValueError("stencil delta must be > 0")
        if self.n < 1:
            raise ValueError("Monte Carlo sample count must be >= 1")

    @classmethod
    def parse(cls, text, seed=0):
        """'center', 'stencil', 'stencil:0.5' (delta) or 'mc:N'."""
        kind, _, arg = str(text).partition(":")
        kind = kind.strip().lower()
        if kind == "mc":
            return cls("mc", n=int(arg) if arg else 32, seed=seed)
        if kind == "stencil":
            return cls("stencil", delta=float(arg) if arg else 1.0, seed=seed)
        if kind == "center" and not arg:
            return cls("center", seed=seed)
        raise ValueError(f"cannot parse footprint mode {text!r}")

    def __str__(self):
        return {"center": "center", "stencil": f"stencil:{self.delta:g}", "mc": f"mc:{self.n}"}[self.kind]


def _stencil(delta):
    z = np.zeros((7, 3))
    for axis in range(3):
        z[1 + 2 * axis, axis] = delta
        z[2 + 2 * axis, axis] = -delta
    w = np.exp(-0.5 * np.sum(z * z, axis=1))
    return z, w / w.sum()


def footprint_offsets(mode, count=1):
    """Standard-space offsets z (count, M, 3) and weights (M,).

    Monte Carlo draws are independent per splat but come from one seeded
    stream, so splat i always sees the same samples for a given seed.
    """
    if mode.kind == "center":
        return np.zeros((count, 1, 3)), np.ones(1)
    if mode.kind == "stencil":
        z, w = _stencil(mode.delta)
        return np.broadcast_to(z, (count, 7, 3)), w
    rng = np.random.default_rng(mode.seed)
    return rng.standard_normal((count, mode.n, 3)), np.full(mode.n, 1.0 / mode.n)


def footprint_points(splat, mode):
    """Lookup points mu + R (s * z) and their weights for one splat."""
    z, w = footprint_offsets(mode, 1)
    rot = quat_to_rotmat(splat.rotation)
    pts = np.asarray(splat.mean) + (z[0] * np.asarray(splat.scales)) @ rot.T
    return pts, w


def _lookup(atlas, pts):
    rel = pts - atlas.light.position
    dist = np.linalg.norm(rel, axis=-1)
    safe = np.where(dist > 0, dist, 1.0)
    dirs = np.where(dist[..., None] > 0, rel / safe[..., None], np.array([0.0, 0.0, 1.0]))
    return sample(atlas, dirs.reshape(-1, 3), dist.reshape(-1)).reshape(dist.shape)


def receiver_transmittance(atlas, splat, mode=FootprintMode()):
    pts, w = footprint_points(splat, mode)
    return float(np.dot(w, _lookup(atlas, pts)))


def receiver_transmittances(atlas, scene, mode=FootprintMode()):
    """Footprint-averaged transmittance of every splat in ``scene`` (N,)."""
    n = len(scene)
    if n == 0:
        return np.zeros(0)
    z, w = footprint_offsets(mode, n)
    rot = scene.rotation_matrices()
    out = np.empty(n)
    step = max(1, _CHUNK // len(w))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        local = z[lo:hi] * scene.scales[lo:hi, None, :]
        pts = scene.means[lo:hi, None, :] + np.einsum("nij,nmj->nmi", rot[lo:hi], local)
        out[lo:hi] = _lookup(atlas, pts) @ w
    return out


def scene_transmittance(scene, atlases, mode=FootprintMode()):
    """Product over lights of the per-light footprint transmittance."""
    t = np.ones(len(scene))
    for atlas in atlases:
        t *= receiver_transmittances(atlas, scene, mode)
    return t


def apply_shadows(scene, atlases, mode=FootprintMode(), return_transmittance=False):
    """Attenuate scene-group splat colors by their combined transmittance.

    All SH bands are scaled so the rendered color becomes T * color from
    every view direction. Splats with T == 1 are left bit-identical, as are
    avatar and object splats.
    """
    if not atlases:
        raise ValueError("apply_shadows needs at least one atlas")
    receivers = np.flatnonzero(scene.group_mask("scene"))
    t_all = np.ones(len(scene))
    t_all[receivers] = scene_transmittance(scene.subset(receivers), atlases, mode)
    dim = np.flatnonzero(t_all < 1.0)
    sh = scene.sh.copy()
    sh[dim] = shlib.scale_sh(scene.sh[dim], t_all[dim, None])
    out = scene.replace(sh=sh)
    return (out, t_all) if return_transmittance else out


def dense_footprint_reference(atlas, splat, n=10_000, seed=12345):
    """High-sample footprint average used as the reference value in tests."""
    return receiver_transmittance(atlas, splat, FootprintMode("mc", n=n, seed=seed))

