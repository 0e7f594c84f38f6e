"""Point-light estimation from photometric cues of scene splats."""

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from . import sh as shlib
from .splats import DegenerateInputError, alpha_weighted_centroid

EPS = 1e-6


@dataclass(frozen=True)
class PointLight:
    position: np.ndarray
    intensity: float
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "color", np.maximum(np.asarray(self.color, dtype=np.float64), 0.0))
        if not self.intensity >= 0:
            raise ValueError("light intensity must be >= 0")

    def to_json(self):
        return {
            "position": [float(x) for x in self.position],
            "intensity": float(self.intensity),
            "color": [float(x) for x in self.color],
        }

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["position"], dtype=np.float64), float(obj["intensity"]), np.array(obj["color"], dtype=np.float64))


@dataclass(frozen=True)
class LightCandidate:
    splat_index: int
    position: np.ndarray
    base_score: float
    peakness: float
    mean_luminance: float
    max_luminance: float
    angular_stability: float
    dc_dominance: float


def save_lights(lights, path):
    with open(path, "w") as fh:
        json.dump([light.to_json() for light in lights], fh, indent=2)


def load_lights(path):
    with open(path) as fh:
        return [PointLight.from_json(obj) for obj in json.load(fh)]


def view_points(center, count, radius=0.5):
    """Viewpoints on a small sphere around ``center``; 6 = octahedron vertices."""
    if count == 6:
        dirs = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64)
    else:
        i = np.arange(count) + 0.5
        z = 1.0 - 2.0 * i / count
        phi = np.pi * (1.0 + 5**0.5) * i
        r = np.sqrt(1.0 - z * z)
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return np.asarray(center, dtype=np.float64) + radius * dirs


def soft_clip(values, q=99.0):
    """Compress values above the q-th percentile with a tanh knee.

    Monotone (keeps the ordering of outliers) and bounded by twice the
    percentile level.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return values
    p = np.percentile(values, q)
    scale = max(abs(p), EPS)
    over = values > p
    out = values.copy()
    out[over] = p + scale * np.tanh((values[over] - p) / scale)
    return out


def candidate_cues(sh, means, viewpoints):
    """Raw photometric cues of each splat; arrays of shape (N,)."""
    d = means[:, None, :] - viewpoints[None, :, :]
    d /= np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-12)
    degree = shlib.degree_from_count(sh.shape[1])
    basis = shlib.sh_basis(d, degree)  # (N, V, K)
    rgb = np.maximum(0.5 + np.einsum("nvk,nkc->nvc", basis, sh), 0.0)
    lum = rgb @ shlib.LUMA  # (N, V)
    mean = lum.mean(axis=1)
    mx = lum.max(axis=1)
    stability = 1.0 / (1.0 + lum.std(axis=1) / (mean + EPS))
    # energy of the view-independent color vs total color energy over the sphere
    dc = np.linalg.norm(0.5 + shlib.SH_C0 * sh[:, 0, :], axis=1)
    rest = np.linalg.norm(sh[:, 1:, :].reshape(len(sh), -1), axis=1) / np.sqrt(4.0 * np.pi)
    dominance = dc / (np.sqrt(dc * dc + rest * rest) + EPS)
    return mean, mx, stability, dominance


def score_candidates(scene, roi_center, roi_radius, view_count=6, view_radius=0.5, indices=None):
    """Score splats as potential point emitters.

    Only splats within ``roi_radius`` of ``roi_center`` are scored, unless
    fewer than 64 qualify, in which case all splats are. ``indices`` limits
    the pool (e.g. to scene-group splats). Cues use color only, so the score
    is blind to splat size.
    """
    if view_count < 2:
        raise ValueError("view_count must be >= 2")
    pool = np.arange(len(scene)) if indices is None else np.asarray(indices)
    if len(pool) == 0:
        raise DegenerateInputError("light estimation needs a non-empty scene")
    dist = np.linalg.norm(scene.means[pool] - np.asarray(roi_center), axis=1)
    inside = pool[dist <= roi_radius]
    chosen = inside if len(inside) >= 64 else pool
    means = scene.means[chosen]
    mean, mx, stab, dom = candidate_cues(scene.sh[chosen], means, view_points(roi_center, view_count, view_radius))
    mean, mx, stab, dom = (soft_clip(c) for c in (mean, mx, stab, dom))
    score = np.maximum(mean * mx * stab * dom, 0.0)
    return [
        LightCandidate(int(i), means[j], float(score[j]), 0.0, float(mean[j]), float(mx[j]), float(stab[j]), float(dom[j]))
        for j, i in enumerate(chosen)
    ]


def compute_peakness(candidates, positions=None, radius=0.5):
    """Score relative to the mean score of neighbours within ``radius`` (self included)."""
    if not radius > 0:
        raise ValueError("peakness radius must be > 0")
    if len(candidates) == 0:
        return np.zeros(0)
    scores = np.array([c.base_score for c in candidates])
    if positions is None:
        positions = np.stack([c.position for c in candidates])
    tree = cKDTree(np.asarray(positions, dtype=np.float64))
    neighbours = tree.query_ball_point(positions, r=radius)
    local = np.array([scores[nb].mean() for nb in neighbours])
    return scores / (local + EPS)


def keep_tail(candidates, fraction=0.05, minimum=256):
    """High-score tail: the top ``fraction`` by base score (at least ``minimum``)."""
    n = len(candidates)
    keep = min(n, max(minimum, int(np.ceil(fraction * n))))
    order = sorted(range(n), key=lambda i: (-candidates[i].base_score, candidates[i].splat_index))
    return [candidates[i] for i in sorted(order[:keep])]


def select_lights(candidates, k, min_separation, reference_point, scene):
    """Greedy distance-based NMS over peakness * base_score."""
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-candidates[i].peakness * candidates[i].base_score, candidates[i].splat_index),
    )
    chosen = []
    ref = np.asarray(reference_point, dtype=np.float64)
    for i in order:
        cand = candidates[i]
        if all(np.linalg.norm(cand.position - c.position) >= min_separation for c in chosen):
            chosen.append(cand)
            if len(chosen) == k:
                break
    lights = []
    for cand in chosen:
        view = cand.position - ref
        nrm = np.linalg.norm(view)
        view = view / nrm if nrm > 0 else np.array([0.0, 0.0, -1.0])
        color = shlib.eval_sh_color(scene[cand.splat_index], view)
        lights.append(PointLight(cand.position.copy(), cand.base_score, np.maximum(color, 0.0)))
    return lights


def estimate_lights(scene, k=1, roi_radius=4.0, peak_radius=0.5, min_separation=1.0,
                    view_count=6, tail_fraction=0.05, tail_minimum=256, reference_point=None):
    """Full light estimation on a tagged scene.

    Emitters are searched among scene-group splats; the ROI and the color
    reference point default to the avatar's alpha-weighted centroid.
    """
    avatar = scene.select("avatar")
    if reference_point is None:
        reference_point = alpha_weighted_centroid(avatar) if len(avatar) else scene.means.mean(axis=0)
    pool = np.flatnonzero(scene.group_mask("scene"))
    cands = score_candidates(scene, reference_point, roi_radius, view_count, indices=pool)
    cands = keep_tail(cands, tail_fraction, tail_minimum)
    peak = compute_peakness(cands, radius=peak_radius)
    cands = [replace(c, peakness=float(p)) for c, p in zip(cands, peak)]
    return select_lights(cands, k, min_separation, reference_point, scene)

