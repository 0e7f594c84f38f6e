"""Lighting-consistency metrics (no ground truth) and pixel-space shadow metrics."""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares, linear_sum_assignment, linprog
from scipy.spatial.distance import cdist
from skimage.color import xyz2lab

from . import sh as shlib
from .splats import DegenerateInputError

# linear sRGB (D65) -> XYZ
_RGB2XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
DC_GAUGE = 2.0 * np.sqrt(np.pi)  # c_00 of a unit constant function


# ---------------------------------------------------------------------------
# factorized SH fit


@dataclass
class FactorizedFit:
    coeffs: np.ndarray  # ((L+1)^2,)
    scales: np.ndarray  # (N,) >= 0
    rounds: int
    objective: float


def _robust_coeffs(B, y, trim):
    """Huber fit of y ~ B c after dropping the ``trim`` fraction of largest LS residuals."""
    c0, *_ = np.linalg.lstsq(B, y, rcond=None)
    r = np.abs(y - B @ c0)
    keep = r <= np.quantile(r, 1.0 - trim) if trim > 0 else np.ones(len(y), bool)
    Bk, yk = B[keep], y[keep]
    rk = yk - Bk @ c0
    sigma = 1.4826 * np.median(np.abs(rk - np.median(rk)))
    f_scale = 1.345 * sigma if sigma > 0 else 1.0
    scale = np.abs(yk).max() if np.abs(yk).max() > 0 else 1.0
    # solve in units of max|y| so tolerances are scale-free
    sol = least_squares(lambda c: Bk @ c - yk / scale, c0 / scale, jac=lambda c: Bk, loss="huber",
                        f_scale=f_scale / scale, xtol=1e-14, ftol=1e-14, gtol=1e-14, method="trf")
    return sol.x * scale, keep


def fit_factorized_sh(luminance, normals, degree=3, trim=0.05, rounds=10, tol=1e-6):
    """Fit Y_i ~ a_i E(n_i; c) with E(n; c) = B(n) c.

    Alternates a trimmed Huber fit of c (scales fixed) with the closed-form
    scales a_i = max(0, Y_i / E_i). The gauge fixes c_00 = 2 sqrt(pi) (the
    lobe shape carries no magnitude), so the coefficients are invariant to a
    global luminance factor, which moves entirely into the scales.
    """
    y = np.asarray(luminance, dtype=np.float64).reshape(-1)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    k = shlib.num_coeffs(degree)
    if len(y) < k:
        raise DegenerateInputError(f"factorized fit of degree {degree} needs >= {k} splats, got {len(y)}")
    if not np.any(y > 0):
        raise DegenerateInputError("factorized fit needs non-zero luminance")
    B = shlib.sh_basis(n, degree)
    scales = np.ones(len(y))
    prev = np.inf
    c = np.zeros(k)
    done = 0
    for done in range(1, rounds + 1):
        c, _ = _robust_coeffs(B * scales[:, None], y, trim)
        e = B @ c
        scales = np.where(e > 1e-12, np.maximum(y / np.where(e > 1e-12, e, 1.0), 0.0), 0.0)
        obj = float(np.sum((y - scales * e) ** 2))
        if abs(prev - obj) <= tol * max(prev, 1e-300) or obj == 0.0:
            break
        prev = obj
    if c[0] <= 0:
        raise DegenerateInputError("factorized fit has a non-positive DC term")
    g = DC_GAUGE / c[0]
    c = c * g
    scales = scales / g
    return FactorizedFit(c, scales, done, float(np.sum((y - scales * (B @ c)) ** 2)))


def paa_y(c_avatar, c_scene):
    return float(np.abs(np.asarray(c_avatar) - np.asarray(c_scene)).sum())


def apf_y(c_scene, normals, luminance):
    """Mean absolute residual of the affine calibration Y ~ s E + b."""
    y = np.asarray(luminance, dtype=np.float64).reshape(-1)
    if len(y) < 2:
        raise DegenerateInputError("APF-Y needs at least 2 avatar splats")
    c = np.asarray(c_scene, dtype=np.float64)
    e = shlib.sh_basis(np.asarray(normals, dtype=np.float64), shlib.degree_from_count(len(c))) @ c
    X = np.stack([e, np.ones_like(e)], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(np.mean(np.abs(y - X @ coef)))


# ---------------------------------------------------------------------------
# chromaticity transport


def linear_rgb_to_lab(rgb):
    rgb = np.maximum(np.asarray(rgb, dtype=np.float64).reshape(-1, 3), 0.0)
    return xyz2lab(rgb @ _RGB2XYZ.T, illuminant="D65", observer="2")


def _stratified(n, k, rng):
    edges = np.linspace(0, n, k + 1)
    lo = np.floor(edges[:-1]).astype(int)
    hi = np.maximum(np.floor(edges[1:]).astype(int), lo + 1)
    return lo + (rng.random(k) * (hi - lo)).astype(int)


def emd(a, b, max_points=2000, seed=0):
    """1-Wasserstein distance between uniform point clouds in the plane."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise DegenerateInputError("EMD needs non-empty point sets")
    rng = np.random.default_rng(seed)
    if len(a) == len(b) and len(a) <= max_points:
        cost = cdist(a, b)
        r, c = linear_sum_assignment(cost)
        return float(cost[r, c].mean())
    if len(a) * len(b) <= 40_000:
        return _transport_lp(a, b)
    k = min(len(a), len(b), max_points)
    a = a[_stratified(len(a), k, rng)]
    b = b[_stratified(len(b), k, rng)]
    cost = cdist(a, b)
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean())


def _transport_lp(a, b):
    n, m = len(a), len(b)
    cost = cdist(a, b).reshape(-1)
    rows = np.zeros((n, n * m))
    for i in range(n):
        rows[i, i * m:(i + 1) * m] = 1.0
    cols = np.zeros((m, n * m))
    for j in range(m):
        cols[j, j::m] = 1.0
    A_eq = np.vstack([rows, cols])
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:  # pragma: no cover
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def ncm_ab(avatar_rgb, scene_rgb, max_points=2000, seed=0):
    """EMD between the a*b* chromaticities of two linear-rgb color sets."""
    return emd(linear_rgb_to_lab(avatar_rgb)[:, 1:], linear_rgb_to_lab(scene_rgb)[:, 1:], max_points, seed)


@dataclass
class LightingScores:
    paa_y: float
    apf_y: float
    ncm_ab: float


@dataclass
class LightingReport:
    orig: LightingScores
    relit: LightingScores
    delta: LightingScores = field(init=False)

    def __post_init__(self):
        self.delta = LightingScores(*(getattr(self.orig, f) - getattr(self.relit, f) for f in ("paa_y", "apf_y", "ncm_ab")))

    def to_json(self):
        return asdict(self)


def lighting_scores(avatar, avatar_normals, neighborhood, scene_normals, degree=3, seed=0):
    rgb_a = np.maximum(avatar.dc_colors(), 0.0)
    rgb_s = np.maximum(neighborhood.dc_colors(), 0.0)
    y_a = shlib.luminance(rgb_a)
    y_s = shlib.luminance(rgb_s)
    c_s = fit_factorized_sh(y_s, scene_normals, degree).coeffs
    c_a = fit_factorized_sh(y_a, avatar_normals, degree).coeffs
    return LightingScores(paa_y(c_a, c_s), apf_y(c_s, avatar_normals, y_a), ncm_ab(rgb_a, rgb_s, seed=seed))


# ---------------------------------------------------------------------------
# shadow mattes


@dataclass
class ShadowReport:
    sae: float  # None when the pseudo-GT shadow region is empty
    sm_iou: float
    bf: float
    tau: float = 0.1
    boundary_px: int = 2

    def to_json(self):
        return asdict(self)


def boundary(mask):
    """One-pixel morphological gradient (dilation minus erosion) of a binary mask."""
    st = ndimage.generate_binary_structure(2, 1)
    return ndimage.binary_dilation(mask, st) & ~ndimage.binary_erosion(mask, st, border_value=1)


def boundary_f(pred, gt, tol=2):
    bp, bg = boundary(pred), boundary(gt)
    if not bp.any() and not bg.any():
        return 1.0
    if not bp.any() or not bg.any():
        return 0.0
    dist_to_g = ndimage.distance_transform_edt(~bg)
    dist_to_p = ndimage.distance_transform_edt(~bp)
    precision = float(np.mean(dist_to_g[bp] <= tol))
    recall = float(np.mean(dist_to_p[bg] <= tol))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def shadow_metrics(S, S_dagger, tau=0.1, boundary_px=2):
    S = np.asarray(S, dtype=np.float64)
    G = np.asarray(S_dagger, dtype=np.float64)
    if S.shape != G.shape:
        raise ValueError(f"matte shapes differ: {S.shape} vs {G.shape}")
    omega = G > tau
    sae = float(np.mean(np.abs(S - G)[omega])) if omega.any() else None
    m, mg = S > tau, omega
    union = np.count_nonzero(m | mg)
    iou = 1.0 if union == 0 else np.count_nonzero(m & mg) / union
    return ShadowReport(sae, float(iou), boundary_f(m, mg, boundary_px), tau, boundary_px)
