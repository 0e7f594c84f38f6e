"""Closed-form optical depth of rays through Gaussian absorption mixtures.

Absorption field: sigma(x) = sum_i beta_i exp(-1/2 (x - mu_i)^T A_i (x - mu_i)).
Along r(s) = o + s d each term becomes exp(-1/2 (a s^2 + 2 b s + c)) whose
integral over [t0, t1] is an erf difference.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

SQRT_2PI = math.sqrt(2.0 * math.pi)
# both erf arguments beyond this with equal sign: the difference is < 1e-17
ERF_SATURATION = 6.0
# exp(-60) ~ 1e-26: any contribution is far below double resolution of T
EXPONENT_FLOOR = -60.0


class InvalidQuadraticError(ValueError):
    pass


@dataclass(frozen=True)
class RayQuadratic:
    a: float
    b: float
    c: float

    @property
    def residual(self):
        """Completed-square remainder c - b^2/a (>= 0 up to rounding)."""
        return self.c - self.b * self.b / self.a


class AbsorptionKind(enum.Enum):
    SIMPLE = "simple"
    TRACE_AVG = "traceavg"
    MASS = "mass"
    DIAG = "diag"


@dataclass(frozen=True)
class AbsorptionMode:
    """Opacity -> absorption mapping plus the global strength ``kappa``.

    ``matrix`` picks how the symbol A is read for TRACE_AVG and MASS:
    "precision" or "covariance". ``None`` keeps the per-mode default
    (precision for TRACE_AVG, covariance for MASS, i.e. unit-mass).
    """

    kind: AbsorptionKind = AbsorptionKind.TRACE_AVG
    kappa: float = 1.0
    matrix: str = None

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", AbsorptionKind(self.kind.lower()))
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if self.matrix not in (None, "precision", "covariance"):
            raise ValueError(f"matrix reading must be 'precision' or 'covariance', got {self.matrix!r}")

    def reading(self):
        if self.matrix is not None:
            return self.matrix
        return "precision" if self.kind is AbsorptionKind.TRACE_AVG else "covariance"


def ray_quadratic(mean, precision, origin, direction):
    mean = np.asarray(mean, dtype=np.float64)
    a_mat = np.asarray(precision, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    delta = np.asarray(origin, dtype=np.float64) - mean
    ad = a_mat @ d
    return RayQuadratic(float(d @ ad), float(ad @ delta), float(delta @ a_mat @ delta))


def ray_quadratics(means, precisions, origin, direction):
    """Vectorised (a, b, c) for many Gaussians and one ray."""
    d = np.asarray(direction, dtype=np.float64)
    delta = np.asarray(origin, dtype=np.float64) - np.asarray(means, dtype=np.float64)
    ad = np.einsum("nij,j->ni", precisions, d)
    a = ad @ d
    b = np.einsum("ni,ni->n", ad, delta)
    c = np.einsum("ni,nij,nj->n", delta, precisions, delta)
    return a, b, c


def _erf_diff(x1, x0):
    """erf(x1) - erf(x0) for x1 >= x0 without cancellation in the tails."""
    x1, x0 = np.broadcast_arrays(np.asarray(x1, dtype=np.float64), np.asarray(x0, dtype=np.float64))
    out = np.empty(x1.shape)
    pos = x0 >= 0
    neg = x1 <= 0
    mid = ~(pos | neg)
    out[pos] = erfc(x0[pos]) - erfc(x1[pos])
    out[neg] = erfc(-x1[neg]) - erfc(-x0[neg])
    out[mid] = 2.0 - erfc(x1[mid]) - erfc(-x0[mid])
    return out


def segment_depths(a, b, c, beta, t0, t1):
    """Vectorised optical depth of each Gaussian over [t0, t1] (broadcasting)."""
    a, b, c, beta, t0, t1 = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (a, b, c, beta, t0, t1)))
    if np.any(a <= 0):
        raise InvalidQuadraticError("ray quadratic needs a > 0 (precision must be SPD)")
    resid = np.maximum(c - b * b / a, 0.0)
    expo = -0.5 * resid
    k = np.sqrt(0.5 * a)
    shift = b / a
    x1 = k * (t1 + shift)
    x0 = k * (t0 + shift)
    out = np.zeros(a.shape)
    live = (expo >= EXPONENT_FLOOR) & (beta > 0)
    live &= ~(((x0 > ERF_SATURATION) & (x1 > ERF_SATURATION)) | ((x0 < -ERF_SATURATION) & (x1 < -ERF_SATURATION)))
    if live.any():
        pref = beta[live] * np.sqrt(np.pi / (2.0 * a[live])) * np.exp(expo[live])
        out[live] = pref * _erf_diff(x1[live], x0[live])
    return out


def segment_depth(q, beta, t0, t1):
    """Optical depth of one Gaussian term between ray parameters t0 <= t1."""
    if q.a <= 0:
        raise InvalidQuadraticError(f"ray quadratic needs a > 0, got a={q.a}")
    if not 0 <= t0 <= t1:
        raise ValueError(f"need 0 <= t0 <= t1, got t0={t0}, t1={t1}")
    return float(segment_depths(q.a, q.b, q.c, beta, t0, t1))


def mixture_depth(means, precisions, betas, origin, direction, t, t0=0.0):
    """Optical depth of the mixture along one ray from t0 to t."""
    means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    if len(means) == 0:
        return 0.0
    if t < 0:
        raise ValueError("t must be >= 0")
    a, b, c = ray_quadratics(means, np.asarray(precisions, dtype=np.float64).reshape(-1, 3, 3), origin, direction)
    return float(segment_depths(a, b, c, betas, t0, t).sum())


def transmittance(tau):
    return np.exp(-np.asarray(tau, dtype=np.float64))


def opacity_to_absorption(alpha, cov, mode=AbsorptionMode()):
    """Absorption amplitude beta (1/m) for opacity ``alpha`` and covariance ``cov``.

    ``alpha`` may be an array with ``cov`` a matching stack of Covariance3-like
    objects; see :func:`absorption_betas` for the vectorised splat path.
    """
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise ValueError(f"opacity must lie in (0, 1), got {alpha}")
    sigma = np.asarray(cov.sigma, dtype=np.float64)
    precision = np.asarray(cov.precision, dtype=np.float64)
    scales = np.sqrt(np.asarray(cov.eigenvalues, dtype=np.float64))
    return float(_betas(np.array([alpha]), sigma[None], precision[None], scales[None], mode)[0])


def absorption_betas(scene, mode=AbsorptionMode()):
    """Per-splat beta for a whole SplatScene."""
    if len(scene) == 0:
        return np.zeros(0)
    return _betas(scene.opacities, scene.covariances(), scene.precisions(), scene.scales, mode)


def _betas(alpha, sigma, precision, scales, mode):
    tau_star = -np.log1p(-alpha)
    kind = mode.kind
    if kind is AbsorptionKind.SIMPLE:
        beta = tau_star
    elif kind is AbsorptionKind.TRACE_AVG:
        m = precision if mode.reading() == "precision" else sigma
        beta = tau_star * np.sqrt(np.trace(m, axis1=-2, axis2=-1) / 3.0) / SQRT_2PI
    elif kind is AbsorptionKind.MASS:
        m = precision if mode.reading() == "precision" else sigma
        beta = tau_star / ((2.0 * np.pi) ** 1.5 * np.sqrt(np.linalg.det(m)))
    elif kind is AbsorptionKind.DIAG:
        beta = tau_star / ((2.0 * np.pi) ** 1.5 * np.prod(scales, axis=-1))
    else:  # pragma: no cover
        raise ValueError(kind)
    return mode.kappa * beta
