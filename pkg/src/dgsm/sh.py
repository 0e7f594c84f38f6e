"""Real spherical harmonics up to degree 3.

Basis ordering and signs follow the convention used by 3DGS splat files, so
coefficients read from a splat PLY evaluate to the same colors here. The basis
is orthonormal over the sphere: the integral of Y_k * Y_l is delta_kl.
"""

import numpy as np

MAX_DEGREE = 3

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

# Rec.709 luminance weights on linear rgb
LUMA = np.array([0.2126, 0.7152, 0.0722])


def num_coeffs(degree):
    return (degree + 1) ** 2


def degree_from_count(k):
    d = int(round(np.sqrt(k))) - 1
    if d < 0 or num_coeffs(d) != k:
        raise ValueError(f"{k} is not a valid SH coefficient count")
    return d


def sh_basis(dirs, degree):
    """Evaluate the real SH basis at unit directions.

    Parameters
    ----------
    dirs : array_like, shape (..., 3)
    degree : int in [0, 3]

    Returns
    -------
    ndarray, shape (..., (degree+1)**2)
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_DEGREE}], got {degree}")
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (num_coeffs(degree),))
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def eval_sh_colors(sh, dirs):
    """Splat colors for per-splat view directions.

    ``sh`` has shape (N, K, 3) and ``dirs`` (N, 3). Returns (N, 3) linear rgb
    with the 0.5 DC offset applied and clamped at zero.
    """
    sh = np.asarray(sh, dtype=np.float64)
    degree = degree_from_count(sh.shape[-2])
    basis = sh_basis(dirs, degree)
    return np.maximum(0.5 + np.einsum("...k,...kc->...c", basis, sh), 0.0)


def eval_sh_color(splat, view_dir):
    """Color of a single splat seen along ``view_dir`` (unit vector)."""
    sh = np.asarray(splat.sh_coeffs, dtype=np.float64)
    return eval_sh_colors(sh[None], np.asarray(view_dir, dtype=np.float64)[None])[0]


def dc_from_rgb(rgb):
    """Band-0 coefficient that renders as ``rgb`` (inverse of the DC offset)."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def scale_sh(sh, factor):
    """Rescale SH so the rendered (pre-clamp) color is multiplied by ``factor``.

    ``factor`` broadcasts against the channel axis: a scalar per splat with
    shape (N, 1) or per-channel (N, 3). The DC coefficient absorbs the 0.5
    offset so that 0.5 + sum(c'Y) == factor * (0.5 + sum(cY)) exactly.
    """
    sh = np.asarray(sh, dtype=np.float64)
    f = np.asarray(factor, dtype=np.float64)
    out = sh * f[..., None, :]
    out[..., 0, :] += (f - 1.0) * 0.5 / SH_C0
    return out


def luminance(rgb):
    return np.asarray(rgb, dtype=np.float64) @ LUMA
