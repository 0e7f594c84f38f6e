"""Per-ray splat compositing for rays sharing one origin (probe faces, pinhole cameras).

Each splat contributes at its peak response along the ray: t* = -b/a with
alpha_ray = alpha exp(-1/2 (c - b^2/a)). Contributions are sorted front to
back and alpha-composited until the accumulated opacity reaches 0.999.
"""

import math

import numba
import numpy as np

from .sh import SH_C0, SH_C1, SH_C2, SH_C3

MIN_ALPHA = 1.0 / 255.0
SATURATION = 0.999


@numba.njit(cache=True, inline="always")
def _sh_rgb(sh, j, x, y, z, out):
    k = sh.shape[1]
    for c in range(3):
        v = SH_C0 * sh[j, 0, c]
        if k > 1:
            v += -SH_C1 * y * sh[j, 1, c] + SH_C1 * z * sh[j, 2, c] - SH_C1 * x * sh[j, 3, c]
        if k > 4:
            xx, yy, zz = x * x, y * y, z * z
            v += (SH_C2[0] * x * y * sh[j, 4, c] + SH_C2[1] * y * z * sh[j, 5, c]
                  + SH_C2[2] * (2.0 * zz - xx - yy) * sh[j, 6, c]
                  + SH_C2[3] * x * z * sh[j, 7, c] + SH_C2[4] * (xx - yy) * sh[j, 8, c])
            if k > 9:
                v += (SH_C3[0] * y * (3.0 * xx - yy) * sh[j, 9, c]
                      + SH_C3[1] * x * y * z * sh[j, 10, c]
                      + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[j, 11, c]
                      + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[j, 12, c]
                      + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[j, 13, c]
                      + SH_C3[5] * z * (xx - yy) * sh[j, 14, c]
                      + SH_C3[6] * x * (xx - 3.0 * yy) * sh[j, 15, c])
        out[c] = max(0.0, 0.5 + v)


@numba.njit(cache=True, parallel=True)
def _composite(dirs, ray_group, group_off, group_items, origin, means, precs, opac,
               sh, values, use_sh, near, out, acc_alpha):
    n_ray = dirs.shape[0]
    n_ch = out.shape[1]
    for r in numba.prange(n_ray):
        d0, d1, d2 = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        g = ray_group[r]
        lo, hi = group_off[g], group_off[g + 1]
        ts = np.empty(hi - lo)
        al = np.empty(hi - lo)
        idx = np.empty(hi - lo, dtype=np.int64)
        m = 0
        for jj in range(lo, hi):
            j = group_items[jj]
            e0 = origin[0] - means[j, 0]
            e1 = origin[1] - means[j, 1]
            e2 = origin[2] - means[j, 2]
            A = precs[j]
            ad0 = A[0, 0] * d0 + A[0, 1] * d1 + A[0, 2] * d2
            ad1 = A[1, 0] * d0 + A[1, 1] * d1 + A[1, 2] * d2
            ad2 = A[2, 0] * d0 + A[2, 1] * d1 + A[2, 2] * d2
            a = ad0 * d0 + ad1 * d1 + ad2 * d2
            if a <= 0.0:
                continue
            b = ad0 * e0 + ad1 * e1 + ad2 * e2
            t = -b / a
            if t <= near:
                continue
            c = (e0 * (A[0, 0] * e0 + A[0, 1] * e1 + A[0, 2] * e2)
                 + e1 * (A[1, 0] * e0 + A[1, 1] * e1 + A[1, 2] * e2)
                 + e2 * (A[2, 0] * e0 + A[2, 1] * e1 + A[2, 2] * e2))
            resid = max(c - b * b / a, 0.0)
            alpha = opac[j] * math.exp(-0.5 * resid)
            if alpha < MIN_ALPHA:
                continue
            ts[m] = t
            al[m] = alpha
            idx[m] = j
            m += 1
        # stable sort keeps the candidate (ascending index) order for ties
        order = np.argsort(ts[:m], kind="mergesort")
        trans = 1.0
        rgb = np.empty(3)
        for q in range(m):
            i = order[q]
            w = trans * al[i]
            j = idx[i]
            if use_sh:
                _sh_rgb(sh, j, d0, d1, d2, rgb)
                for ch in range(n_ch):
                    out[r, ch] += w * rgb[ch]
            else:
                for ch in range(n_ch):
                    out[r, ch] += w * values[j, ch]
            trans *= 1.0 - al[i]
            if 1.0 - trans >= SATURATION:
                break
        acc_alpha[r] = 1.0 - trans


def _tile_groups(shape, tile):
    """Group id of each ray when rays are laid out on an image grid (..., H, W)."""
    h, w = shape[-2], shape[-1]
    rows, cols = np.meshgrid(np.arange(h) // tile, np.arange(w) // tile, indexing="ij")
    tiles_x = -(-w // tile)
    gid = rows * tiles_x + cols
    lead = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
    per = int(gid.max()) + 1
    return (np.arange(lead)[:, None, None] * per + gid[None]).reshape(-1)


def _cull(dirs, group, origin, means, scales, opac):
    """Candidate splats per ray group from cone/cone overlap tests."""
    n_groups = int(group.max()) + 1 if len(group) else 0
    rel = means - origin
    dist = np.linalg.norm(rel, axis=1)
    reach = np.sqrt(2.0 * np.log(np.maximum(opac / MIN_ALPHA, 1.0))) * scales.max(axis=1)
    visible = opac >= MIN_ALPHA
    inside = dist <= reach
    u = rel / np.where(dist > 0, dist, 1.0)[:, None]
    ang = np.where(inside, np.pi, np.arcsin(np.clip(reach / np.where(dist > 0, dist, 1.0), 0.0, 1.0)))

    # group cone: normalized mean direction and max angular deviation
    centers = np.zeros((n_groups, 3))
    np.add.at(centers, group, dirs)
    centers /= np.maximum(np.linalg.norm(centers, axis=1, keepdims=True), 1e-12)
    dev = np.arccos(np.clip(np.einsum("ij,ij->i", dirs, centers[group]), -1.0, 1.0))
    half = np.zeros(n_groups)
    np.maximum.at(half, group, dev)
    half += 1e-6

    live = np.flatnonzero(visible)
    counts = np.zeros(n_groups, dtype=np.int64)
    chunks = []
    step = max(1, 4_000_000 // max(len(live), 1))
    for g0 in range(0, n_groups, step):
        g1 = min(n_groups, g0 + step)
        cosang = np.clip(centers[g0:g1] @ u[live].T, -1.0, 1.0)
        hit = np.arccos(cosang) <= half[g0:g1, None] + ang[live][None, :]
        gi, si = np.nonzero(hit)
        counts[g0:g1] = np.bincount(gi, minlength=g1 - g0)
        chunks.append(live[si])
    items = np.concatenate(chunks) if chunks else np.zeros(0, np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return offsets.astype(np.int64), items.astype(np.int64)


def composite(scene, origin, dirs, values=None, near=1e-3, tile=8, background=0.0):
    """Composite ``scene`` along rays from ``origin``.

    ``dirs`` is (..., H, W, 3) or (N, 3) of unit vectors. ``values`` (N, C)
    replaces SH color evaluation (used for shadow-strength mattes). Returns
    (image (..., C), accumulated alpha (...)).
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    shape = dirs.shape[:-1]
    flat = np.ascontiguousarray(dirs.reshape(-1, 3))
    n_ch = 3 if values is None else np.asarray(values).reshape(len(scene), -1).shape[1]
    out = np.zeros((len(flat), n_ch))
    acc = np.zeros(len(flat))
    if len(scene) and len(flat):
        if len(shape) >= 2:
            group = _tile_groups(shape, tile)
        else:
            group = np.arange(len(flat)) // (tile * tile)
        origin = np.asarray(origin, dtype=np.float64)
        offsets, items = _cull(flat, group, origin, scene.means, scene.scales, scene.opacities)
        use_sh = values is None
        vals = np.zeros((1, n_ch)) if use_sh else np.ascontiguousarray(np.asarray(values, dtype=np.float64).reshape(len(scene), -1))
        _composite(flat, group.astype(np.int64), offsets, items, origin, np.ascontiguousarray(scene.means),
                   np.ascontiguousarray(scene.precisions()), np.ascontiguousarray(scene.opacities),
                   np.ascontiguousarray(scene.sh), vals, use_sh, float(near), out, acc)
    out += (1.0 - acc)[:, None] * background
    return out.reshape(shape + (n_ch,)), acc.reshape(shape)
