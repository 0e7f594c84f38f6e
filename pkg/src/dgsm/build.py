"""Construction of per-light transmittance atlases.

Work is restricted twice: receivers near the avatar select the atlas pixels
and radial bins that are ever sampled (the active slab), and occluders are
bucketed into 8x8 atlas tiles by their light-space footprint so each pixel
only sums the Gaussians whose k-sigma ellipse can reach it.
"""

import math
import time
from dataclasses import dataclass

import numba
import numpy as np

from .atlas import AtlasDims, DgsmAtlas, Layout, bin_centers, wrap_pixel
from .splats import DegenerateInputError, alpha_weighted_centroid
from .transmittance import EXPONENT_FLOOR, ERF_SATURATION, AbsorptionMode, absorption_betas

# angular radius beyond which a footprint is treated as covering the whole atlas
_FULL_ATLAS_ANGLE = 0.6
_BOUNDARY_SAMPLES = 16
_RECT_SAFETY = 1.1


@dataclass(frozen=True)
class ReceiverRoi:
    center: np.ndarray
    radius: float
    z_min: float
    z_max: float

    def __post_init__(self):
        if not self.radius > 0 or self.z_min > self.z_max:
            raise ValueError(f"invalid ROI: radius={self.radius}, z=[{self.z_min}, {self.z_max}]")

    def contains(self, points):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        c = np.asarray(self.center, dtype=np.float64)
        inside_xy = np.max(np.abs(p[:, :2] - c[:2]), axis=1) <= self.radius
        return inside_xy & (p[:, 2] >= self.z_min) & (p[:, 2] <= self.z_max)

    def far_corner_distance(self, point):
        c = np.asarray(self.center, dtype=np.float64)
        corners = np.array([[c[0] + sx * self.radius, c[1] + sy * self.radius, z]
                            for sx in (-1, 1) for sy in (-1, 1) for z in (self.z_min, self.z_max)])
        return float(np.max(np.linalg.norm(corners - np.asarray(point), axis=1)))


def compute_roi(avatar, radius=2.0, margin=0.1, scene=None, floor_percentile=5.0):
    """Receiver box around the avatar.

    Height bounds are the 1st/99th percentile of avatar heights widened by
    ``margin``. If ``scene`` (receiver splats) is given, z_min is lowered to
    the ``floor_percentile`` height of receivers inside the xy footprint so
    floors below the avatar catch its shadow.
    """
    if len(avatar) == 0:
        raise DegenerateInputError("ROI needs a non-empty avatar")
    c = alpha_weighted_centroid(avatar)
    z = avatar.means[:, 2]
    z_min = float(np.percentile(z, 1) - margin)
    z_max = float(np.percentile(z, 99) + margin)
    if scene is not None and len(scene):
        inside = np.max(np.abs(scene.means[:, :2] - c[:2]), axis=1) <= radius
        if inside.any():
            z_min = min(z_min, float(np.percentile(scene.means[inside, 2], floor_percentile) - margin))
    return ReceiverRoi(c, float(radius), z_min, z_max)


def default_t_max(light, roi):
    return roi.far_corner_distance(light.position) + 0.5


# ---------------------------------------------------------------------------
# light-space footprints


def tangent_basis(d):
    """Orthonormal (e1, e2) spanning the plane orthogonal to each unit vector."""
    d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    sign = np.where(z >= 0, 1.0, -1.0)
    a = -1.0 / (sign + z)
    b = x * y * a
    e1 = np.stack([1.0 + sign * x * x * a, sign * b, -sign * x], axis=1)
    e2 = np.stack([b, sign + y * y * a, -y], axis=1)
    return e1, e2


@dataclass(frozen=True)
class OccluderFootprint:
    splat_index: int
    radii: np.ndarray  # (p1, p2) pixel radii with the (H+W)/2pi pixels-per-radian rule
    center: np.ndarray  # (col, row) continuous pixel coordinate
    rect: tuple  # (c0, c1, r0, r1) inclusive, unwrapped pixel coordinates
    depth: float


@dataclass
class FootprintSet:
    """Vectorised footprints; ``rect`` may extend past the atlas (see wrap_rects)."""

    index: np.ndarray
    radii: np.ndarray  # (N, 2)
    center: np.ndarray  # (N, 2) col, row
    rect: np.ndarray  # (N, 4) c0, c1, r0, r1
    depth: np.ndarray
    full: np.ndarray  # footprint covers the whole atlas

    def __len__(self):
        return len(self.index)

    def __getitem__(self, i):
        return OccluderFootprint(int(self.index[i]), self.radii[i].copy(), self.center[i].copy(),
                                 tuple(int(v) for v in self.rect[i]), float(self.depth[i]))


@numba.njit(cache=True, inline="always")
def _oct_uv(x, y, z):
    l1 = abs(x) + abs(y) + abs(z)
    qx, qy, qz = x / l1, y / l1, z / l1
    if qz < 0.0:
        return (1.0 - abs(qy)) * (1.0 if qx >= 0.0 else -1.0), (1.0 - abs(qx)) * (1.0 if qy >= 0.0 else -1.0)
    return qx, qy


# seam-equivalent copies of (u, v): u' = su * u + ou, v' = sv * v + ov
_COPIES = np.array([
    [1, 0, 1, 0], [-1, 2, -1, 0], [-1, -2, -1, 0], [-1, 0, -1, 2], [-1, 0, -1, -2],
    [1, 2, 1, 2], [1, 2, 1, -2], [1, -2, 1, 2], [1, -2, 1, -2],
], dtype=np.float64)


@numba.njit(cache=True)
def _boundary_extents(rel, ctr, basis, axes, circ, copies, out):
    """Center uv of ``rel`` and the uv bounding box of each mapped ellipse boundary around ``ctr``.

    Every boundary sample is replaced by its seam-equivalent copy nearest to
    the center, so boxes of footprints straddling the seam are contiguous.
    """
    for i in range(rel.shape[0]):
        cu, cv = _oct_uv(rel[i, 0], rel[i, 1], rel[i, 2])
        umin = umax = cu
        vmin = vmax = cv
        for s in range(circ.shape[0]):
            a = axes[i, 0, 0] * circ[s, 0] + axes[i, 0, 1] * circ[s, 1]
            b = axes[i, 1, 0] * circ[s, 0] + axes[i, 1, 1] * circ[s, 1]
            px = ctr[i, 0] + basis[i, 0, 0] * a + basis[i, 0, 1] * b
            py = ctr[i, 1] + basis[i, 1, 0] * a + basis[i, 1, 1] * b
            pz = ctr[i, 2] + basis[i, 2, 0] * a + basis[i, 2, 1] * b
            u, v = _oct_uv(px, py, pz)
            bu, bv = u, v
            best = np.inf
            for k in range(copies.shape[0]):
                uu = copies[k, 0] * u + copies[k, 1]
                vv = copies[k, 2] * v + copies[k, 3]
                d = (uu - cu) ** 2 + (vv - cv) ** 2
                if d < best:
                    best, bu, bv = d, uu, vv
            umin = min(umin, bu)
            umax = max(umax, bu)
            vmin = min(vmin, bv)
            vmax = max(vmax, bv)
        out[i, 0] = cu
        out[i, 1] = cv
        out[i, 2] = umin
        out[i, 3] = umax
        out[i, 4] = vmin
        out[i, 5] = vmax


def footprints(means, covs, light_pos, dims, k_sigma=3.0, pad=1, index=None):
    """Conservative atlas-pixel rectangles of each Gaussian's k-sigma light-space ellipse.

    ``radii`` follow the far-field rule: the projected covariance
    [u v]^T Sigma [u v] on the plane through the mean, scaled by k / depth.
    The rectangle itself bounds the exact cone of rays that pass within k
    sigma, cut by that plane. For a Gaussian that is large next to its
    distance the cut is wider than the far-field ellipse and off-center.
    Its boundary is mapped through the octahedral encoding and bounded in
    pixel space, so the rectangle follows the real (non-uniform) pixel
    density of the atlas.
    """
    means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    covs = np.asarray(covs, dtype=np.float64).reshape(-1, 3, 3)
    n = len(means)
    H, W = dims.H, dims.W
    if index is None:
        index = np.arange(n)
    rel = means - np.asarray(light_pos, dtype=np.float64)
    depth = np.linalg.norm(rel, axis=1)
    if np.any(depth <= 1e-6):
        raise ValueError("footprint undefined for a Gaussian at the light position")
    d = rel / depth[:, None]
    e1, e2 = tangent_basis(d)
    basis = np.stack([e1, e2], axis=2)  # (N, 3, 2)
    sig_perp = np.swapaxes(basis, 1, 2) @ covs @ basis
    lam, vec = np.linalg.eigh(sig_perp)  # ascending
    lam = np.maximum(lam[:, ::-1], 0.0)
    vec = vec[:, :, ::-1]
    rho = (H + W) / (2.0 * np.pi)
    radii = k_sigma * np.sqrt(lam) / depth[:, None] * rho

    # tangent cone of the k-sigma ellipsoid on the plane through the mean:
    # u^T N u - 2 (k^2 / D) w.u <= k^2 p, with p = d^T P d and w = B^T P d
    precs = np.linalg.inv(covs)
    pd = np.einsum("nij,nj->ni", precs, d)
    p = np.einsum("ni,ni->n", d, pd)
    w = np.einsum("nij,ni->nj", basis, pd)
    k2 = k_sigma * k_sigma
    pp = np.swapaxes(basis, 1, 2) @ precs @ basis
    N = (p - k2 / depth**2)[:, None, None] * pp - w[:, :, None] * w[:, None, :]
    mu, nvec = np.linalg.eigh(N)
    ok = mu[:, 0] > 1e-12 * np.abs(mu[:, 1]).clip(1e-300)
    mu = np.where(ok[:, None], mu, 1.0)
    u0 = np.einsum("nij,nj->ni", nvec, np.einsum("nji,nj->ni", nvec, w) / mu) * (k2 / depth)[:, None]
    R = k2 * p + np.einsum("ni,nij,nj->n", u0, N, u0)
    ok &= R > 0
    R = np.where(ok, R, 0.0)
    half = np.sqrt(R[:, None] / mu)
    theta = np.linspace(0.0, 2.0 * np.pi, _BOUNDARY_SAMPLES, endpoint=False)
    circ = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    axes = np.ascontiguousarray(nvec * half[:, None, :])  # columns = scaled eigvecs
    ctr = rel + np.einsum("nij,nj->ni", basis, u0)
    ext = np.empty((n, 6))
    _boundary_extents(np.ascontiguousarray(rel), np.ascontiguousarray(ctr), np.ascontiguousarray(basis), axes, circ,
                      _COPIES, ext)
    cx = (ext[:, 0] + 1) * 0.5 * W - 0.5
    cy = (ext[:, 1] + 1) * 0.5 * H - 0.5
    center = np.stack([cx, cy], axis=1)
    bx0, bx1 = (ext[:, 2] + 1) * 0.5 * W - 0.5, (ext[:, 3] + 1) * 0.5 * W - 0.5
    by0, by1 = (ext[:, 4] + 1) * 0.5 * H - 0.5, (ext[:, 5] + 1) * 0.5 * H - 0.5
    x0 = cx - _RECT_SAFETY * (cx - bx0)
    x1 = cx + _RECT_SAFETY * (bx1 - cx)
    y0 = cy - _RECT_SAFETY * (cy - by0)
    y1 = cy + _RECT_SAFETY * (by1 - cy)
    rect = np.stack([np.floor(x0) - pad, np.ceil(x1) + pad, np.floor(y0) - pad, np.ceil(y1) + pad], axis=1).astype(np.int64)

    ang = (np.linalg.norm(u0, axis=1) + half.max(axis=1)) / depth
    full = ~ok | (ang > _FULL_ATLAS_ANGLE) | (rect[:, 1] - rect[:, 0] >= W) | (rect[:, 3] - rect[:, 2] >= H)
    rect[full] = (0, W - 1, 0, H - 1)
    return FootprintSet(np.asarray(index), radii, center, rect, depth, full)


def occluder_footprint(splat, light, dims, k_sigma=3.0):
    """Footprint of one occluder; raises if it coincides with the light (the emitter)."""
    from .splats import covariances, quat_to_rotmat

    cov = covariances(quat_to_rotmat(splat.rotation), splat.scales)
    return footprints(splat.mean[None], cov[None], light.position, dims, k_sigma)[0]


def wrap_rects(rect, H, W):
    """Split unwrapped rectangles into in-atlas pieces through the octahedral seam.

    Returns (owner, pieces) with pieces (M, 4) = c0, c1, r0, r1 inclusive.
    """
    rect = np.asarray(rect, dtype=np.int64).reshape(-1, 4)
    owners, pieces = [], []
    segs_c = [(-np.inf, -1), (0, W - 1), (W, np.inf)]
    segs_r = [(-np.inf, -1), (0, H - 1), (H, np.inf)]
    c0, c1, r0, r1 = rect.T
    for sc, (lo_c, hi_c) in enumerate(segs_c):
        a_c = np.maximum(c0, lo_c)
        b_c = np.minimum(c1, hi_c)
        for sr, (lo_r, hi_r) in enumerate(segs_r):
            a_r = np.maximum(r0, lo_r)
            b_r = np.minimum(r1, hi_r)
            ok = (a_c <= b_c) & (a_r <= b_r)
            if not ok.any():
                continue
            idx = np.flatnonzero(ok)
            corners_r = np.stack([a_r[idx], a_r[idx], b_r[idx], b_r[idx]], 1).astype(np.int64)
            corners_c = np.stack([a_c[idx], b_c[idx], a_c[idx], b_c[idx]], 1).astype(np.int64)
            wr, wc = wrap_pixel(corners_r, corners_c, H, W)
            pieces.append(np.stack([wc.min(1), wc.max(1), wr.min(1), wr.max(1)], 1))
            owners.append(idx)
    if not pieces:
        return np.zeros(0, np.int64), np.zeros((0, 4), np.int64)
    pieces = np.concatenate(pieces)
    pieces[:, 0:2] = np.clip(pieces[:, 0:2], 0, W - 1)
    pieces[:, 2:4] = np.clip(pieces[:, 2:4], 0, H - 1)
    return np.concatenate(owners), pieces


@dataclass
class TileBuckets:
    tile: int
    tiles_x: int
    tiles_y: int
    offsets: np.ndarray  # (tiles_x * tiles_y + 1,)
    items: np.ndarray  # occluder positions, ascending within each tile

    def members(self, tx, ty):
        t = ty * self.tiles_x + tx
        return self.items[self.offsets[t]:self.offsets[t + 1]]


def bucket_occluders(fps, dims, tile=8):
    """Tile -> occluder lists; occluders appear in every tile their rectangle overlaps.

    Items are positions into ``fps`` (not splat indices).
    """
    H, W = dims.H, dims.W
    tx_n = -(-W // tile)
    ty_n = -(-H // tile)
    owner, pieces = wrap_rects(fps.rect, H, W)
    tx0, tx1 = pieces[:, 0] // tile, pieces[:, 1] // tile
    ty0, ty1 = pieces[:, 2] // tile, pieces[:, 3] // tile
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    rep = np.repeat(np.arange(len(pieces)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    j = np.arange(total) - start
    tx = tx0[rep] + j % nx[rep]
    ty = ty0[rep] + j // nx[rep]
    tiles = ty * tx_n + tx
    n = max(len(fps), 1)
    keys = np.unique(tiles.astype(np.int64) * n + owner[rep])
    tile_of = keys // n
    items = keys % n
    offsets = np.searchsorted(tile_of, np.arange(tx_n * ty_n + 1), side="left")
    return TileBuckets(tile, tx_n, ty_n, offsets.astype(np.int64), items.astype(np.int64))


# ---------------------------------------------------------------------------
# active slab


@dataclass
class ActiveSlab:
    mask: np.ndarray  # (H, W) bool pixel set P
    k_min: int
    k_max: int

    @property
    def empty(self):
        return not self.mask.any()

    @property
    def pixels(self):
        return np.argwhere(self.mask)


@numba.njit(cache=True)
def _paint_rects(mask, pieces):
    for i in range(pieces.shape[0]):
        for r in range(pieces[i, 2], pieces[i, 3] + 1):
            for c in range(pieces[i, 0], pieces[i, 1] + 1):
                mask[r, c] = True


def _bin_of(t, dims):
    return np.clip(np.floor(np.asarray(t) * dims.K / dims.t_max), 0, dims.K - 1).astype(np.int64)


def active_slab(receivers, roi, light, dims, extent_sigma=3.0, dilation=1):
    """Atlas pixels and bin range touched by receivers whose means lie in the ROI.

    Each receiver contributes its center pixel plus the pixels under its own
    ``extent_sigma`` footprint (footprint sampling reads there), dilated by
    ``dilation``; the bin range spans receiver distances +- the same extent,
    widened by one bin each side. ``extent_sigma=0`` keeps only the centers.
    """
    k_sigma = extent_sigma
    H, W, K = dims.H, dims.W, dims.K
    inside = roi.contains(receivers.means) if len(receivers) else np.zeros(0, bool)
    mask = np.zeros((H, W), dtype=bool)
    if not inside.any():
        return ActiveSlab(mask, 0, -1)
    sub = receivers.subset(inside)
    rel = sub.means - light.position
    dist = np.linalg.norm(rel, axis=1)
    keep = dist > 1e-6
    sub, rel, dist = sub.subset(keep), rel[keep], dist[keep]
    if len(sub) == 0:
        return ActiveSlab(mask, 0, -1)
    ext = k_sigma * sub.scales.max(axis=1)

    if dims.layout is Layout.CUBEMAP:
        _paint_cube(mask, sub, light, dims, k_sigma, dilation)
    else:
        fps = footprints(sub.means, sub.covariances(), light.position, dims, k_sigma, pad=0)
        # pixels whose centers fall in the footprint, always including the nearest pixel
        cx = np.floor(fps.center[:, 0] + 0.5).astype(np.int64)
        cy = np.floor(fps.center[:, 1] + 0.5).astype(np.int64)
        rect = fps.rect.copy()
        rect[:, 0] = np.minimum(rect[:, 0] + 1, cx)
        rect[:, 1] = np.maximum(rect[:, 1] - 1, cx)
        rect[:, 2] = np.minimum(rect[:, 2] + 1, cy)
        rect[:, 3] = np.maximum(rect[:, 3] - 1, cy)
        rect[~fps.full] += np.array([-dilation, dilation, -dilation, dilation])
        _, pieces = wrap_rects(rect, H, W)
        _paint_rects(mask, pieces)

    k_min = max(int(_bin_of(np.maximum(dist - ext, 0.0), dims).min()) - 1, 0)
    k_max = min(int(_bin_of(dist + ext, dims).max()) + 1, K - 1)
    return ActiveSlab(mask, k_min, k_max)


def _paint_cube(mask, sub, light, dims, k_sigma, dilation):
    from .atlas import cube_face_coords

    F = dims.W
    rel = sub.means - light.position
    dist = np.linalg.norm(rel, axis=1)
    ang = np.minimum(k_sigma * sub.scales.max(axis=1) / dist, 1.0)
    # sample the footprint cone densely enough for the face resolution
    n_ring = 8
    dirs = [rel / dist[:, None]]
    e1, e2 = tangent_basis(dirs[0])
    for frac in (0.5, 1.0):
        for i in range(n_ring):
            th = 2 * np.pi * i / n_ring
            off = (np.cos(th) * e1 + np.sin(th) * e2) * np.tan(ang * frac)[:, None]
            dd = dirs[0] + off
            dirs.append(dd / np.linalg.norm(dd, axis=1, keepdims=True))
    pts = np.concatenate(dirs)
    face, s, t = cube_face_coords(pts)
    col = np.clip(np.floor((s + 1) * 0.5 * F), 0, F - 1).astype(np.int64)
    row = np.clip(np.floor((t + 1) * 0.5 * F), 0, F - 1).astype(np.int64)
    for dr in range(-dilation, dilation + 1):
        for dc in range(-dilation, dilation + 1):
            rr = np.clip(row + dr, 0, F - 1)
            cc = np.clip(col + dc, 0, F - 1)
            mask[face * F + rr, cc] = True


# ---------------------------------------------------------------------------
# accumulation


@numba.njit(cache=True, parallel=True, fastmath=False)
def _accumulate(pix_dirs, pix_group, group_off, group_items, means, precs, betas, origin, tbins, out):
    n_pix = pix_dirs.shape[0]
    nb = tbins.shape[0]
    sat = ERF_SATURATION
    floor = EXPONENT_FLOOR
    for p in numba.prange(n_pix):
        d0 = pix_dirs[p, 0]
        d1 = pix_dirs[p, 1]
        d2 = pix_dirs[p, 2]
        acc = np.zeros(nb)
        comp = np.zeros(nb)
        g = pix_group[p]
        for jj in range(group_off[g], group_off[g + 1]):
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
            ae0 = A[0, 0] * e0 + A[0, 1] * e1 + A[0, 2] * e2
            ae1 = A[1, 0] * e0 + A[1, 1] * e1 + A[1, 2] * e2
            ae2 = A[2, 0] * e0 + A[2, 1] * e1 + A[2, 2] * e2
            c = ae0 * e0 + ae1 * e1 + ae2 * e2
            resid = c - b * b / a
            if resid < 0.0:
                resid = 0.0
            expo = -0.5 * resid
            if expo < floor or betas[j] <= 0.0:
                continue
            k = math.sqrt(0.5 * a)
            shift = b / a
            x0 = k * shift
            pref = betas[j] * math.sqrt(math.pi / (2.0 * a)) * math.exp(expo)
            ec0 = math.erfc(x0) if x0 >= 0.0 else math.erfc(-x0)
            for kk in range(nb):
                x1 = k * (tbins[kk] + shift)
                if x1 < -sat:
                    continue  # x0 <= x1 < -sat: nothing accumulated yet
                if x0 > sat:
                    break  # x1 >= x0 > sat for every remaining bin
                if x0 >= 0.0:
                    diff = ec0 - math.erfc(x1)
                elif x1 <= 0.0:
                    diff = math.erfc(-x1) - ec0
                else:
                    diff = 2.0 - math.erfc(x1) - ec0
                val = pref * diff
                y = val - comp[kk]
                t = acc[kk] + y
                comp[kk] = (t - acc[kk]) - y
                acc[kk] = t
        for kk in range(nb):
            out[p, kk] = acc[kk]


def build_dgsm(light, occluders, receivers, roi, dims, absorption=AbsorptionMode(), k_sigma=3.0,
               roi_cull=True, tile_cull=True, tile=8, dilation=1):
    """Tabulate transmittance around ``light`` for the given occluder splats.

    ``receivers`` are the scene splats that will sample the atlas; with
    ``roi_cull`` only their slab is filled and every other entry stays
    exactly 1. ``tile_cull`` gathers per-pixel occluders from 8x8 tile
    buckets (octahedral layout only). Occluders within 1e-6 m of the light
    are the emitter itself and are skipped.
    """
    t_start = time.perf_counter()
    atlas = DgsmAtlas(dims, light)
    H, W, K = dims.H, dims.W, dims.K
    stats = {"pixels": 0, "pairs": 0, "occluders": len(occluders), "roi_cull": roi_cull,
             "tile_cull": tile_cull and dims.layout is Layout.OCTAHEDRAL}

    if len(occluders):
        far = np.linalg.norm(occluders.means - light.position, axis=1) > 1e-6
        occ = occluders.subset(far)
    else:
        occ = occluders
    stats["emitter_excluded"] = len(occluders) - len(occ)

    if roi_cull:
        slab = active_slab(receivers, roi, light, dims, k_sigma, dilation)
    else:
        slab = ActiveSlab(np.ones((H, W), dtype=bool), 0, K - 1)
    stats["k_range"] = (slab.k_min, slab.k_max)
    stats["slab"] = slab
    if slab.empty or len(occ) == 0:
        stats["seconds"] = time.perf_counter() - t_start
        atlas.stats = stats
        return atlas

    rows, cols = np.nonzero(slab.mask)
    pix_dirs = np.ascontiguousarray(dims.pixel_directions()[rows, cols])
    tbins = bin_centers(K, dims.t_max)[slab.k_min:slab.k_max + 1]
    betas = absorption_betas(occ, absorption)
    means = np.ascontiguousarray(occ.means)
    precs = np.ascontiguousarray(occ.precisions())

    if stats["tile_cull"]:
        fps = footprints(occ.means, occ.covariances(), light.position, dims, k_sigma)
        buckets = bucket_occluders(fps, dims, tile)
        group = (rows // tile) * buckets.tiles_x + cols // tile
        offsets, items = buckets.offsets, buckets.items
    else:
        group = np.zeros(len(rows), dtype=np.int64)
        offsets = np.array([0, len(occ)], dtype=np.int64)
        items = np.arange(len(occ), dtype=np.int64)

    tau = np.zeros((len(rows), len(tbins)))
    _accumulate(pix_dirs, group.astype(np.int64), offsets, items, means, precs, betas,
                np.asarray(light.position, dtype=np.float64), tbins, tau)
    atlas.data[slab.k_min:slab.k_max + 1, rows, cols] = np.exp(-tau).T.astype(np.float32)

    stats["pixels"] = int(len(rows))
    stats["pairs"] = int((offsets[group + 1] - offsets[group]).sum())
    stats["seconds"] = time.perf_counter() - t_start
    atlas.stats = stats
    return atlas


def slab_mask3(atlas_or_dims, slab):
    """Boolean (K, H, W) mask of the slab entries."""
    dims = atlas_or_dims.dims if isinstance(atlas_or_dims, DgsmAtlas) else atlas_or_dims
    m = np.zeros((dims.K, dims.H, dims.W), dtype=bool)
    if not slab.empty:
        m[slab.k_min:slab.k_max + 1] = slab.mask[None]
    return m


def atlas_dims_for(light, roi, H=512, W=512, K=64, t_max=None, layout=Layout.OCTAHEDRAL):
    """Atlas dimensions with the default t_max (far ROI corner + 0.5 m)."""
    layout = Layout.parse(layout)
    t = default_t_max(light, roi) if t_max is None else t_max
    if layout is Layout.CUBEMAP:
        return AtlasDims.cubemap(W, K, t)
    return AtlasDims(H, W, K, t, layout)
