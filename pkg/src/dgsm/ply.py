"""Splat-PLY reader/writer for the standard 3DGS vertex layout.

Stored values are pre-activation: opacity as a logit, scales as logs. The
reader applies the activations; the writer applies their inverses.
"""

import numpy as np
from plyfile import PlyData, PlyElement

from . import sh as shlib
from .splats import GROUPS, OPACITY_MAX, OPACITY_MIN, SplatScene

_QUAT_TOL = 1e-6


class PlyFormatError(ValueError):
    pass


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _property_names(degree):
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * (shlib.num_coeffs(degree) - 1))]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def load_splat_ply(path, group="scene"):
    try:
        ply = PlyData.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # plyfile raises several unrelated types
        raise PlyFormatError(f"{path}: not a readable PLY file ({exc})") from exc
    if "vertex" not in ply:
        raise PlyFormatError(f"{path}: no vertex element")
    v = ply["vertex"].data
    present = set(v.dtype.names or ())

    def col(name):
        if name not in present:
            raise PlyFormatError(f"{path}: missing vertex property '{name}'")
        return np.asarray(v[name], dtype=np.float64)

    n = len(v)
    means = np.stack([col("x"), col("y"), col("z")], axis=1)
    raw_opacity = col("opacity")
    raw_scales = np.stack([col(f"scale_{i}") for i in range(3)], axis=1)
    quats = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    dc = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)
    n_rest = sum(1 for name in present if name.startswith("f_rest_"))
    if n_rest % 3:
        raise PlyFormatError(f"{path}: f_rest count {n_rest} is not a multiple of 3")
    try:
        degree = shlib.degree_from_count(n_rest // 3 + 1)
    except ValueError:
        raise PlyFormatError(f"{path}: f_rest count {n_rest} matches no SH degree") from None
    rest = np.stack([col(f"f_rest_{i}") for i in range(n_rest)], axis=1) if n_rest else np.zeros((n, 0))

    raw = np.concatenate([means, raw_opacity[:, None], raw_scales, quats, dc, rest], axis=1)
    bad = ~np.isfinite(raw).all(axis=1)
    if bad.any():
        raise PlyFormatError(f"{path}: non-finite value in vertex record {int(np.argmax(bad))}")

    k = shlib.num_coeffs(degree)
    sh = np.empty((n, k, 3))
    sh[:, 0, :] = dc
    # f_rest is channel-major: f_rest[c * (k - 1) + (j - 1)]
    sh[:, 1:, :] = rest.reshape(n, 3, k - 1).transpose(0, 2, 1)

    norm = np.linalg.norm(quats, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise PlyFormatError(f"{path}: zero quaternion in vertex record {int(np.argmax(norm[:, 0] == 0))}")
    renorm = np.abs(norm - 1.0) > _QUAT_TOL
    quats = np.where(renorm, quats / norm, quats)

    opacity = np.clip(1.0 / (1.0 + np.exp(-raw_opacity)), OPACITY_MIN, OPACITY_MAX)
    return SplatScene(means, quats, np.exp(raw_scales), opacity, sh, np.full(n, GROUPS.index(group), np.int8))


def save_splat_ply(scene, path):
    n, k = len(scene), scene.sh.shape[1]
    degree = shlib.degree_from_count(k)
    names = _property_names(degree)
    cols = {
        "x": scene.means[:, 0], "y": scene.means[:, 1], "z": scene.means[:, 2],
        "nx": np.zeros(n), "ny": np.zeros(n), "nz": np.zeros(n),
        "opacity": _logit(scene.opacities),
    }
    for i in range(3):
        cols[f"f_dc_{i}"] = scene.sh[:, 0, i]
        cols[f"scale_{i}"] = np.log(scene.scales[:, i])
    for i in range(4):
        cols[f"rot_{i}"] = scene.rotations[:, i]
    rest = scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * (k - 1))
    for i in range(rest.shape[1]):
        cols[f"f_rest_{i}"] = rest[:, i]

    data = np.empty(n, dtype=[(name, "<f4") for name in names])
    for name in names:
        data[name] = cols[name]
    PlyData([PlyElement.describe(data, "vertex")], byte_order="<").write(str(path))
