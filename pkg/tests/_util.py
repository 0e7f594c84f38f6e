"""Small builders shared by the tests."""

import numpy as np
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from dgsm.splats import GROUPS, SplatScene


def random_dirs(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def random_spd(rng, cond_max=1e4, base=(0.05, 0.5)):
    r = Rotation.random(random_state=rng).as_matrix()
    lo = rng.uniform(*base)
    s = lo * np.array([1.0, rng.uniform(1, np.sqrt(cond_max)), np.sqrt(cond_max) * rng.uniform(0.5, 1.0)])
    return r @ np.diag(s**2) @ r.T


def random_scene(rng, n, degree=0, group="scene", spread=1.0, scale=(0.02, 0.2)):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return SplatScene(
        rng.normal(0, spread, (n, 3)), q, rng.uniform(*scale, (n, 3)), rng.uniform(0.05, 0.95, n),
        rng.normal(0, 0.3, (n, (degree + 1) ** 2, 3)), np.full(n, GROUPS.index(group), np.int8),
    )


unit_vectors = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.asarray(v) / np.linalg.norm(v))
seeds = st.integers(0, 2**32 - 1)
