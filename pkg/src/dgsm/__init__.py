"""Deep Gaussian shadow maps: analytic transmittance atlases for splat scenes."""

import os

# numba otherwise probes an old system TBB and warns on every parallel kernel
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
