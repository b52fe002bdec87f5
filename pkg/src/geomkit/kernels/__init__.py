"""Hot-kernel backend selection.

The compiled Cython extension is used when it imported cleanly; otherwise
the numpy reference in ``_py`` takes over.  Set GEOMKIT_PURE_PYTHON=1 to
force the fallback (used by the equivalence tests and the benchmark).
Both backends implement the same contracts; cross-backend agreement is
tested to 1e-12, bitwise reproducibility claims hold per backend.
"""

import os

from . import _py

if os.environ.get("GEOMKIT_PURE_PYTHON") == "1":
    _impl = _py
    BACKEND = "python"
else:
    try:
        from . import _cy as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _py
        BACKEND = "python"

splat_accumulate = _impl.splat_accumulate
pairwise_dist = _impl.pairwise_dist
elastica_energy = _impl.elastica_energy
elastica_energy_grad = _impl.elastica_energy_grad

__all__ = [
    "BACKEND",
    "splat_accumulate",
    "pairwise_dist",
    "elastica_energy",
    "elastica_energy_grad",
]
