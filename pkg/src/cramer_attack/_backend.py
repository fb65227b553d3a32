"""Kernel backend selection.

The compiled extension is used when it imports; set
``CRAMER_ATTACK_PURE_PYTHON=1`` to force the pure-Python fallback.
"""

import os

from . import _fallback

fallback = _fallback
compiled = None

if os.environ.get("CRAMER_ATTACK_PURE_PYTHON") != "1":
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

active = compiled if compiled is not None else fallback
BACKEND = "compiled" if compiled is not None and active is compiled else "python"

ctc_alpha_beta = active.ctc_alpha_beta
levinson_durbin = active.levinson_durbin
edit_distance_table = active.edit_distance_table
overlap_add = active.overlap_add


def available():
    """Names of the importable kernel backends."""
    names = ["python"]
    if compiled is not None:
        names.insert(0, "compiled")
    return names


def get(name):
    if name == "python":
        return fallback
    if name == "compiled" and compiled is not None:
        return compiled
    raise ValueError(f"kernel backend {name!r} is not available")
