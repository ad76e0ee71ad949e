"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``FOCKGEN_PURE_PYTHON`` is set to a non-empty value,
the numpy implementations are used. ``BACKEND`` names the active choice.
"""

import os

if os.environ.get("FOCKGEN_PURE_PYTHON"):
    from ._kernels_py import joint_table, phase_type

    BACKEND = "python"
else:
    try:
        from ._kernels import joint_table, phase_type

        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._kernels_py import joint_table, phase_type

        BACKEND = "python"

__all__ = ["BACKEND", "joint_table", "phase_type"]
