"""Hot-kernel backend selection.

The conv2d/maxpool inner loops dominate CPU training time, so they live
behind a tiny four-function interface with two interchangeable backends:

* ``_native`` — Cython extension compiled at install time;
* ``numpy_ref`` — pure NumPy, always available.

The native backend is preferred when importable. Set ``MOEDET_NO_NATIVE=1``
to force the fallback (used by the benchmark and the cross-backend tests).
``BACKEND`` names the one in effect.
"""

import os

if os.environ.get("MOEDET_NO_NATIVE"):
    from .numpy_ref import col2im, im2col, maxpool2d_backward, maxpool2d_forward

    BACKEND = "numpy"
else:
    try:
        from ._native import col2im, im2col, maxpool2d_backward, maxpool2d_forward

        BACKEND = "native"
    except ImportError:
        from .numpy_ref import col2im, im2col, maxpool2d_backward, maxpool2d_forward

        BACKEND = "numpy"

__all__ = ["im2col", "col2im", "maxpool2d_forward", "maxpool2d_backward", "BACKEND"]
