"""Hot-kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly; the
numpy implementation is the fallback.  Set LOGICSEQ_BACKEND=numpy (or
=compiled) to force a choice, e.g. for benchmarking.
"""

from __future__ import annotations

import importlib
import os

from . import numpy_backend

_requested = os.environ.get("LOGICSEQ_BACKEND", "").strip().lower()

_fast = None
if _requested != "numpy":
    try:
        _fast = importlib.import_module("logicseq._kernels._fast")
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "LOGICSEQ_BACKEND=compiled but the logicseq._kernels._fast "
                "extension is not built; reinstall with a C compiler present"
            )

if _fast is not None:
    BACKEND_NAME = "compiled"
    layer_forward = _fast.layer_forward
    layer_backward = _fast.layer_backward
    packed_eval = _fast.packed_eval
else:
    BACKEND_NAME = "numpy"
    layer_forward = numpy_backend.layer_forward
    layer_backward = numpy_backend.layer_backward
    packed_eval = numpy_backend.packed_eval
