"""Per-frame streaming kernels: compiled core with a numpy fallback.

The compiled extension (``_ckern``, Cython) is preferred when importable;
``SC2CODEC_PURE_PY=1`` forces the numpy fallback.  Both backends expose the
same functions with per-frame semantics, so streamed outputs are bit-identical
across chunkings on either backend.
"""

from __future__ import annotations

import os

from . import _pykern

_backend = _pykern
HAVE_COMPILED = False

if os.environ.get("SC2CODEC_PURE_PY", "") != "1":
    try:
        from . import _ckern  # type: ignore[attr-defined]

        _backend = _ckern
        HAVE_COMPILED = True
    except ImportError:
        pass


def backend_name() -> str:
    return _backend.NAME


def get_backend(name: str | None = None):
    """Return a kernel backend module: active one, or 'numpy' / 'cython'."""
    if name is None:
        return _backend
    if name == "numpy":
        return _pykern
    if name == "cython":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernel backend is not available")
        from . import _ckern  # type: ignore[attr-defined]

        return _ckern
    raise ValueError(f"unknown backend {name!r}")


gemv = _backend.gemv
depthwise_frame = _backend.depthwise_frame
gelu_vec = _backend.gelu_vec
convnext_frame = _backend.convnext_frame
