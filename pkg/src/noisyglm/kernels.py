"""Backend selection for the hot kernels.

The compiled extension ``noisyglm._kernels`` is used when importable; otherwise
the pure-Python versions in ``noisyglm._fallback`` are. Setting
``NOISYGLM_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("NOISYGLM_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

h_terms = _impl.h_terms
lik_terms = _impl.lik_terms
sur_terms = _impl.sur_terms
lasso_cd_gram = _impl.lasso_cd_gram


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython", "python") or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
