"""Select the compiled kernels when available, else the numpy fallback.

Set ``MOFACOX_BACKEND=python`` to force the fallback even when the
extension is built.
"""

import os

from . import _fallback

if os.environ.get("MOFACOX_BACKEND", "").lower() == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

riskset_first_moments = _impl.riskset_first_moments
cd_lasso = _impl.cd_lasso


def get_impl(name):
    """Return the kernel module for ``name`` ('cython' or 'python')."""
    if name == "python":
        return _fallback
    from . import _kernels
    return _kernels
