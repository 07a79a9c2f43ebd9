"""Selects the compiled Wiener kernel when available, else the numpy fallback."""

try:
    from . import _wiener_c as _impl

    USING_COMPILED = True
except ImportError:  # pragma: no cover - depends on the build environment
    from . import _wiener_np as _impl

    USING_COMPILED = False

logpdf_and_partials = _impl.logpdf_and_partials
