"""Build script: compiles the optional Cython Wiener kernel.

The package works without the extension (a numpy fallback is selected at
import time), so any build failure here downgrades to a pure-Python install
instead of aborting.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/irtkit/_wiener_c.pyx"],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
    print(f"warning: building without compiled wiener kernel ({exc})")

setup(ext_modules=ext_modules)
