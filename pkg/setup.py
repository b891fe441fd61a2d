"""Optional build of the compiled kernel extension.

The package is fully functional without the extension: `safefleet.kernels`
falls back to the pure-Python implementation when the compiled module is
absent. Building requires Cython and a C compiler; failures are tolerated
so that `pip install` never breaks on exotic platforms.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "safefleet.kernels._native",
                ["src/safefleet/kernels/_native.pyx"],
                # -ffp-contract=off keeps double arithmetic bit-compatible
                # with the pure-Python fallback (no FMA fusion).
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception:  # pragma: no cover - build hosts without Cython
    ext_modules = []

setup(ext_modules=ext_modules)
