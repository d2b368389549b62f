"""Build the optional Cython kernels.

The compiled module is optional: when Cython or a C compiler is missing the
package installs without it and falls back to ``hetreg._kernels_py``.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("HETREG_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "hetreg._kernels",
                    ["src/hetreg/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    libraries=["m"],
                    # no FMA contraction: the neighborhood kernel must match
                    # the scalar reference bit for bit
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
