"""Build script for the optional compiled kernels.

The Cython extension is best-effort: when the compiler toolchain or Cython is
missing the package installs without it and ``churnsurv._kernels`` falls back
to the numpy implementation.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("CHURNSURV_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "churnsurv._kernels._ckernels",
                    ["src/churnsurv/_kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
