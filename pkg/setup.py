"""Build script for the compiled convolution kernels.

The package works without the extension (a numpy fallback is selected at
import time); set PEDCROSS_SKIP_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("PEDCROSS_SKIP_EXT") != "1":
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pedcross.kernels._convops",
                sources=["src/pedcross/kernels/_convops.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
