"""Build script for the compiled kernel core.

The package works without the extension (numpy fallback); pass
ARTSY_SKIP_EXT=1 to install without compiling.
"""

import os

import numpy
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("ARTSY_SKIP_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "artsy._kernels._core",
                ["src/artsy/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
