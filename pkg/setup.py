"""Builds the optional compiled kernel extension.

The package works without the extension (pure-numpy fallbacks are selected
at import time); the extension only accelerates the hot inner loops.
"""

import numpy as np
from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "robayes._core",
                ["src/robayes/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
