"""Build script for the compiled message-passing kernel.

The package works without the extension: lccad.inference falls back to the
pure-numpy kernel in lccad._lbp_ref when lccad._lbp_fast is not importable.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "lccad._lbp_fast",
        ["src/lccad/_lbp_fast.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
