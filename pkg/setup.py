"""Build script for the optional compiled likelihood kernel.

The package works without the extension (a pure-numpy kernel is selected at
import time), so a failed compile only costs speed. Set ORDCPM_PURE_PYTHON=1
to skip building the extension entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("ORDCPM_PURE_PYTHON"):
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ordcpm._kernel_c",
                ["src/ordcpm/_kernel_c.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
