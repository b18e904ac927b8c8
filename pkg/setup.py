import os
import warnings

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None and os.environ.get("VIDSTEREO_NO_EXT") != "1":
    extensions = cythonize(
        [
            Extension(
                "vidstereo._ckernels",
                ["src/vidstereo/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-Wno-unused-function", "-Wno-cpp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
else:
    warnings.warn("Cython unavailable or disabled; using the numpy kernels only.")

setup(ext_modules=extensions)
