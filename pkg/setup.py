"""Build script for the optional compiled kernels.

The package works without them; ``graphrom._backend`` falls back to the
NumPy/SciPy implementations when the extension is missing.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("GRAPHROM_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
        ext_modules = cythonize(
            [
                Extension(
                    "graphrom._kernels",
                    ["src/graphrom/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"] + openmp,
                    extra_link_args=openmp,
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": 3},
        )
    except ImportError as exc:  # pragma: no cover - build-time only
        print(f"graphrom: building without compiled kernels ({exc})")

setup(ext_modules=ext_modules)
