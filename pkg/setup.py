"""Builds the optional Cython kernels; the package falls back to numpy if this fails."""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("RADARDEPTH_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "radardepth._kernels",
                    ["src/radardepth/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # pragma: no cover
        print(f"warning: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
