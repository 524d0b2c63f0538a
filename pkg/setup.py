import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("INCENTFLOW_PURE"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "incentflow._kernels._core",
                    ["src/incentflow/_kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # No Cython toolchain: install pure-Python only; the package falls
        # back to the NumPy kernels at import time.
        ext_modules = []

setup(ext_modules=ext_modules)
