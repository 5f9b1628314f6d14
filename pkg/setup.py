from setuptools import setup, Extension

import numpy

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "knife._kernels._cykernels",
                ["src/knife/_kernels/_cykernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ]
    )
except ImportError:
    # Without Cython the package still installs; the numpy fallback backend
    # is selected at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
