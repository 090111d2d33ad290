"""Build script for the optional compiled kernels.

The package is fully functional without the extension; `mmreach._backend`
falls back to the pure numpy implementation when the import fails.
"""
import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "mmreach._kernels",
        sources=["src/mmreach/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
