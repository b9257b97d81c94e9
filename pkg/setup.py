"""Build script: compiles the optional BLAS-backed convolution core.

The package works without the extension (a pure-numpy fallback is selected
at import time), so a failed compile only costs speed. Set PMRI_NO_EXT=1 to
skip the extension build entirely.
"""

import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("PMRI_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "pmri._convcore",
        ["src/pmri/_convcore.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions())
