"""Build script for the optional compiled kernels.

The package is pure Python plus one Cython extension holding the two inner
loops (posterior weighting and EM iteration).  If Cython or a C compiler is
unavailable the extension is skipped and the package falls back to the
numpy implementation at import time.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ldpfuse._ckernels",
                ["src/ldpfuse/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
