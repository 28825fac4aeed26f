"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes the oblivious hot loops fast.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "oblivboost._kernels_ext",
                ["src/oblivboost/_kernels_ext.pyx"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
