"""Build script for the optional compiled simulation kernel.

The package is fully functional without the extension: ussfboost.backend
falls back to the pure-Python kernel when ussfboost._kernel is missing.
Compiler flags deliberately avoid -ffast-math and -march=native so that
the compiled kernel stays bit-compatible with the Python fallback.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "ussfboost._kernel",
                ["src/ussfboost/_kernel.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
