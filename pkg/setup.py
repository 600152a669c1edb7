import os

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "splitlab._ckernels",
        ["src/splitlab/_ckernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

# SPLITLAB_NO_EXT=1 installs the pure-Python package only
ext_modules = [] if os.environ.get("SPLITLAB_NO_EXT") else cythonize(
    extensions,
    compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
)

setup(ext_modules=ext_modules)
