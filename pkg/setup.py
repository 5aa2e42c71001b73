import os

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

_random_lib = os.path.join(os.path.dirname(numpy.__file__), "random", "lib")

kernels = Extension(
    "gfzip._kernels",
    ["src/gfzip/_kernels.pyx"],
    include_dirs=[numpy.get_include()],
    library_dirs=[_random_lib],
    libraries=["npyrandom", "m"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O3"],
)

setup(
    ext_modules=cythonize(
        [kernels],
        compiler_directives={"language_level": "3", "boundscheck": False,
                             "wraparound": False, "cdivision": True},
    ),
)
