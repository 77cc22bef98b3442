import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

ext = Extension(
    "gp3body._kernels",
    ["src/gp3body/_kernels.pyx"],
    include_dirs=[numpy.get_include()],
    extra_compile_args=["-O3", "-fopenmp"],
    extra_link_args=["-fopenmp"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level=3))
