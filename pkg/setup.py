from setuptools import Extension, setup
from Cython.Build import cythonize

ext = Extension(
    "forest2fcn.kernels._convcore",
    ["src/forest2fcn/kernels/_convcore.pyx"],
    extra_compile_args=["-O3"],
)

setup(ext_modules=cythonize([ext], language_level=3))
