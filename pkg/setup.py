import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "it2forecast._kernels",
    ["src/it2forecast/_kernels.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level=3))
