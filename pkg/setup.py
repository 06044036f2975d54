"""Builds the optional compiled kernels; without them the numpy fallback is used."""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:  # no build toolchain: install the pure-Python package
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "syncmotion._kernels",
                ["src/syncmotion/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,  # a failed compile leaves the fallback in place
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
