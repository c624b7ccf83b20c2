import numpy as np
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
                "pgdenoise._kernels",
                ["src/pgdenoise/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no fast-math / FMA contraction: samples must match the
                # pure-Python backend bit for bit
                extra_compile_args=["-O2", "-ffp-contract=off"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
