import os

import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: if Cython or a compiler is missing the
# package still installs and falls back to the numpy implementation.
ext_modules = []
if os.environ.get("CROWDSTEER_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "crowdsteer._ckernels",
                    ["src/crowdsteer/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
