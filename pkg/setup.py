"""Build script: compiles the optional event-loop extension.

The package works without the extension (a pure-Python kernel is selected at
import time), so a failed compile only costs speed, not functionality.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MUXSIM_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "muxsim._core",
                    ["src/muxsim/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
