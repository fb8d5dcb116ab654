"""Build script for the optional compiled core.

The package works without the extension (``slowfast.backend`` falls back to
the NumPy engine); set ``SLOWFAST_NO_EXT=1`` to skip compiling it.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("SLOWFAST_NO_EXT"):
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "slowfast._core",
                ["src/slowfast/_core.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off", "-fno-builtin-sin", "-fno-builtin-cos"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
