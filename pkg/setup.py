"""Builds the optional compiled kernel extension.

The package works without it (a numpy fallback is selected at import); build
in-place with `python3 setup.py build_ext --inplace` when Cython and a C
compiler are available. Set HDMAE_NO_EXT=1 to skip the extension entirely.
A failed compile downgrades to a warning so plain installs never break.
"""

import os
import warnings

from setuptools import setup
from setuptools.command.build_ext import build_ext

ext_modules = []
if os.environ.get("HDMAE_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "hdmae._kernels",
                    ["src/hdmae/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # fast-math + simd lets gcc vectorize the tanh/exp loops
                    # via libmvec; kernel inputs are pre-validated finite
                    extra_compile_args=["-O3", "-ffast-math", "-fopenmp-simd", "-march=native"],
                    extra_link_args=["-lm"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []


class OptionalBuildExt(build_ext):
    """Compile failures fall back to the pure-numpy kernels."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            warnings.warn(f"skipping compiled kernels ({exc}); numpy fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"skipping {ext.name} ({exc}); numpy fallback will be used")


setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
