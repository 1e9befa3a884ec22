"""Build the optional compiled kernels.

The package works without them: ``flowsynth.neural.kernels`` falls back to
the numpy implementations when the extension is missing.
"""
import os

import numpy
from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


def extensions():
    if os.environ.get("FLOWSYNTH_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        ["src/flowsynth/neural/_kernels.pyx"],
        compiler_directives={"language_level": 3, "boundscheck": False,
                             "wraparound": False, "cdivision": True},
    )


setup(
    ext_modules=extensions(),
    include_dirs=[numpy.get_include()],
    cmdclass={"build_ext": OptionalBuildExt},
)
