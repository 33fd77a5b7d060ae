"""Build the optional compiled convolution kernels.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes the inner attack loop faster on the
small zoo shapes. Cython is only needed to regenerate the checked-in
_conv.c from the .pyx; without it the extension compiles from the C file,
and if compilation fails entirely the install proceeds without it.
"""

import numpy as np
from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

_EXT = dict(
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

if cythonize is not None:
    ext_modules = cythonize(
        [Extension("ensattack.kernels._conv",
                   ["src/ensattack/kernels/_conv.pyx"], **_EXT)],
        language_level="3",
    )
else:
    ext_modules = [Extension("ensattack.kernels._conv",
                             ["src/ensattack/kernels/_conv.c"], **_EXT)]


class OptionalBuildExt(build_ext):
    """The extension is a speedup, not a requirement."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # toolchain missing entirely
            print(f"skipping compiled kernels ({exc}); NumPy fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # compile/link failure
            print(f"skipping {ext.name} ({exc}); NumPy fallback will be used")


setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
