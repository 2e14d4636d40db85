"""Build the optional compiled scan kernel.

If Cython, numpy or a C compiler is unavailable the package installs without
``rdis._scan`` and falls back to the numpy kernel at import time.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: skipping compiled kernel ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
            return
        except Exception as exc:  # noqa: BLE001
            print(f"warning: optimized build of {ext.name} failed ({exc}); retrying with -O2")
        ext.extra_compile_args = ["-O2"]
        ext.libraries = [lib for lib in ext.libraries if lib != "mvec"]
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc})")


def extensions():
    if os.environ.get("RDIS_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "rdis._scan",
        ["src/rdis/_scan.pyx"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        include_dirs=[np.get_include(), "src/rdis"],
        # -ffast-math only at compile time: lets the gate loops use SIMD exp
        # without linking crtfastmath (which would flush denormals globally)
        extra_compile_args=["-O3", "-march=native", "-ffast-math"],
        libraries=["m", "mvec"],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
