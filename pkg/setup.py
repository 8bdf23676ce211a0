"""Build script for the optional compiled KDE core.

The package works without it (a numpy implementation is selected at import),
so a failed or skipped compile is not fatal.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("LPTSCAN_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "lptscan._kdecore",
                    ["src/lptscan/_kdecore.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-ffast-math", "-march=native"],
                    libraries=["mvec", "m"],
                )
            ],
            language_level=3,
        )

setup(ext_modules=ext_modules)
