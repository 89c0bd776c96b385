"""Build the optional compiled path stepper.

If Cython or a compiler is unavailable the package still installs; the
numpy fallback in ``stochwave._kernels_py`` is used instead.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("STOCHWAVE_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("stochwave._kernels", ["src/stochwave/_kernels.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
