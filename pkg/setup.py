"""Build the optional compiled kernels.

The package is usable without them: ``cramer_attack._backend`` falls back to
pure-Python implementations when the extension cannot be imported.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("CRAMER_ATTACK_NO_EXT") != "1":
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
                    "cramer_attack._kernels",
                    ["src/cramer_attack/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
