"""Build the optional Cython kernels.

The package works without them: ``energygan._backend`` falls back to the
numpy implementations in ``energygan._kernels_py`` when the extension is
missing.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("ENERGYGAN_NO_EXT"):
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
                    "energygan._kernels",
                    sources=["src/energygan/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: keeps results bit-identical to numpy
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
