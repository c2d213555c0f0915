import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("VSR_FDX_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "vsr_fdx._kernel",
                    ["src/vsr_fdx/_kernel.pyx"],
                    # no FMA contraction: keeps results bit-identical to the Python kernel
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
