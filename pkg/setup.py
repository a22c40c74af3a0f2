import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MICROTIKZ_NO_EXT") != "1":
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "microtikz._kernels._fast",
                ["src/microtikz/_kernels/_fast.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
