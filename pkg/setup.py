import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("RECAM_NO_EXT", "") in ("", "0"):
    try:
        from Cython.Build import cythonize
    except ImportError:  # pure-Python fallback only
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "recam._kernels._bpe_cy",
                    ["src/recam/_kernels/_bpe_cy.pyx"],
                    language="c++",
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
