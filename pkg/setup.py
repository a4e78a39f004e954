"""Build script: compiles the optional fast kernel extension when Cython and a
C toolchain are available.  Without them the package installs pure-Python and
the numpy fallback kernels are used (see src/accmon/backend/__init__.py).

To force a local build of the extension:

    python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "accmon.backend._core",
                ["src/accmon/backend/_core.pyx"],
                extra_compile_args=["-O3", "-march=native"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython in the build environment: install without the extension.
    pass

setup(ext_modules=ext_modules)
