"""Builds the optional compiled kernel extension.

The package works without it: refine_kit.kernels falls back to the pure
numpy implementation when the extension is missing (or when the
REFINE_KIT_NO_EXT environment variable is set).
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "refine_kit.kernels._hot",
                ["src/refine_kit/kernels/_hot.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
