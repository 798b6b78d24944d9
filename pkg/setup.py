import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("VISFORM_NO_EXT") != "1":
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "visform.pose._quest_cy",
                ["src/visform/pose/_quest_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
