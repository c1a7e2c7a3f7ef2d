"""Build script for the compiled residual-assembly kernels.

The hot loops (state evaluation, pointwise condensation recovery, flux
contraction) live in ``moistdg/_kernels.pyx`` and are compiled with Cython.
Note that we deliberately do *not* use ``-ffast-math``, and we disable FMA
contraction: the solver relies on IEEE semantics (exact negation, commutative
addition, uncontracted a*b+c) for its conservation and mirror-symmetry
properties.  GCC contracts multiply-adds by default at -O3, which fuses the
two halves of the symmetrically paired quadrature reductions differently and
breaks left/right symmetry at the last ulp.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "moistdg._kernels",
        sources=["src/moistdg/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=[
            "-O3",
            "-march=native",
            "-fno-math-errno",
            "-ffp-contract=off",
        ],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
