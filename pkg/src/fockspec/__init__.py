"""fockspec: spectral analysis of a three-sector lattice Hamiltonian.

The package discretizes a bounded self-adjoint operator matrix acting on
scalar + one-particle + symmetric two-particle sectors over the
3-torus, evaluates the associated Fredholm determinants and their root
branches, assembles the essential spectrum, and runs the fixed-point and
compactness experiments for the symmetrized Weinberg operator.
"""

__version__ = "0.1.0"
