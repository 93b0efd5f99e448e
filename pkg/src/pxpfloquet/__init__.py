"""Floquet engineering of multi-body terms in blockade-constrained (PXP) spin models."""

__version__ = "0.1.0"

from .lattice import Lattice, build_lattice  # noqa: E402
from .hilbert import SectorBasis, make_basis  # noqa: E402

__all__ = ["Lattice", "SectorBasis", "build_lattice", "make_basis", "__version__"]
