"""Finite element simulation of a bioreactor landfill cell.

Organic-carbon consumption, heat, Darcy gas flow, SUPG gas and leachate
transport on unstructured tetrahedral meshes.
"""

from .driver import ScenarioConfig, load_config, run
from .mesh import BoundaryLabel, GeometrySpec, Mesh, generate_alveolus

__all__ = ["BoundaryLabel", "GeometrySpec", "Mesh", "ScenarioConfig", "generate_alveolus",
           "load_config", "run"]
__version__ = "0.1.0"
