"""Boundary-aligned frame fields on triangle and tetrahedral meshes."""

from .field2d import Field2, optimize2
from .field3d import Field3, SingularityGraph, closest_frame, closest_frames, optimize3
from .lsq import LsqSystem, SolveStats
from .mesh import (MeshFormatError, MeshTopologyError, TetMesh, TriMesh2, box_tet_mesh,
                   load_tet_mesh, load_tri_mesh)
from .report import FieldReport

__all__ = [
    "Field2", "Field3", "FieldReport", "LsqSystem", "MeshFormatError", "MeshTopologyError",
    "SingularityGraph", "SolveStats", "TetMesh", "TriMesh2", "box_tet_mesh", "closest_frame",
    "closest_frames", "load_tet_mesh", "load_tri_mesh", "optimize2", "optimize3",
]
