"""Equivariant graph networks for velocity fields on tetrahedral artery meshes."""

__version__ = "0.1.0"
