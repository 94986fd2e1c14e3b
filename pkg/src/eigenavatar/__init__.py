"""Eigen-deformation and eigen-texture coding of articulated mesh sequences.

Per-part PCA subspaces of the displacement between a skinned body model and
registered clothed meshes, per-triangle PCA subspaces of observed textures,
and small tanh networks that predict both sets of coefficients from joint
rotations.
"""
__version__ = "0.1.0"

from .errors import (ArchiveError, ConfigurationError, DegenerateInputError, EigenAvatarError,
                     ImageFormatError, MeshParseError, NoTextureError, OptimizationError,
                     ParameterError, PreconditionError, TrainingError)
from .mesh import BodyModel, Mesh, PoseParams, RigidTransform, ShapeParams, Skeleton, pose_model
from .subspace import EigenSubspace

__all__ = [
    "ArchiveError", "BodyModel", "ConfigurationError", "DegenerateInputError",
    "EigenAvatarError", "EigenSubspace", "ImageFormatError", "Mesh", "MeshParseError",
    "NoTextureError", "OptimizationError", "ParameterError", "PoseParams",
    "PreconditionError", "RigidTransform", "ShapeParams", "Skeleton", "TrainingError",
    "__version__", "pose_model",
]
