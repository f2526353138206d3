from .chamfer import chamfer
from .cost import CostModel, CostTerms, joint_cost, overlap_and_contact
from .mesh import TriMesh, parse_obj, sample_surface, sample_volume, write_obj
from .sdf import MeshSDF, brute_force_distance, brute_force_signed_distance, brute_force_winding, signed_distance
from .transforms import PoseParams, RigidTransform, minimal_rotation, rotation_about, transform_from_axes, wrap_angle

__all__ = [
    "CostModel",
    "CostTerms",
    "MeshSDF",
    "PoseParams",
    "RigidTransform",
    "TriMesh",
    "brute_force_distance",
    "brute_force_signed_distance",
    "brute_force_winding",
    "chamfer",
    "joint_cost",
    "minimal_rotation",
    "overlap_and_contact",
    "parse_obj",
    "rotation_about",
    "sample_surface",
    "sample_volume",
    "signed_distance",
    "transform_from_axes",
    "wrap_angle",
]
