"""Attenuated ray transform tomography of tensor fields with refraction.

The package covers the forward transform along straight lines and along
geodesics of ``g = n^2 I`` on the unit disc, two representations of its
adjoint (weighted backprojection and a transport PDE), Landweber
reconstruction and an experiment harness.
"""

from .adjoint import (EuclideanBackprojection, GeodesicBackprojection, adjoint_operator,
                      backproject_euclid, backproject_geodesic, data_inner, field_inner)
from .forward import (EuclideanRayTransform, GeodesicRayTransform, forward_operator,
                      potential_field_gradient, ray_transform_euclid, ray_transform_geodesic)
from .geometry import RefractiveMedium, builtin_medium, geodesic_trace, trace_geodesics
from .grid import BoundaryData, PolarGrid, TensorField
from .recon import LandweberResult, ReconConfig, add_relative_uniform_noise, landweber, relative_l2_error
from .transport import PDEAdjoint, assemble_system, duality_defect, pde_adjoint, solve_min_norm

__version__ = "0.1.0"

__all__ = [
    "BoundaryData", "EuclideanBackprojection", "EuclideanRayTransform", "GeodesicBackprojection",
    "GeodesicRayTransform", "LandweberResult", "PDEAdjoint", "PolarGrid", "ReconConfig",
    "RefractiveMedium", "TensorField", "add_relative_uniform_noise", "adjoint_operator",
    "assemble_system", "backproject_euclid", "backproject_geodesic", "builtin_medium",
    "data_inner", "duality_defect", "field_inner", "forward_operator", "geodesic_trace",
    "landweber", "pde_adjoint", "potential_field_gradient", "ray_transform_euclid",
    "ray_transform_geodesic", "relative_l2_error", "solve_min_norm", "trace_geodesics",
]
