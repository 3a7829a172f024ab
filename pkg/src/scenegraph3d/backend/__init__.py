"""Deformation graph, robust optimization, interpolation and reconciliation."""
from .deform import (InterpolationReport, Interpolator, ReconcileReport, export_tum, import_tum, interpolate,
                     merge_objects, merge_places, reconcile)
from .deformation import (DeformationConfig, DeformationGraph, DeformationGraphError, DefEdge, add_loop_closures,
                          agent_poses, build_deformation_graph, control_points, pose_weights)
from .solver import (GncConfig, LmResult, OptimizeResult, SingularSystemError, edge_costs, edge_jacobians,
                     edge_residuals, levenberg_marquardt, optimize, tls_weights, total_cost)
