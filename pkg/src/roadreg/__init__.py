"""roadreg: register prior point clouds to fixed roadside camera images.

The pipeline renders photorealistic grayscale views from the cloud while
keeping per-pixel 2D-3D correspondence, estimates an initial camera pose
from a rough position via feature matching and PnP, and refines the pose
by minimizing point-to-line reprojection error on SE(3).
"""

from .core import (CameraIntrinsics, Plane, PointCloud, PoseSE3, Ray, Twist,
                   boxplus, exp_so3, log_so3, pixel_ray, project_point,
                   project_points)
from .render import RenderParams, RenderedView, render_view
from .matchinit import InitialGuessParams, estimate_initial_guess, solve_pnp_ransac
from .edges import EdgeParams, build_edge_index, extract_edges_2d, lift_edges_3d, sample_edge_points
from .optim import OptimizeParams, RegistrationResult, optimize
from .metrics import ground_distance_errors, locate_3d, pose_error

__version__ = "0.1.0"
