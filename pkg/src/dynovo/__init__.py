"""Dynamic-object-aware RGB-D visual odometry.

Moving objects are voted out via pairwise 3D centroid-distance changes,
deforming objects are caught with a Chamfer-distance check, and the camera
trajectory is estimated from features on the remaining static regions,
then refined with pose graph optimization.
"""

from .config import RunConfig
from .dataset_io import (FrameBundle, InstanceMaskSet, Trajectory,
                         load_sequence, read_trajectory, write_trajectory)
from .depth_geometry import CameraIntrinsics, DepthFrame, GaussianKernelParams
from .geometry import Se3Pose

__all__ = [
    "CameraIntrinsics", "DepthFrame", "FrameBundle", "GaussianKernelParams",
    "InstanceMaskSet", "RunConfig", "Se3Pose", "Trajectory",
    "load_sequence", "read_trajectory", "write_trajectory",
]

__version__ = "0.1.0"
