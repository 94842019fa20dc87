"""Training-free, task-oriented grasp selection.

Pipeline: render or load an RGB-D observation, sample stable antipodal
grasp candidates, cluster them into a small diverse set, visually prompt a
vision-language model with one of five annotation strategies, and parse the
reply back into the chosen grasp.
"""

from .candidates import (CandidateSet, FeasibilityConfig, GraspCandidate,
                         WorkspaceScene, feasibility_filter,
                         generate_synthetic, load_candidates, save_candidates,
                         top_k)
from .clustering import (ClusterConfig, ClusterResult, diversify,
                         diversify_nested, kmeans, select_k, silhouette)
from .errors import GraspSelectError
from .geometry import (CameraIntrinsics, DepthImage, GraspPose,
                       GripperGeometry, PointCloud, project, unproject)
from .prompting import (MarkerStyle, QueryBundle, Strategy, VlmReply,
                        build_query, parse_reply)
from .scenes import (SceneDescription, SceneObservation, TaskSpec, ViewSpec,
                     load_scene, render_view, save_scene)
from .vlm import (AuditRecord, HttpVlm, ScriptedVlm, SelectConfig,
                  VlmEndpointConfig, match_point_to_grasp, select_grasp)

__version__ = "0.1.0"

__all__ = [
    "AuditRecord", "CameraIntrinsics", "CandidateSet", "ClusterConfig",
    "ClusterResult", "DepthImage", "FeasibilityConfig", "GraspCandidate",
    "GraspPose", "GraspSelectError", "GripperGeometry", "HttpVlm",
    "MarkerStyle", "PointCloud", "QueryBundle", "SceneDescription",
    "SceneObservation", "ScriptedVlm", "SelectConfig", "Strategy",
    "TaskSpec", "ViewSpec", "VlmEndpointConfig", "VlmReply", "WorkspaceScene",
    "build_query", "diversify", "diversify_nested", "feasibility_filter",
    "generate_synthetic", "kmeans", "load_candidates", "load_scene",
    "match_point_to_grasp", "parse_reply", "project", "render_view",
    "save_candidates", "save_scene", "select_grasp", "select_k",
    "silhouette", "top_k", "unproject",
]
