"""Sparse-to-dense box annotation of video clips by bidirectional tracking."""
from .geometry import BBox, FrameSize, area, clip, intersection, iou
from .densify import ActionClip, DensifyParams, PseudoLabel, Seed, densify_clip
from .ensemble import Detection, EnsembleParams, joint_nms, nms
from .evaluation import average_precision, evaluate

__version__ = "0.1.0"
