"""Pose-graph localization with a temporary graph distilled into a compact main graph."""
from .geometry import Pose, Rotation
from .graph import Graph
from .solver import SolverConfig, OptReport, optimize, marginal_information
from .association import AssociationConfig, RawDetection, AssociatedDetection, associate, hungarian
from .manager import DualGraphConfig, DualGraphManager, RefinedConstraint, replay
from .trajectory import Trajectory

__version__ = "0.1.0"
