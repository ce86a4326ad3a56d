"""Learning DMP motion primitives and a reactive behaviour tree from demonstrations."""

from .bt import Blackboard, Status, from_xml, run_until_terminal, tick, to_xml
from .config import PipelineConfig
from .decision_tree import LabeledExample, learn_tree, predict, tree_to_dnf
from .dmp import DMPHyper, DMPPolicy, HyperGrid, fit_weights, grid_search, rollout
from .dtw import dtw_exact, fastdtw
from .logic import BooleanDNF, equivalent, minimize
from .segmentation import SegmentationConfig, merge_equivalent_dmps, segment_and_fit
from .synthesis import export_dot, select_pruning, synthesize
from .trajectory import ConditionVector, Demonstration, Trajectory, load_dataset, resample_uniform, save_dataset

__version__ = "0.1.0"
