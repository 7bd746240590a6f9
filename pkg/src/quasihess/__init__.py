"""Quasi-Hessian geometry of Legendre submanifolds given by generating functions."""
from .divergence import atlas_divergence, contrast_tensors
from .equivalence import AffineLegendreMap, Atlas, apply, transition_point
from .expr import Jet3, eval_jet3, parse, to_source
from .model import ChartPoint, ContactPoint, GeneratingChart, Partition, lift, load_model
from .tensors import cubic, degeneracy_test, frames, metric

__version__ = "0.1.0"
