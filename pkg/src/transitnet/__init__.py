"""Exoplanet transit-candidate classification with from-scratch 1D CNNs."""

from .lightcurve import LightCurve, TceMeta, ViewSet, preprocess
from .model import ArchitectureSpec, BranchSpec, Model, build, count_params, preset
from .numerics import make_rng
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "BranchSpec",
    "LightCurve",
    "Model",
    "TceMeta",
    "TrainConfig",
    "ViewSet",
    "build",
    "count_params",
    "evaluate",
    "make_rng",
    "preprocess",
    "preset",
    "train",
]
