"""Pseudo-spectral solvers for the zero-electron-mass limit of a hydrodynamic plasma model."""

__version__ = "0.1.0"

from zmlim.config import ExperimentConfig, load_config
from zmlim.fields import Grid, ScalarField, TensorField, VectorField

__all__ = ["ExperimentConfig", "Grid", "ScalarField", "TensorField", "VectorField", "load_config"]
