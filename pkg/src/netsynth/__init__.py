"""Distributed H∞ state-feedback synthesis for homogeneous networks."""
from .model import (ClosedLoopSystem, ControllerGains, DecomposableMatrix, Dimensions,
                    HomogeneousSystem, PatternGraph, SubsystemPlant, close_loop, expand,
                    interconnection_matrix, load_fixture, load_system, random_system, subsystem_plant,
                    validate)

__version__ = "0.1.0"

__all__ = ["ClosedLoopSystem", "ControllerGains", "DecomposableMatrix", "Dimensions",
           "HomogeneousSystem", "PatternGraph", "SubsystemPlant", "close_loop", "expand",
           "interconnection_matrix", "load_fixture", "load_system", "random_system",
           "subsystem_plant", "validate", "__version__"]
