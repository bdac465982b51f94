"""Accessibility and small-time local controllability of planar chains
with one passive joint."""

from .model import ChainModel, LinkParams, ModelError, State, load_model, uniform_chain
from .pfl import VectorFieldSet, control_affine, torque_law
from .lie import BracketExpr, evaluate_expr

__version__ = "0.1.0"
