"""Lagrangian, Hamiltonian and constrained mechanics on general algebroids,
given by structure functions in local coordinates."""

from .algebroid import AlgebroidSpec, DualPoint, EPoint, classify
from .constraints import ConstraintSpec, MechanicalHamiltonian
from .errors import MechanicsError
from .expr import eval_jet2, parse
from .models import list_models, load_model

__all__ = [
    "AlgebroidSpec",
    "ConstraintSpec",
    "DualPoint",
    "EPoint",
    "MechanicalHamiltonian",
    "MechanicsError",
    "classify",
    "eval_jet2",
    "list_models",
    "load_model",
    "parse",
]
