"""Fate classification and variational audits for Hill's-type lunar problems."""

from .model import CartesianState, DomainError, ModelParams, SymplecticState

__all__ = ["CartesianState", "DomainError", "ModelParams", "SymplecticState"]
__version__ = "0.1.0"
