"""Federated generative imitation learning of human mobility with private reward aggregation.

Modules: ``core`` (data model), ``env`` (EPR transition kernel), ``neuro``
(numpy autodiff), ``features``/``policy``/``discriminator`` (networks),
``aggregation`` (Laplace-noised rewards), ``orchestrator`` (federated
rounds), ``evaluation`` and ``attacks`` (utility and privacy), ``fileio``,
``config``, ``experiments`` and ``cli``.
"""

from .core import (Action, ClientDataset, DomainError, LocationGrid, SpatioTemporalPoint, State, Trajectory,
                   make_rng)

__version__ = "0.1.0"

__all__ = ["Action", "ClientDataset", "DomainError", "LocationGrid", "SpatioTemporalPoint", "State", "Trajectory",
           "make_rng", "__version__"]
