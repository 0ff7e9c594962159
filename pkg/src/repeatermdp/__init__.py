"""Exact waiting-time optimization for quantum repeater chains.

The chain of n segments distributes entanglement probabilistically and
merges adjacent ready groups by probabilistic swapping.  Which pair to
swap, and when, is a sequential decision problem; this package builds
the exact Markov decision process (with or without classical restart
signalling), solves it for the minimal expected waiting time, and
compares the optimum against fixed schemes such as doubling and
swap-as-soon-as-possible.
"""

from .errors import IntractableError, NumericalError
from .states import (
    Entry,
    Model,
    StateSpace,
    all_idle,
    canonicalize,
    enumerate_states,
    mirror,
    parse_state,
    predicted_count,
    state_to_str,
)
from .mdp import (
    Action,
    Mdp,
    ModelParams,
    TransitionDist,
    available_actions,
    build_mdp,
    get_structure,
    potential,
    swap_transition,
    wait_transition,
)

__all__ = [
    "Action",
    "Entry",
    "IntractableError",
    "Mdp",
    "Model",
    "ModelParams",
    "NumericalError",
    "StateSpace",
    "TransitionDist",
    "all_idle",
    "available_actions",
    "build_mdp",
    "canonicalize",
    "enumerate_states",
    "get_structure",
    "mirror",
    "parse_state",
    "potential",
    "predicted_count",
    "state_to_str",
    "swap_transition",
    "wait_transition",
]
