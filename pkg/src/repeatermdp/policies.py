"""Fixed comparison schemes: doubling, swap-asap, and the three n=4
reference tables, plus policy (de)serialization.

Doubling treats the chain as nested halves: a swap is attempted only
when two equal groups complete both halves of a size-2^l dyadic block.
Encoded as a stationary state-to-action map it must reproduce the n=4
reference table, including the listed action on states that doubling
itself can never reach (e.g. 021, where the group alignment is
incompatible with the bracket structure; such states fall back to
swap-asap).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import states as st
from .mdp import Action, Mdp, MdpStructure, WAIT
from .solve import Policy
from .states import State

NAMED_SCHEMES = ("doubling", "swap-asap", "pi0", "pi1", "pi2")


@dataclass(frozen=True)
class SchemeId:
    """Identifier of a comparison scheme; `label` names custom policies."""

    name: str
    label: str | None = None

    def __post_init__(self) -> None:
        if self.name not in NAMED_SCHEMES + ("custom",):
            raise ValueError(f"unknown scheme {self.name!r}")

    def __str__(self) -> str:
        return self.label if self.name == "custom" and self.label else self.name


def _structure_of(mdp_or_structure) -> MdpStructure:
    return getattr(mdp_or_structure, "structure", mdp_or_structure)


def swap_asap_policy(mdp) -> Policy:
    """Swap whenever an adjacent ready pair exists (smallest boundary),
    otherwise wait."""
    structure = _structure_of(mdp)
    choice = np.zeros(structure.num_nonterminal, dtype=np.int32)
    for idx, acts in enumerate(structure.actions):
        # actions are ordered swaps-ascending then wait, so the first
        # entry is the wanted one either way; keep the scan explicit
        choice[idx] = 0 if acts[0].kind == "swap" else acts.index(WAIT)
    return Policy(choice=choice, label="swap-asap")


def _group_layout(state: State) -> list[tuple[int, int, int]]:
    """(entry index, 1-based leftmost segment, size) of each group."""
    out = []
    pos = 1
    for i, e in enumerate(state):
        if st.is_group(e):
            out.append((i, pos, e))
            pos += e
        else:
            pos += 1
    return out


def _is_pow2(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


def _canonical_boundary(state: State, b: int) -> int:
    if state == state[::-1]:
        return min(b, len(state) - b)
    return b


def _doubling_action(state: State) -> Action:
    groups = _group_layout(state)
    by_entry = {i: (x, k) for i, x, k in groups}
    brackets = []
    for i, x1, k1 in groups:
        nxt = by_entry.get(i + 1)
        if nxt is None:
            continue
        x2, k2 = nxt
        # the pair must fill an aligned dyadic block of size 2*k1
        if k1 == k2 and _is_pow2(k1) and (x1 - 1) % (2 * k1) == 0:
            brackets.append(_canonical_boundary(state, i + 1))
    if brackets:
        return Action("swap", min(brackets))
    consistent = all(_is_pow2(k) and (x - 1) % k == 0 for _, x, k in groups)
    can_wait = any(st.is_idle(e) or st.is_countdown(e) for e in state)
    if consistent and can_wait:
        return WAIT
    # state unreachable under doubling: complete with swap-asap
    for i in range(len(state) - 1):
        if st.is_group(state[i]) and st.is_group(state[i + 1]):
            return Action("swap", _canonical_boundary(state, i + 1))
    return WAIT


def doubling_policy(mdp) -> Policy:
    """Stationary encoding of the nested-halves scheme (n must be 2^d)."""
    structure = _structure_of(mdp)
    if not _is_pow2(structure.n):
        raise ValueError(f"doubling needs a power-of-two segment count, got n={structure.n}")
    choice = np.empty(structure.num_nonterminal, dtype=np.int32)
    for idx, acts in enumerate(structure.actions):
        if len(acts) == 1:
            choice[idx] = 0
            continue
        choice[idx] = acts.index(_doubling_action(structure.space.states[idx]))
    return Policy(choice=choice, label="doubling")


# Reference action tables for n=4 on the states admitting several
# actions; None means wait, an integer is the swap boundary in the
# canonical representative ("swap 3 and 4" on the palindrome 1111 is
# mirror-identical to boundary 1).
_N4_TABLES: dict[str, dict[str, int | None]] = {
    "pi0": {"0011": 3, "0110": None, "0111": 3, "1011": 3,
            "1111": 1, "012": None, "112": 1, "021": 2},
    "pi1": {"0011": 3, "0110": 2, "0111": 3, "1011": 3,
            "1111": 1, "012": None, "112": 1, "021": 2},
    "pi2": {"0011": 3, "0110": 2, "0111": 3, "1011": 3,
            "1111": 1, "012": 2, "112": 1, "021": 2},
}


def _lowest_level_action(state: State, acts: tuple[Action, ...]) -> Action:
    """Swap only pairs of two single segments; used to extend pi1 to the
    countdown states of the CC model, mirroring its behaviour on the
    listed table (it merges bottom-level pairs first)."""
    unit = [
        a for a in acts
        if a.kind == "swap" and state[a.boundary - 1] == 1 and state[a.boundary] == 1
    ]
    if unit:
        return min(unit, key=lambda a: a.boundary)
    if WAIT in acts:
        return WAIT
    return acts[0]


def builtin_policy_n4(which: str, mdp) -> Policy:
    """One of the three n=4 reference schemes, transcribed exactly on the
    eight listed states; the CC model's extra multi-action states (those
    holding countdown entries) follow each scheme's completion rule."""
    structure = _structure_of(mdp)
    if structure.n != 4:
        raise ValueError(f"{which} is defined for n=4 only, got n={structure.n}")
    table = _N4_TABLES[which]
    choice = np.empty(structure.num_nonterminal, dtype=np.int32)
    for idx, acts in enumerate(structure.actions):
        state = structure.space.states[idx]
        key = st.state_to_str(state)
        if key in table:
            b = table[key]
            act = WAIT if b is None else Action("swap", b)
        elif len(acts) == 1:
            act = acts[0]
        elif which == "pi0":
            act = _doubling_action(state)
        elif which == "pi1":
            act = _lowest_level_action(state, acts)
        else:  # pi2 keeps swapping as soon as possible
            act = acts[0] if acts[0].kind == "swap" else WAIT
        choice[idx] = acts.index(act)
    return Policy(choice=choice, label=which)


def scheme_policy(scheme: SchemeId | str, mdp) -> Policy:
    """Resolve a scheme identifier (or CLI string, possibly file=PATH)."""
    if isinstance(scheme, str):
        if scheme.startswith("file="):
            return load_policy(scheme[5:], mdp)
        scheme = SchemeId(scheme.replace("_", "-") if "asap" in scheme else scheme)
    name = scheme.name
    if name == "doubling":
        return doubling_policy(mdp)
    if name == "swap-asap":
        return swap_asap_policy(mdp)
    if name in ("pi0", "pi1", "pi2"):
        return builtin_policy_n4(name, mdp)
    raise ValueError(f"cannot build scheme {scheme}")


def save_policy(path: str | Path, mdp, policy: Policy) -> None:
    structure = _structure_of(mdp)
    Path(path).write_text(json.dumps(policy.to_dict(structure), indent=1))


def load_policy(path: str | Path, mdp, label: str | None = None) -> Policy:
    structure = _structure_of(mdp)
    mapping = json.loads(Path(path).read_text())
    return Policy.from_dict(structure, mapping, label=label or Path(path).stem)
