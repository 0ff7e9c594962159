"""Repeater chain states: representation, mirror lumping, enumeration.

A chain of n segments is described by an ordered sequence of entries:

* an idle segment still trying to distribute an entangled pair,
* a group of k >= 1 contiguous segments that have been distributed and
  swapped into a single long-range pair,
* (classical-communication model only) a segment counting down c >= 1
  time steps until a restart signal arrives.

Entries are encoded as plain ints so states are cheap hashable tuples:
0 is idle, 1..n are group sizes, CD_BASE + c is a countdown with c ticks
left.  This encoding makes the tuple's natural ordering coincide with the
canonical entry order (idle < groups ascending < countdowns ascending),
so lexicographic tuple comparison is the state order used everywhere.

An optimal scheme must act identically on mirror-image states, so the
state space is compressed by lumping each state with its reversal and
keeping the lexicographically smaller of the two as the class
representative.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Iterator

State = tuple[int, ...]

IDLE = 0
CD_BASE = 1 << 10  # group sizes stay far below this


class Model(enum.Enum):
    """Physical model: with or without classical-communication restarts."""

    NOCC = "nocc"
    CC = "cc"


def group(k: int) -> int:
    if k < 1:
        raise ValueError(f"group size must be >= 1, got {k}")
    return k


def countdown(c: int) -> int:
    if c < 1:
        raise ValueError(f"countdown must be >= 1, got {c}")
    return CD_BASE + c


def is_idle(e: int) -> bool:
    return e == IDLE


def is_group(e: int) -> bool:
    return 0 < e < CD_BASE


def is_countdown(e: int) -> bool:
    return e > CD_BASE


def group_size(e: int) -> int:
    if not is_group(e):
        raise ValueError(f"entry {e} is not a group")
    return e


def countdown_left(e: int) -> int:
    if not is_countdown(e):
        raise ValueError(f"entry {e} is not a countdown")
    return e - CD_BASE


@dataclass(frozen=True)
class Entry:
    """Structured view of one entry; `value` is the group size or ticks left."""

    kind: str  # "idle" | "group" | "countdown"
    value: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "idle":
            if self.value is not None:
                raise ValueError("idle entries carry no value")
        elif self.kind in ("group", "countdown"):
            if self.value is None or self.value < 1:
                raise ValueError(f"{self.kind} value must be a positive integer")
        else:
            raise ValueError(f"unknown entry kind {self.kind!r}")

    def code(self) -> int:
        if self.kind == "idle":
            return IDLE
        if self.kind == "group":
            return group(self.value)
        return countdown(self.value)

    @staticmethod
    def from_code(e: int) -> "Entry":
        if is_idle(e):
            return Entry("idle")
        if is_group(e):
            return Entry("group", e)
        return Entry("countdown", e - CD_BASE)


def segments(state: State) -> int:
    """Number of chain segments a state occupies (groups count their size)."""
    return sum(group_size(e) if is_group(e) else 1 for e in state)


def validate_state(state: State, n: int, model: Model) -> None:
    """Raise ValueError unless `state` is a well-formed n-segment state."""
    if not state:
        raise ValueError("state has no entries")
    for e in state:
        if is_idle(e):
            continue
        if is_group(e):
            if not 1 <= e <= n:
                raise ValueError(f"group size {e} out of range for n={n}")
        elif is_countdown(e):
            if model is not Model.CC:
                raise ValueError("countdown entries exist only in the CC model")
            if not 1 <= countdown_left(e) <= n:
                raise ValueError(f"countdown {countdown_left(e)} out of range for n={n}")
        else:
            raise ValueError(f"bad entry code {e}")
    if segments(state) != n:
        raise ValueError(f"entries cover {segments(state)} segments, expected {n}")


def mirror(state: State) -> State:
    """Reverse the entry sequence (an involution)."""
    return state[::-1]


def canonicalize(state: State) -> State:
    """Representative of the mirror class: the lexicographically smaller one."""
    rev = state[::-1]
    return rev if rev < state else state


def all_idle(n: int) -> State:
    return (IDLE,) * n


def is_terminal(state: State, n: int) -> bool:
    """True for the absorbing state: one group spanning the whole chain."""
    return len(state) == 1 and state[0] == n


def state_to_str(state: State) -> str:
    """Render a state, e.g. "0(1)(2)1"; group sizes >= 10 are bracketed."""
    parts = []
    for e in state:
        if is_idle(e):
            parts.append("0")
        elif is_group(e):
            parts.append(str(e) if e < 10 else f"[{e}]")
        else:
            parts.append(f"({countdown_left(e)})")
    return "".join(parts)


def parse_state(s: str) -> State:
    """Inverse of state_to_str."""
    entries: list[int] = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch == "0":
            entries.append(IDLE)
            i += 1
        elif ch.isdigit():
            entries.append(group(int(ch)))
            i += 1
        elif ch == "(":
            j = s.index(")", i)
            entries.append(countdown(int(s[i + 1 : j])))
            i = j + 1
        elif ch == "[":
            j = s.index("]", i)
            entries.append(group(int(s[i + 1 : j])))
            i = j + 1
        else:
            raise ValueError(f"cannot parse state string {s!r} at position {i}")
    if not entries:
        raise ValueError("empty state string")
    return tuple(entries)


def predicted_count(n: int) -> int:
    """Exact size of the mirror-lumped state set for the no-CC model.

    Equals (F(2n+1) + F(n+2)) / 2 with the convention F(1) = F(2) = 1;
    the unlumped set has F(2n+1) states and F(n+2) of them are palindromes.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return (fibonacci(2 * n + 1) + fibonacci(n + 2)) // 2


def fibonacci(k: int) -> int:
    if k < 1:
        raise ValueError(f"fibonacci index must be >= 1, got {k}")
    a, b = 1, 1
    for _ in range(k - 2):
        a, b = b, a + b
    return b


@dataclass(frozen=True)
class StateSpace:
    """Indexed canonical states of one chain, absorbing state last.

    Built by breadth-first closure from the all-idle state under every
    admissible action and every transition outcome, so it is valid for
    both models (the CC state count has no known closed form).
    """

    n: int
    model: Model
    lumped: bool
    states: tuple[State, ...]
    index_of: dict[State, int]

    @property
    def terminal_index(self) -> int:
        return len(self.states) - 1

    @property
    def initial_index(self) -> int:
        return self.index_of[all_idle(self.n)]

    @property
    def num_nonterminal(self) -> int:
        return len(self.states) - 1

    def index_of_str(self, s: str) -> int:
        state = parse_state(s)
        if self.lumped:
            state = canonicalize(state)
        return self.index_of[state]

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "model": self.model.value,
                "states": [state_to_str(s) for s in self.states],
            }
        )


def enumerate_states(n: int, model: Model, lumped: bool = True) -> StateSpace:
    """Breadth-first reachability closure from the all-idle state.

    Delegates to the (cached) MDP structure builder so that enumeration
    and transition semantics can never drift apart.
    """
    from .mdp import get_structure  # deferred: transition semantics live there

    return get_structure(n, model, lumped).space


def iter_entry_views(state: State) -> Iterator[Entry]:
    for e in state:
        yield Entry.from_code(e)
