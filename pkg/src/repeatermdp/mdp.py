"""MDP of a repeater chain: admissible actions, transitions, costs.

Time advances only on "wait" steps (cost 1): every idle segment then
attempts distribution (success probability p) and every countdown ticks
down by one.  A "swap" of two adjacent ready groups is instantaneous
(cost 0) and succeeds with probability a; on failure both groups reset,
either immediately (no-CC model) or through a wave of countdown entries
whose length equals each segment's distance from the swapping station
(CC model).

Transition probabilities are polynomial in p, q = 1-p and a, so the whole
MDP is built once per (n, model) as a symbolic structure (multiplicity
and exponents per outcome) and realized numerically for any parameter
point with a few vectorized array operations.  This makes dense (p, a)
parameter sweeps cheap: the expensive enumeration is shared.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass

import numpy as np

from . import states as st
from .states import IDLE, Model, State, StateSpace


@dataclass(frozen=True)
class ModelParams:
    """Chain parameters: distribution success p, swap success a, model."""

    p: float
    a: float
    model: Model = Model.NOCC

    def __post_init__(self) -> None:
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must be in (0, 1], got {self.p}")
        if not 0.0 < self.a <= 1.0:
            raise ValueError(f"a must be in (0, 1], got {self.a}")

    @property
    def q(self) -> float:
        return 1.0 - self.p


@dataclass(frozen=True)
class Action:
    """Either wait for distribution or swap the pair of adjacent groups
    whose left member sits at 1-based entry index `boundary` of the
    canonical representative."""

    kind: str  # "wait" | "swap"
    boundary: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "wait":
            if self.boundary is not None:
                raise ValueError("wait takes no boundary")
        elif self.kind == "swap":
            if self.boundary is None or self.boundary < 1:
                raise ValueError("swap needs a positive boundary index")
        else:
            raise ValueError(f"unknown action kind {self.kind!r}")

    def __str__(self) -> str:
        return "wait" if self.kind == "wait" else f"swap {self.boundary}"

    @staticmethod
    def parse(s: str) -> "Action":
        s = s.strip()
        if s == "wait":
            return Action("wait")
        if s.startswith("swap"):
            return Action("swap", int(s[4:].strip()))
        raise ValueError(f"cannot parse action {s!r}")


WAIT = Action("wait")


@dataclass(frozen=True)
class TransitionDist:
    """Cost of taking an action plus its sparse outcome distribution.

    Outcomes are (canonical state index, probability) with strictly
    positive probabilities summing to one.
    """

    cost: float
    outcomes: tuple[tuple[int, float], ...]


def available_actions(state: State, n: int, lumped: bool = True) -> list[Action]:
    """Admissible actions: swaps (ascending boundary) first, wait last.

    Wait is admissible iff some segment is idle or counting down.  One
    swap exists per adjacent pair of group entries; in a lumped space,
    mirror-equivalent swaps of a palindromic state are deduplicated
    keeping the smaller boundary.
    """
    if st.is_terminal(state, n):
        raise ValueError("terminal state has no actions")
    m = len(state)
    palindrome = lumped and state == state[::-1]
    boundaries = set()
    for i in range(m - 1):
        if st.is_group(state[i]) and st.is_group(state[i + 1]):
            b = i + 1
            if palindrome:
                b = min(b, m - b)
            boundaries.add(b)
    acts = [Action("swap", b) for b in sorted(boundaries)]
    if any(st.is_idle(e) or st.is_countdown(e) for e in state):
        acts.append(WAIT)
    return acts


def potential(state: State) -> int:
    """Strictly decreases on every swap outcome; bounds zero-cost bursts."""
    return sum(1 + e for e in state if st.is_group(e))


def _wait_symbolic(state: State, lumped: bool) -> list[tuple[State, int, int, int]]:
    """Merged wait outcomes as (state, multiplicity, p-exponent, q-exponent).

    Countdowns tick first ((c) -> (c-1), (1) -> idle); segments that were
    idle at the start of the step then succeed or fail independently.  A
    segment whose countdown just expired attempts distribution only on
    the next step.
    """
    ticked: list[int] = []
    idle_pos: list[int] = []
    for e in state:
        if e == IDLE:
            idle_pos.append(len(ticked))
            ticked.append(IDLE)
        elif st.is_countdown(e):
            ticked.append(IDLE if e - st.CD_BASE == 1 else e - 1)
        else:
            ticked.append(e)
    m = len(idle_pos)
    acc: dict[State, list[int]] = {}
    for mask in range(1 << m):
        cand = ticked.copy()
        mm = mask
        j = 0
        while mm:
            if mm & 1:
                cand[idle_pos[j]] = 1
            j += 1
            mm >>= 1
        t: State = tuple(cand)
        if lumped:
            r = t[::-1]
            if r < t:
                t = r
        rec = acc.get(t)
        if rec is None:
            nb = mask.bit_count()
            acc[t] = [1, nb, m - nb]
        else:
            rec[0] += 1
    return [(t, c, ip, iq) for t, (c, ip, iq) in acc.items()]


def _swap_symbolic(
    state: State, boundary: int, model: Model, lumped: bool
) -> tuple[State, State]:
    """(success, failure) states for swapping at `boundary`."""
    i = boundary - 1
    if not (0 <= i < len(state) - 1 and st.is_group(state[i]) and st.is_group(state[i + 1])):
        raise ValueError(
            f"boundary {boundary} does not address an adjacent group pair "
            f"in {st.state_to_str(state)}"
        )
    k1, k2 = state[i], state[i + 1]
    succ = state[:i] + (k1 + k2,) + state[i + 2 :]
    if model is Model.CC:
        # distance from the shared station: rightmost-first on the left
        # group, leftmost-first on the right group
        reset = tuple(st.CD_BASE + d for d in range(k1, 0, -1)) + tuple(
            st.CD_BASE + d for d in range(1, k2 + 1)
        )
    else:
        reset = (IDLE,) * (k1 + k2)
    fail = state[:i] + reset + state[i + 2 :]
    if lumped:
        succ = st.canonicalize(succ)
        fail = st.canonicalize(fail)
    return succ, fail


def wait_transition(state: State, params: ModelParams, lumped: bool = True) -> dict[State, float]:
    """Outcome distribution of one wait step (cost 1), keyed by state."""
    p, q = params.p, params.q
    out = {}
    for t, mult, ip, iq in _wait_symbolic(state, lumped):
        prob = mult * p**ip * q**iq
        if prob > 0.0:
            out[t] = prob
    return out


def swap_transition(
    state: State, boundary: int, params: ModelParams, lumped: bool = True
) -> dict[State, float]:
    """Outcome distribution of one swap attempt (cost 0), keyed by state."""
    succ, fail = _swap_symbolic(state, boundary, params.model, lumped)
    if params.a >= 1.0:
        return {succ: 1.0}
    return {succ: params.a, fail: 1.0 - params.a} if succ != fail else {succ: 1.0}


class MdpStructure:
    """Parameter-free skeleton of the MDP for one (n, model, lumped).

    States, per-state action lists and per-(state, action) outcome lists
    are fixed; each outcome probability is mult * p^ip * q^iq times an
    optional factor a or (1-a).  Flat numpy arrays keep realization and
    Bellman backups vectorizable.
    """

    def __init__(self, n: int, model: Model, lumped: bool = True):
        self.n = n
        self.model = model
        self.lumped = lumped
        self._build()

    def _build(self) -> None:
        n, model, lumped = self.n, self.model, self.lumped
        start = st.all_idle(n)
        term: State = (n,)
        seen: dict[State, int] = {start: 0}
        slist: list[State] = [start]

        def intern(t: State) -> int:
            i = seen.get(t)
            if i is None:
                i = len(slist)
                seen[t] = i
                slist.append(t)
            return i

        actions_per: list[tuple[Action, ...]] = []
        pair_state: list[int] = []
        pair_cost: list[float] = []
        pair_boundary: list[int] = []
        pair_lens: list[int] = []
        ent_target: list[int] = []
        ent_mult: list[int] = []
        ent_ip: list[int] = []
        ent_iq: list[int] = []
        ent_afac: list[int] = []

        i = 0
        while i < len(slist):
            s = slist[i]
            if s == term:
                actions_per.append(())
                i += 1
                continue
            acts = tuple(available_actions(s, n, lumped))
            actions_per.append(acts)
            for act in acts:
                pair_state.append(i)
                if act.kind == "wait":
                    pair_cost.append(1.0)
                    pair_boundary.append(-1)
                    outs = _wait_symbolic(s, lumped)
                    pair_lens.append(len(outs))
                    for t, mult, ip, iq in outs:
                        ent_target.append(intern(t))
                        ent_mult.append(mult)
                        ent_ip.append(ip)
                        ent_iq.append(iq)
                        ent_afac.append(0)
                else:
                    pair_cost.append(0.0)
                    pair_boundary.append(act.boundary)
                    succ, fail = _swap_symbolic(s, act.boundary, model, lumped)
                    pair_lens.append(2)
                    ent_target.append(intern(succ))
                    ent_mult.append(1)
                    ent_ip.append(0)
                    ent_iq.append(0)
                    ent_afac.append(1)
                    ent_target.append(intern(fail))
                    ent_mult.append(1)
                    ent_ip.append(0)
                    ent_iq.append(0)
                    ent_afac.append(2)
            i += 1

        t_idx = seen[term]
        total = len(slist)
        remap = np.empty(total, dtype=np.int32)
        for j in range(total):
            if j == t_idx:
                remap[j] = total - 1
            else:
                remap[j] = j - (1 if j > t_idx else 0)

        final_states = [s for j, s in enumerate(slist) if j != t_idx] + [term]
        index_of = {s: k for k, s in enumerate(final_states)}
        self.space = StateSpace(
            n=n, model=model, lumped=lumped, states=tuple(final_states), index_of=index_of
        )
        self.actions: tuple[tuple[Action, ...], ...] = tuple(
            a for j, a in enumerate(actions_per) if j != t_idx
        )

        counts = np.array([len(a) for a in self.actions], dtype=np.int64)
        self.state_pair_off = np.concatenate(([0], np.cumsum(counts)))
        self.pair_state = remap[np.array(pair_state, dtype=np.int64)]
        self.pair_cost = np.array(pair_cost, dtype=np.float64)
        self.pair_boundary = np.array(pair_boundary, dtype=np.int32)
        self.pair_off = np.concatenate(
            ([0], np.cumsum(np.array(pair_lens, dtype=np.int64)))
        )
        self.ent_target = remap[np.array(ent_target, dtype=np.int64)]
        self.ent_mult = np.array(ent_mult, dtype=np.float64)
        self.ent_ip = np.array(ent_ip, dtype=np.int16)
        self.ent_iq = np.array(ent_iq, dtype=np.int16)
        ent_afac_arr = np.array(ent_afac, dtype=np.int8)
        self._succ_mask = ent_afac_arr == 1
        self._fail_mask = ent_afac_arr == 2
        self.ent_afac = ent_afac_arr
        self.max_ip = int(self.ent_ip.max(initial=0))
        self.max_iq = int(self.ent_iq.max(initial=0))

    @property
    def num_nonterminal(self) -> int:
        return len(self.space.states) - 1

    @property
    def constraint_count(self) -> int:
        return len(self.pair_cost)

    def realize(self, p: float, a: float) -> np.ndarray:
        """Numeric outcome probabilities for one parameter point."""
        q = 1.0 - p
        pp = p ** np.arange(self.max_ip + 1, dtype=np.float64)
        qq = q ** np.arange(self.max_iq + 1, dtype=np.float64)
        probs = self.ent_mult * pp[self.ent_ip] * qq[self.ent_iq]
        probs[self._succ_mask] *= a
        probs[self._fail_mask] *= 1.0 - a
        return probs


_structure_cache: dict[tuple[int, Model, bool], MdpStructure] = {}
_cache_lock = threading.Lock()


def get_structure(n: int, model: Model, lumped: bool = True) -> MdpStructure:
    """Build (or fetch from cache) the symbolic MDP structure."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    key = (n, model, lumped)
    with _cache_lock:
        structure = _structure_cache.get(key)
        if structure is None:
            structure = MdpStructure(n, model, lumped)
            _structure_cache[key] = structure
        return structure


def clear_structure_cache() -> None:
    with _cache_lock:
        _structure_cache.clear()


class Mdp:
    """A structure realized at one parameter point."""

    def __init__(self, structure: MdpStructure, params: ModelParams):
        if params.model is not structure.model:
            raise ValueError(f"params are for {params.model}, structure for {structure.model}")
        self.structure = structure
        self.params = params
        self.probs = structure.realize(params.p, params.a)

    @property
    def space(self) -> StateSpace:
        return self.structure.space

    @property
    def n(self) -> int:
        return self.structure.n

    @property
    def model(self) -> Model:
        return self.structure.model

    @property
    def num_nonterminal(self) -> int:
        return self.structure.num_nonterminal

    @property
    def constraint_count(self) -> int:
        return self.structure.constraint_count

    @property
    def initial_index(self) -> int:
        return self.space.initial_index

    @property
    def terminal_index(self) -> int:
        return self.space.terminal_index

    def actions(self, idx: int) -> tuple[Action, ...]:
        return self.structure.actions[idx]

    def pair_index(self, idx: int, action: Action) -> int:
        acts = self.structure.actions[idx]
        try:
            k = acts.index(action)
        except ValueError:
            raise ValueError(
                f"action {action} not admissible in {st.state_to_str(self.space.states[idx])}"
            ) from None
        return int(self.structure.state_pair_off[idx]) + k

    def transition_of_pair(self, pair: int) -> TransitionDist:
        s = self.structure
        lo, hi = int(s.pair_off[pair]), int(s.pair_off[pair + 1])
        outs = tuple(
            (int(t), float(pr))
            for t, pr in zip(s.ent_target[lo:hi], self.probs[lo:hi])
            if pr > 0.0
        )
        return TransitionDist(cost=float(s.pair_cost[pair]), outcomes=outs)

    def transition(self, idx: int, action: Action) -> TransitionDist:
        return self.transition_of_pair(self.pair_index(idx, action))

    def to_json_dict(self) -> dict:
        """Full dump for debugging and diffing."""
        space = self.space
        out: dict = {
            "n": self.n,
            "model": self.model.value,
            "p": self.params.p,
            "a": self.params.a,
            "transitions": {},
        }
        for idx in range(self.num_nonterminal):
            entry = {}
            for act in self.actions(idx):
                dist = self.transition(idx, act)
                entry[str(act)] = {
                    "cost": dist.cost,
                    "outcomes": [
                        [st.state_to_str(space.states[t]), pr] for t, pr in dist.outcomes
                    ],
                }
            out["transitions"][st.state_to_str(space.states[idx])] = entry
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def build_mdp(n: int, params: ModelParams, lumped: bool = True) -> Mdp:
    """Assemble the full MDP for an n-segment chain (n >= 2)."""
    if n < 2:
        raise ValueError(f"a repeater chain needs n >= 2 segments, got {n}")
    return Mdp(get_structure(n, params.model, lumped), params)
