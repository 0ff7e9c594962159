"""Expected-total-cost machinery for absorbing MDPs.

For a fixed policy the expected remaining waiting times solve the linear
system (I - Q) v = r with Q the stripped transition matrix; the system
is solved directly (dense LAPACK below a size cutoff, SuperLU above)
and polished by iterative refinement, which is more robust than forming
the inverse.  The optimal values satisfy the Bellman equations
v_s = min_a [r_a + sum p v] and are found by policy iteration with a
strict improvement rule; they dominate every fixed policy componentwise,
which `verify_solution` spot-checks against random policies.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as sla

from . import states as st
from .errors import IntractableError, NumericalError
from .mdp import Action, Mdp, MdpStructure

DENSE_CUTOFF = 700  # below this, dense LAPACK beats sparse setup overhead
SPLU_CUTOFF = 8000  # above this, complete LU fill-in explodes; go inexact+Krylov
SOLVE_TOL = 1e-10  # normwise backward error target for linear solves
IMPROVE_TOL = 1e-13  # relative improvement needed to switch an action
ILU_REBUILD_INNER = 150  # refresh the preconditioner past this iteration count


@dataclass(frozen=True, eq=False)
class Policy:
    """Total map from non-terminal state index to an admissible action,
    stored as the index of the action within each state's action list."""

    choice: np.ndarray
    label: str = "custom"

    def same_actions(self, other: "Policy") -> bool:
        return np.array_equal(self.choice, other.choice)

    def action(self, structure: MdpStructure, idx: int) -> Action:
        return structure.actions[idx][int(self.choice[idx])]

    def to_dict(self, structure: MdpStructure) -> dict[str, str]:
        return {
            st.state_to_str(structure.space.states[i]): str(self.action(structure, i))
            for i in range(structure.num_nonterminal)
        }

    @staticmethod
    def from_dict(structure: MdpStructure, mapping: dict[str, str], label: str = "custom") -> "Policy":
        choice = np.empty(structure.num_nonterminal, dtype=np.int32)
        for i in range(structure.num_nonterminal):
            key = st.state_to_str(structure.space.states[i])
            if key not in mapping:
                raise ValueError(f"policy file misses state {key}")
            act = Action.parse(mapping[key])
            try:
                choice[i] = structure.actions[i].index(act)
            except ValueError:
                raise ValueError(f"action {act} not admissible in state {key}") from None
        return Policy(choice=choice, label=label)


def validate_policy(structure: MdpStructure, policy: Policy) -> None:
    counts = np.diff(structure.state_pair_off)
    if len(policy.choice) != structure.num_nonterminal:
        raise ValueError("policy length does not match state count")
    if (policy.choice < 0).any() or (policy.choice >= counts).any():
        raise ValueError("policy selects an action index out of range")


@dataclass
class EvalCache:
    """Reusable factorizations for parameter sweeps.

    A complete LU from the previous grid cell (same policy, nearby
    parameter point) or an incomplete LU of any nearby system still
    preconditions iterative refinement to full accuracy; both are kept
    here and refreshed when convergence degrades."""

    key: bytes | None = None
    lu: object | None = None
    ilu: object | None = None
    last_v: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class Solution:
    """Optimal value vector, a greedy policy attaining it, and the final
    scaled Bellman residual."""

    values: np.ndarray
    policy: Policy
    residual: float
    iterations: int

    def to_json_dict(self, mdp: Mdp) -> dict:
        space = mdp.space
        return {
            "params": {"n": mdp.n, "model": mdp.model.value, "p": mdp.params.p, "a": mdp.params.a},
            "values": {
                st.state_to_str(space.states[i]): float(v) for i, v in enumerate(self.values)
            },
            "policy": self.policy.to_dict(mdp.structure),
            "residual": self.residual,
            "iterations": self.iterations,
        }


def _concat_ranges(starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Concatenate arange(start, start+len) rows; all lens must be >= 1."""
    total = int(lens.sum())
    steps = np.ones(total, dtype=np.int64)
    heads = np.zeros(len(starts), dtype=np.int64)
    np.cumsum(lens[:-1], out=heads[1:])
    steps[heads[0]] = starts[0]
    steps[heads[1:]] = starts[1:] - (starts[:-1] + lens[:-1] - 1)
    return np.cumsum(steps)


def _policy_entries(mdp: Mdp, choice: np.ndarray):
    """Row/col/value triplets of Q_pi (terminal column dropped) plus costs."""
    s = mdp.structure
    N = s.num_nonterminal
    sel = s.state_pair_off[:-1] + choice
    starts = s.pair_off[sel]
    lens = s.pair_off[sel + 1] - starts
    idx = _concat_ranges(starts, lens)
    rows = np.repeat(np.arange(N, dtype=np.int64), lens)
    cols = s.ent_target[idx].astype(np.int64)
    vals = mdp.probs[idx]
    keep = cols < N
    return rows[keep], cols[keep], vals[keep], s.pair_cost[sel].copy()


def _norm_inf(x: np.ndarray) -> float:
    return float(np.abs(x).max()) if len(x) else 0.0


def _refined_solve(apply_a, solve_fn, a_norm, r, v, target, accept, max_rounds):
    """Iterative refinement of A v = r using `solve_fn` as preconditioner.

    Drives the normwise backward error |r - Av| / (|A| |v| + |r|) toward
    `target`; reports success if at least `accept` was reached.  Aiming
    two orders below the contract keeps downstream action comparisons
    well clear of the solve noise.
    """
    r_norm = _norm_inf(r)
    berr = math.inf
    for _ in range(max_rounds):
        resid = r - apply_a(v)
        berr = _norm_inf(resid) / (a_norm * _norm_inf(v) + r_norm)
        if berr <= target:
            return v, berr, True
        v = v + solve_fn(resid)
    return v, berr, berr <= accept


def _solve_dense(rows, cols, vals, r, N, tol):
    A = np.eye(N)
    A[rows, cols] -= vals
    try:
        lu = scipy.linalg.lu_factor(A)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - absorbing chains
        raise NumericalError(f"singular policy system (model error): {exc}") from exc
    a_norm = float(np.abs(A).sum(axis=1).max())
    v = scipy.linalg.lu_solve(lu, r)
    v, berr, ok = _refined_solve(
        lambda x: A @ x, lambda b: scipy.linalg.lu_solve(lu, b),
        a_norm, r, v, 1e-2 * tol, tol, 30,
    )
    if not ok:
        raise NumericalError(f"policy evaluation stalled at backward error {berr:.3e}")
    return v


def _solve_splu(A, r, key, cache, tol):
    a_norm = float(abs(A).sum(axis=1).max())
    if cache is not None and cache.lu is not None and cache.key == key:
        # stale factorization of the same pattern from a nearby parameter
        # point, promoted to full accuracy by refinement
        v = cache.lu.solve(r)
        v, berr, ok = _refined_solve(
            lambda x: A @ x, cache.lu.solve, a_norm, r, v, 1e-2 * tol, tol, 12
        )
        if ok:
            return v
    try:
        lu = sla.splu(A)
    except RuntimeError as exc:  # pragma: no cover - absorbing chains
        raise NumericalError(f"singular policy system (model error): {exc}") from exc
    v = lu.solve(r)
    v, berr, ok = _refined_solve(
        lambda x: A @ x, lu.solve, a_norm, r, v, 1e-2 * tol, tol, 30
    )
    if not ok:
        raise NumericalError(f"policy evaluation stalled at backward error {berr:.3e}")
    if cache is not None:
        cache.key = key
        cache.lu = lu
    return v


def _solve_krylov(A, r, cache, tol):
    """Large systems: GMRES preconditioned by an incomplete LU, wrapped
    in iterative refinement on the true residual until the backward
    error meets `tol`; complete factorization fill-in is prohibitive at
    these sizes.  The preconditioner is reused across nearby parameter
    points and rebuilt when convergence degrades."""
    N = A.shape[0]
    a_norm = float(abs(A).sum(axis=1).max())
    r_norm = _norm_inf(r)
    if cache is not None and cache.last_v is not None and len(cache.last_v) == N:
        v0 = cache.last_v  # previous cell's values: a strong initial guess
    else:
        v0 = np.zeros(N)

    def attempt(ilu):
        op = sla.LinearOperator((N, N), ilu.solve)
        inner = [0]

        def cb(_):
            inner[0] += 1

        v = v0
        berr = math.inf
        best = None
        for _ in range(12):
            resid = r - A @ v
            berr = _norm_inf(resid) / (a_norm * _norm_inf(v) + r_norm)
            if best is None or berr < best[1]:
                best = (v, berr)
            if berr <= 1e-2 * tol:
                return v, berr, True, inner[0]
            dv, _ = sla.gmres(
                A, resid, M=op, rtol=1e-9, maxiter=2, restart=60,
                callback=cb, callback_type="pr_norm",
            )
            v = v + dv
        v, berr = best
        return v, berr, berr <= tol, inner[0]

    def done(v):
        if cache is not None:
            cache.last_v = v
        return v

    if cache is not None and cache.ilu is not None:
        v, berr, ok, inner = attempt(cache.ilu)
        if ok and inner <= ILU_REBUILD_INNER:
            return done(v)
        if ok:
            # converged but slowly; refresh the preconditioner for the
            # cells that follow
            try:
                cache.ilu = sla.spilu(A, drop_tol=1e-2, fill_factor=5)
            except RuntimeError:
                pass
            return done(v)

    last_berr = math.inf
    for drop_tol, fill_factor in ((1e-2, 5), (1e-3, 10)):
        try:
            ilu = sla.spilu(A, drop_tol=drop_tol, fill_factor=fill_factor)
        except RuntimeError as exc:
            raise NumericalError(f"incomplete factorization failed: {exc}") from exc
        v, berr, ok, _ = attempt(ilu)
        if ok:
            if cache is not None:
                cache.ilu = ilu
            return done(v)
        last_berr = berr

    # last resort: complete factorization, however slow
    v = _solve_splu(A, r, key=None, cache=None, tol=tol)
    if v is None:  # pragma: no cover
        raise NumericalError(f"large solve stalled at backward error {last_berr:.3e}")
    return done(v)


def _evaluate_choice(
    mdp: Mdp, choice: np.ndarray, tol: float = SOLVE_TOL, cache: EvalCache | None = None
) -> np.ndarray:
    s = mdp.structure
    N = s.num_nonterminal
    rows, cols, vals, r = _policy_entries(mdp, choice)

    if N <= DENSE_CUTOFF:
        return _solve_dense(rows, cols, vals, r, N, tol)

    data = np.concatenate((np.ones(N), -vals))
    rr = np.concatenate((np.arange(N, dtype=np.int64), rows))
    cc = np.concatenate((np.arange(N, dtype=np.int64), cols))
    A = sparse.csc_matrix(sparse.coo_matrix((data, (rr, cc)), shape=(N, N)))

    if N <= SPLU_CUTOFF:
        return _solve_splu(A, r, choice.tobytes(), cache, tol)
    return _solve_krylov(A, r, cache, tol)


def evaluate_policy(
    mdp: Mdp, policy: Policy, tol: float = SOLVE_TOL, cache: EvalCache | None = None
) -> np.ndarray:
    """Expected remaining waiting time per non-terminal state under `policy`."""
    validate_policy(mdp.structure, policy)
    return _evaluate_choice(mdp, policy.choice.astype(np.int64), tol=tol, cache=cache)


def action_values(mdp: Mdp, values: np.ndarray) -> np.ndarray:
    """One-step Bellman backup r_a + sum p v for every (state, action) pair."""
    s = mdp.structure
    vext = np.concatenate((values, [0.0]))
    contrib = mdp.probs * vext[s.ent_target]
    return np.add.reduceat(contrib, s.pair_off[:-1]) + s.pair_cost


def _greedy_choice(
    structure: MdpStructure,
    qvals: np.ndarray,
    current: np.ndarray | None = None,
    strict_tol: float = 0.0,
) -> np.ndarray:
    """First argmin per state (swaps precede wait, boundaries ascend, so
    ties resolve deterministically); with `current`, keep the incumbent
    action unless the improvement is strict."""
    heads = structure.state_pair_off[:-1]
    state_min = np.minimum.reduceat(qvals, heads)
    P = len(qvals)
    cand = np.where(qvals <= state_min[structure.pair_state], np.arange(P, dtype=np.int64), P)
    first = np.minimum.reduceat(cand, heads)
    choice = (first - heads).astype(np.int64)
    if current is not None:
        cur_q = qvals[heads + current]
        switch = (cur_q - state_min) > strict_tol * np.maximum(1.0, np.abs(cur_q))
        choice = np.where(switch, choice, current)
    return choice


def greedy_policy(mdp: Mdp, values: np.ndarray) -> Policy:
    """Action minimizing the one-step backup per state, ties broken
    deterministically (swap before wait, then smaller boundary)."""
    return Policy(
        choice=_greedy_choice(mdp.structure, action_values(mdp, values)), label="greedy"
    )


def bellman_residual(mdp: Mdp, values: np.ndarray) -> float:
    """max |v - min_a backup|, scaled by the value magnitude."""
    state_min = np.minimum.reduceat(action_values(mdp, values), mdp.structure.state_pair_off[:-1])
    scale = max(1.0, _norm_inf(values))
    return _norm_inf(values - state_min) / scale


def solve_optimal(
    mdp: Mdp,
    initial_policy: Policy | None = None,
    tol: float = SOLVE_TOL,
    max_iter: int = 500,
    cache: EvalCache | None = None,
) -> Solution:
    """Policy iteration to the exact fixed point of the Bellman equations.

    Strict improvement (relative threshold) guarantees termination; a
    warm-start policy from a nearby parameter point usually converges in
    one or two evaluations.
    """
    structure = mdp.structure
    if initial_policy is not None:
        validate_policy(structure, initial_policy)
        choice = initial_policy.choice.astype(np.int64)
    else:
        # greedy w.r.t. v = 0: prefers zero-cost swaps, i.e. swap-asap
        choice = _greedy_choice(structure, structure.pair_cost)

    heads = structure.state_pair_off[:-1]
    for it in range(1, max_iter + 1):
        values = _evaluate_choice(mdp, choice, tol=tol, cache=cache)
        qvals = action_values(mdp, values)
        state_min = np.minimum.reduceat(qvals, heads)
        residual = _norm_inf(values - state_min) / max(1.0, _norm_inf(values))
        new_choice = _greedy_choice(structure, qvals, current=choice, strict_tol=IMPROVE_TOL)
        # Done when the contract holds or no action clears the strict
        # improvement bar.  Near exact ties the solve noise can keep
        # toggling equal-valued actions forever, so the residual test,
        # not policy stability, is the primary stop.
        if residual <= tol or np.array_equal(new_choice, choice):
            if residual > tol:
                raise NumericalError(
                    f"policy iteration stopped with Bellman residual {residual:.3e}"
                )
            return Solution(
                values=values,
                policy=Policy(choice=choice.astype(np.int32), label="optimal"),
                residual=residual,
                iterations=it,
            )
        choice = new_choice
    raise NumericalError(
        f"policy iteration did not converge within {max_iter} iterations "
        f"(n={mdp.n}, model={mdp.model.value}, p={mdp.params.p}, a={mdp.params.a})"
    )


def policy_count(mdp_or_structure) -> int:
    """Number of deterministic policies, prod_s |A_s| (exact integer)."""
    structure = getattr(mdp_or_structure, "structure", mdp_or_structure)
    counts = np.diff(structure.state_pair_off)
    return math.prod(int(c) for c in counts)


def enumerate_policies(mdp: Mdp, cap: int = 10**6):
    """Yield every deterministic policy exactly once (brute-force oracle).

    Refuses when the count exceeds `cap`, reporting the exact count.
    """
    total = policy_count(mdp)
    if total > cap:
        raise IntractableError(
            f"{total} policies exceed the enumeration cap of {cap}"
        )
    counts = np.diff(mdp.structure.state_pair_off)
    for combo in itertools.product(*(range(int(c)) for c in counts)):
        yield Policy(choice=np.array(combo, dtype=np.int32), label="enumerated")


@dataclass
class VerificationReport:
    residual: float
    policies_checked: int
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and self.residual <= 1e-9


def verify_solution(
    mdp: Mdp,
    solution: Solution,
    sample_policies: int = 50,
    seed: int = 0,
    tol: float = 1e-9,
) -> VerificationReport:
    """Check the Bellman residual and componentwise dominance of the
    optimal values over the greedy policy plus random admissible ones."""
    report = VerificationReport(residual=bellman_residual(mdp, solution.values), policies_checked=0)
    space = mdp.space
    counts = np.diff(mdp.structure.state_pair_off)
    rng = np.random.default_rng(seed)

    def check(policy: Policy, name: str) -> None:
        vp = evaluate_policy(mdp, policy)
        gap = solution.values - vp
        bad = gap > tol * np.maximum(1.0, np.abs(vp))
        for i in np.nonzero(bad)[0]:
            report.violations.append(
                f"policy {name}: v*({st.state_to_str(space.states[i])}) exceeds "
                f"policy value by {gap[i]:.3e}"
            )
        report.policies_checked += 1

    check(solution.policy, "greedy")
    for k in range(sample_policies):
        choice = rng.integers(0, counts).astype(np.int32)
        check(Policy(choice=choice, label=f"random-{k}"), f"random-{k}")
    return report


def solve_optimal_lp(mdp: Mdp) -> np.ndarray:
    """Alternative backend: the linear program maximizing sum(v) under
    v_s <= r_a + sum p v for every admissible action."""
    from scipy.optimize import linprog

    s = mdp.structure
    N = s.num_nonterminal
    P = s.constraint_count
    keep = s.ent_target < N
    ent_pair = np.repeat(np.arange(P, dtype=np.int64), np.diff(s.pair_off))
    rows = np.concatenate((np.arange(P, dtype=np.int64), ent_pair[keep]))
    cols = np.concatenate((s.pair_state.astype(np.int64), s.ent_target[keep].astype(np.int64)))
    data = np.concatenate((np.ones(P), -mdp.probs[keep]))
    a_ub = sparse.csr_matrix(sparse.coo_matrix((data, (rows, cols)), shape=(P, N)))
    res = linprog(
        c=-np.ones(N), A_ub=a_ub, b_ub=s.pair_cost, bounds=(0, None), method="highs"
    )
    if not res.success:
        raise NumericalError(f"LP solve failed: {res.message}")
    return res.x
