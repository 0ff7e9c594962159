"""Parameter sweeps reproducing the published figure data as CSV files.

A sweep solves the MDP on a (p, a) lattice.  Rows are traversed in a
serpentine order with the optimal policy, value vector and factorization
preconditioners carried from cell to cell; this keeps policy iteration
near its fixed point everywhere, which both speeds the sweep up and
avoids ever evaluating wildly suboptimal policies whose values overflow
the usable floating-point range at small a.  Outputs are written in
plain ascending order and are bit-identical across runs for a given
configuration.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import states as st
from .errors import IntractableError
from .mdp import Mdp, ModelParams, get_structure
from .policies import scheme_policy
from .solve import EvalCache, Policy, evaluate_policy, greedy_policy, solve_optimal
from .states import Model, predicted_count

MAX_SWEEP_N = {Model.NOCC: 12, Model.CC: 10}


@dataclass(frozen=True)
class GridSpec:
    """Inclusive (p, a) lattice with `steps` points per axis."""

    p_min: float = 0.01
    p_max: float = 1.0
    a_min: float = 0.01
    a_max: float = 1.0
    steps: int = 100

    def __post_init__(self) -> None:
        if not 0.0 < self.p_min <= self.p_max <= 1.0:
            raise ValueError(f"bad p range [{self.p_min}, {self.p_max}]")
        if not 0.0 < self.a_min <= self.a_max <= 1.0:
            raise ValueError(f"bad a range [{self.a_min}, {self.a_max}]")
        if self.steps < 2:
            raise ValueError(f"steps must be >= 2, got {self.steps}")

    def p_values(self) -> np.ndarray:
        return np.linspace(self.p_min, self.p_max, self.steps)

    def a_values(self) -> np.ndarray:
        return np.linspace(self.a_min, self.a_max, self.steps)

    @staticmethod
    def parse(spec: str) -> "GridSpec":
        parts = spec.split(":")
        if len(parts) != 5:
            raise ValueError(f"grid must be pmin:pmax:amin:amax:steps, got {spec!r}")
        return GridSpec(
            p_min=float(parts[0]), p_max=float(parts[1]),
            a_min=float(parts[2]), a_max=float(parts[3]), steps=int(parts[4]),
        )

    def to_dict(self) -> dict:
        return {
            "p_min": self.p_min, "p_max": self.p_max,
            "a_min": self.a_min, "a_max": self.a_max, "steps": self.steps,
        }


def check_tractable(n: int, model: Model) -> None:
    limit = MAX_SWEEP_N[model]
    if n > limit:
        if model is Model.NOCC:
            size = f"{predicted_count(n) - 1} states"
        else:
            size = f"well above the {predicted_count(n) - 1} states of the plain model"
        raise IntractableError(
            f"n={n} exceeds the configured sweep limit {limit} for model "
            f"{model.value} ({size})"
        )


def reachable_mask(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Non-terminal states reachable from the initial one under `policy`.

    Reachability follows the transition support at generic parameters
    (every structural outcome), so region identities do not fragment on
    the p=1 / a=1 grid edges where some outcomes have probability zero.
    """
    s = mdp.structure
    N = s.num_nonterminal
    mask = np.zeros(N, dtype=bool)
    stack = [mdp.initial_index]
    mask[mdp.initial_index] = True
    while stack:
        i = stack.pop()
        pair = int(s.state_pair_off[i]) + int(policy.choice[i])
        lo, hi = int(s.pair_off[pair]), int(s.pair_off[pair + 1])
        for t in s.ent_target[lo:hi]:
            if t < N and not mask[t]:
                mask[t] = True
                stack.append(int(t))
    return mask


def restricted_map(mdp: Mdp, policy: Policy) -> dict[str, str]:
    """The policy restricted to its reachable states; actions on
    unreachable states are arbitrary and excluded from identity."""
    mask = reachable_mask(mdp, policy)
    space = mdp.space
    return {
        st.state_to_str(space.states[i]): str(policy.action(mdp.structure, i))
        for i in np.nonzero(mask)[0]
    }


def policy_region_id(mapping: dict[str, str]) -> str:
    blob = json.dumps(mapping, sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


@dataclass
class SweepResult:
    """Per-cell optima over a grid; arrays are indexed [i_p, i_a]."""

    n: int
    model: Model
    grid: GridSpec
    v_opt: np.ndarray
    named_values: dict[str, np.ndarray] = field(default_factory=dict)
    policy_ids: np.ndarray | None = None  # dtype=object
    legend: dict[str, dict] | None = None

    def p_values(self) -> np.ndarray:
        return self.grid.p_values()

    def a_values(self) -> np.ndarray:
        return self.grid.a_values()


def sweep_optimal(
    n: int,
    model: Model,
    grid: GridSpec,
    schemes: tuple[str, ...] = (),
    collect_ids: bool = False,
    progress: bool = False,
) -> SweepResult:
    """Optimal (and named-scheme) initial values over the lattice."""
    check_tractable(n, model)
    structure = get_structure(n, model)
    scheme_policies = {name: scheme_policy(name, structure) for name in schemes}
    pv, av = grid.p_values(), grid.a_values()
    npts = grid.steps
    v_opt = np.empty((npts, npts))
    named = {name: np.empty((npts, npts)) for name in schemes}
    ids = np.empty((npts, npts), dtype=object) if collect_ids else None
    legend: dict[str, dict] = {}

    cache_opt = EvalCache()
    caches = {name: EvalCache() for name in schemes}
    warm: Policy | None = None
    t0 = time.time()
    for ip, p in enumerate(pv):
        # serpentine traversal keeps consecutive cells adjacent, so warm
        # starts stay valid across row boundaries
        a_order = range(npts - 1, -1, -1) if ip % 2 == 0 else range(npts)
        for ia in a_order:
            mdp = Mdp(structure, ModelParams(p=float(p), a=float(av[ia]), model=model))
            sol = solve_optimal(mdp, initial_policy=warm, cache=cache_opt)
            warm = sol.policy
            init = mdp.initial_index
            v_opt[ip, ia] = sol.values[init]
            for name, pol in scheme_policies.items():
                named[name][ip, ia] = evaluate_policy(mdp, pol, cache=caches[name])[init]
            if collect_ids:
                mapping = restricted_map(mdp, greedy_policy(mdp, sol.values))
                rid = policy_region_id(mapping)
                ids[ip, ia] = rid
                if rid not in legend:
                    matches = [
                        name for name, pol in scheme_policies.items()
                        if restricted_map(mdp, pol) == mapping
                    ]
                    legend[rid] = {"policy": mapping, "matches": matches}
        if progress:
            done = (ip + 1) * npts
            print(
                f"  sweep n={n} {model.value}: {done}/{npts * npts} cells "
                f"({time.time() - t0:.0f}s)",
                file=sys.stderr,
                flush=True,
            )
    return SweepResult(
        n=n, model=model, grid=grid, v_opt=v_opt, named_values=named,
        policy_ids=ids, legend=legend if collect_ids else None,
    )


def region_map(n: int, model: Model, grid: GridSpec, progress: bool = False) -> SweepResult:
    """Optimal-policy identity per cell (restricted to reachable states)."""
    schemes: tuple[str, ...] = ("swap-asap",)
    if n == 4:
        schemes = ("pi0", "pi1", "pi2")
    elif (n & (n - 1)) == 0:
        schemes = ("doubling", "swap-asap")
    return sweep_optimal(n, model, grid, schemes=schemes, collect_ids=True, progress=progress)


def ratio_map(
    n: int, model: Model, grid: GridSpec, scheme: str, progress: bool = False
) -> tuple[SweepResult, np.ndarray]:
    """Fixed-scheme waiting time divided by the optimal one, per cell."""
    result = sweep_optimal(n, model, grid, schemes=(scheme,), progress=progress)
    ratio = result.named_values[scheme] / result.v_opt
    if ratio.min() < 1.0 - 1e-9:
        raise AssertionError(
            f"scheme {scheme} beat the optimum at a cell (min ratio {ratio.min()}); "
            "this indicates a solver defect"
        )
    return result, ratio


def cc_impact(
    n: int, grid: GridSpec, progress: bool = False
) -> tuple[SweepResult, SweepResult, np.ndarray]:
    """Ratio of optimal waiting times with and without restart signalling."""
    res_cc = sweep_optimal(n, Model.CC, grid, progress=progress)
    res_nocc = sweep_optimal(n, Model.NOCC, grid, progress=progress)
    ratio = res_cc.v_opt / res_nocc.v_opt
    return res_cc, res_nocc, ratio


def scaling_curve(
    n_values, p: float, a: float, model: Model = Model.NOCC
) -> list[tuple[int, float]]:
    """Optimal initial waiting time as a function of the segment count."""
    out = []
    for n in n_values:
        check_tractable(n, model)
        mdp = Mdp(get_structure(n, model), ModelParams(p=p, a=a, model=model))
        sol = solve_optimal(mdp)
        out.append((n, float(sol.values[mdp.initial_index])))
    return out


def argmax_cell(result_grid: np.ndarray, pv: np.ndarray, av: np.ndarray):
    flat = int(np.argmax(result_grid))
    ip, ia = np.unravel_index(flat, result_grid.shape)
    return float(pv[ip]), float(av[ia]), float(result_grid[ip, ia])


def linear_fit_r2(x, y) -> tuple[float, float, float]:
    """Least-squares slope/intercept and the coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _fmt(x: float) -> str:
    return repr(float(x))


def write_grid_csv(
    path: str | Path,
    pv: np.ndarray,
    av: np.ndarray,
    columns: dict[str, np.ndarray],
) -> None:
    """CSV with one row per (p, a) cell in ascending lattice order."""
    path = Path(path)
    names = list(columns)
    with path.open("w") as fh:
        fh.write("p,a," + ",".join(names) + "\n")
        for ip, p in enumerate(pv):
            for ia, a in enumerate(av):
                cells = ",".join(
                    str(col[ip, ia]) if col.dtype == object else _fmt(col[ip, ia])
                    for col in columns.values()
                )
                fh.write(f"{_fmt(p)},{_fmt(a)},{cells}\n")


def write_sidecar(path: str | Path, payload: dict) -> Path:
    side = Path(path).with_suffix(".meta.json")
    side.write_text(json.dumps(payload, indent=1, sort_keys=True))
    return side
