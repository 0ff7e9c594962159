"""Trajectory-sampling oracle for waiting times.

Simulation draws outcomes from the exact transition distributions of
the analytic model (never re-implementing the physics), so agreement
between sampled means and linear-solve values validates the whole
pipeline end to end.  Batches of trajectories advance in lock-step
through vectorized categorical sampling; each batch owns an independent
seeded stream, so estimates are reproducible and the batches could be
farmed out in parallel without changing the result.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .mdp import Mdp, ModelParams, build_mdp
from .solve import Policy

DEFAULT_BATCH = 4096
DEFAULT_STEP_CAP = 10**9


@dataclass(frozen=True)
class SimConfig:
    n: int
    params: ModelParams
    policy: Policy
    trials: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")


@dataclass(frozen=True)
class SimEstimate:
    mean: float
    stderr: float
    trials: int


def _policy_tables(mdp: Mdp, policy: Policy):
    """Per-state cost plus padded cumulative-probability / target tables
    for vectorized sampling of the chosen action's outcome."""
    s = mdp.structure
    N = s.num_nonterminal
    sel = s.state_pair_off[:-1] + policy.choice.astype(np.int64)
    cost = s.pair_cost[sel]
    lens = (s.pair_off[sel + 1] - s.pair_off[sel]).astype(np.int64)
    K = int(lens.max())
    cum = np.ones((N, K))
    targ = np.full((N, K), mdp.terminal_index, dtype=np.int64)
    for i in range(N):
        lo = int(s.pair_off[sel[i]])
        k = int(lens[i])
        pr = mdp.probs[lo : lo + k]
        c = np.cumsum(pr)
        c[-1] = 1.0  # guard against 1 - eps roundoff
        cum[i, :k] = c
        targ[i, :k] = s.ent_target[lo : lo + k]
    return cost, cum, targ


def _run_batch(tables, initial, terminal, rng, count, step_cap):
    cost, cum, targ = tables
    state = np.full(count, initial, dtype=np.int64)
    total = np.zeros(count)
    alive = np.arange(count)
    rounds = 0
    while len(alive):
        if rounds > step_cap:
            raise NumericalError(
                f"trajectory exceeded {step_cap} steps; policy or model is broken"
            )
        cur = state[alive]
        total[alive] += cost[cur]
        u = rng.random(len(alive))
        j = (u[:, None] >= cum[cur]).sum(axis=1)
        nxt = targ[cur, j]
        state[alive] = nxt
        alive = alive[nxt != terminal]
        rounds += 1
    return total


def simulate_run(
    config: SimConfig, rng: np.random.Generator, step_cap: int = DEFAULT_STEP_CAP,
    trace: list | None = None,
) -> float:
    """One trajectory under the policy; returns the accumulated cost.

    Termination is almost sure for p, a > 0; the step cap turns a broken
    policy/model combination into an error instead of a hang.
    """
    mdp = build_mdp(config.n, config.params)
    cost, cum, targ = _policy_tables(mdp, config.policy)
    state = mdp.initial_index
    terminal = mdp.terminal_index
    total = 0.0
    for _ in range(step_cap):
        if trace is not None:
            trace.append(state)
        total += cost[state]
        u = rng.random()
        j = int(np.searchsorted(cum[state], u, side="right"))
        state = int(targ[state, j])
        if state == terminal:
            if trace is not None:
                trace.append(state)
            return total
    raise NumericalError(
        f"trajectory exceeded {step_cap} steps; policy or model is broken"
    )


def estimate_waiting_time(
    config: SimConfig, batch_size: int = DEFAULT_BATCH, step_cap: int = DEFAULT_STEP_CAP
) -> SimEstimate:
    """Sample mean and standard error over `config.trials` trajectories.

    Trials are split into fixed-size batches; batch b draws from the
    stream seeded by (seed, b), so the estimate depends only on the
    configuration, not on scheduling.
    """
    mdp = build_mdp(config.n, config.params)
    tables = _policy_tables(mdp, config.policy)
    waits = []
    remaining = config.trials
    b = 0
    while remaining > 0:
        count = min(batch_size, remaining)
        rng = np.random.default_rng((config.seed, b))
        waits.append(
            _run_batch(tables, mdp.initial_index, mdp.terminal_index, rng, count, step_cap)
        )
        remaining -= count
        b += 1
    all_waits = np.concatenate(waits)
    mean = float(np.mean(all_waits))
    if config.trials == 1:
        warnings.warn("single-trial estimate: standard error reported as 0")
        return SimEstimate(mean=mean, stderr=0.0, trials=1)
    stderr = float(np.std(all_waits, ddof=1) / np.sqrt(config.trials))
    return SimEstimate(mean=mean, stderr=stderr, trials=config.trials)


def config_digest(config: SimConfig, mdp: Mdp | None = None) -> str:
    mdp = mdp or build_mdp(config.n, config.params)
    doc = {
        "n": config.n,
        "model": config.params.model.value,
        "p": config.params.p,
        "a": config.params.a,
        "policy": config.policy.to_dict(mdp.structure),
        "trials": config.trials,
        "seed": config.seed,
    }
    return hashlib.sha1(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def estimate_json_dict(config: SimConfig, estimate: SimEstimate) -> dict:
    return {
        "config": config_digest(config),
        "mean": estimate.mean,
        "stderr": estimate.stderr,
        "trials": estimate.trials,
        "seed": config.seed,
    }
