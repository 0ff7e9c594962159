"""Command-line front end.

Subcommands: solve, evaluate, enumerate, policies, region-map,
ratio-map, cc-impact, scaling, simulate.  Exit codes: 0 success,
2 invalid arguments, 3 intractable problem size, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    GridSpec,
    argmax_cell,
    cc_impact,
    check_tractable,
    linear_fit_r2,
    ratio_map,
    region_map,
    scaling_curve,
    write_grid_csv,
    write_sidecar,
)
from .errors import IntractableError, NumericalError
from .mdp import Mdp, ModelParams, build_mdp, get_structure
from .montecarlo import SimConfig, estimate_json_dict, estimate_waiting_time
from .policies import scheme_policy
from .solve import evaluate_policy, policy_count, solve_optimal
from .states import Model, state_to_str


def _model(s: str) -> Model:
    return Model(s.lower())


def _params(args) -> ModelParams:
    return ModelParams(p=args.p, a=args.a, model=_model(args.model))


def _emit(args, doc: dict) -> None:
    text = json.dumps(doc, indent=1)
    if getattr(args, "out", None):
        Path(args.out).write_text(text)
    else:
        print(text)


def _require_out(args) -> Path:
    if not args.out:
        raise ValueError("this command needs --out PATH for its data product")
    return Path(args.out)


def cmd_solve(args) -> int:
    mdp = build_mdp(args.n, _params(args))
    sol = solve_optimal(mdp)
    doc = sol.to_json_dict(mdp)
    doc["initial_state"] = state_to_str(mdp.space.states[mdp.initial_index])
    doc["initial_value"] = float(sol.values[mdp.initial_index])
    _emit(args, doc)
    return 0


def cmd_evaluate(args) -> int:
    mdp = build_mdp(args.n, _params(args))
    policy = scheme_policy(args.policy, mdp)
    values = evaluate_policy(mdp, policy)
    doc = {
        "params": {"n": args.n, "model": args.model, "p": args.p, "a": args.a},
        "policy": args.policy,
        "initial_value": float(values[mdp.initial_index]),
        "values": {
            state_to_str(mdp.space.states[i]): float(v) for i, v in enumerate(values)
        },
    }
    _emit(args, doc)
    return 0


def cmd_enumerate(args) -> int:
    space = get_structure(args.n, _model(args.model)).space
    doc = {
        "n": space.n,
        "model": space.model.value,
        "states": [state_to_str(s) for s in space.states],
    }
    _emit(args, doc)
    return 0


def cmd_policies(args) -> int:
    structure = get_structure(args.n, _model(args.model))
    if args.policy:
        policy = scheme_policy(args.policy, structure)
        _emit(args, policy.to_dict(structure))
        return 0
    counts = np.diff(structure.state_pair_off)
    hist: dict[int, int] = {}
    for c in counts:
        hist[int(c)] = hist.get(int(c), 0) + 1
    doc = {
        "n": args.n,
        "model": args.model,
        "nonterminal_states": structure.num_nonterminal,
        "constraints": structure.constraint_count,
        "policy_count": policy_count(structure),
        "states_by_action_count": {str(k): v for k, v in sorted(hist.items())},
    }
    _emit(args, doc)
    return 0


def cmd_region_map(args) -> int:
    grid = GridSpec.parse(args.grid)
    out = _require_out(args)
    result = region_map(args.n, _model(args.model), grid, progress=not args.quiet)
    ids = result.policy_ids
    meta = {
        "command": "region-map",
        "n": args.n,
        "model": args.model,
        "grid": grid.to_dict(),
        "distinct_policies": sorted({i for i in ids.ravel()}),
        "legend": result.legend,
    }
    if args.format == "json":
        meta["cells"] = [
            {"p": float(p), "a": float(a), "policy_id": ids[ip, ia],
             "v_opt": float(result.v_opt[ip, ia])}
            for ip, p in enumerate(result.p_values())
            for ia, a in enumerate(result.a_values())
        ]
        out.write_text(json.dumps(meta, indent=1))
    else:
        write_grid_csv(out, result.p_values(), result.a_values(),
                       {"policy_id": ids, "v_opt": result.v_opt})
        write_sidecar(out, meta)
    return 0


def cmd_ratio_map(args) -> int:
    grid = GridSpec.parse(args.grid)
    out = _require_out(args)
    scheme = args.policy or "doubling"
    result, ratio = ratio_map(args.n, _model(args.model), grid, scheme,
                              progress=not args.quiet)
    pmax, amax, rmax = argmax_cell(ratio, result.p_values(), result.a_values())
    meta = {
        "command": "ratio-map",
        "n": args.n,
        "model": args.model,
        "scheme": scheme,
        "grid": grid.to_dict(),
        "max_ratio": rmax,
        "argmax": {"p": pmax, "a": amax},
    }
    if args.format == "json":
        meta["cells"] = [
            {"p": float(p), "a": float(a), "ratio": float(ratio[ip, ia])}
            for ip, p in enumerate(result.p_values())
            for ia, a in enumerate(result.a_values())
        ]
        out.write_text(json.dumps(meta, indent=1))
    else:
        write_grid_csv(out, result.p_values(), result.a_values(), {"ratio": ratio})
        write_sidecar(out, meta)
    return 0


def cmd_cc_impact(args) -> int:
    grid = GridSpec.parse(args.grid)
    out = _require_out(args)
    res_cc, res_nocc, ratio = cc_impact(args.n, grid, progress=not args.quiet)
    pmax, amax, rmax = argmax_cell(ratio, res_cc.p_values(), res_cc.a_values())
    meta = {
        "command": "cc-impact",
        "n": args.n,
        "grid": grid.to_dict(),
        "max_ratio": rmax,
        "argmax": {"p": pmax, "a": amax},
    }
    if args.format == "json":
        meta["cells"] = [
            {"p": float(p), "a": float(a), "ratio": float(ratio[ip, ia]),
             "v_cc": float(res_cc.v_opt[ip, ia]), "v_nocc": float(res_nocc.v_opt[ip, ia])}
            for ip, p in enumerate(res_cc.p_values())
            for ia, a in enumerate(res_cc.a_values())
        ]
        out.write_text(json.dumps(meta, indent=1))
    else:
        write_grid_csv(out, res_cc.p_values(), res_cc.a_values(),
                       {"ratio": ratio, "v_cc": res_cc.v_opt, "v_nocc": res_nocc.v_opt})
        write_sidecar(out, meta)
    return 0


def cmd_scaling(args) -> int:
    lo, hi = (int(x) for x in args.n_range.split(":"))
    model = _model(args.model)
    for n in range(lo, hi + 1):
        check_tractable(n, model)
    curve = scaling_curve(range(lo, hi + 1), args.p, args.a, model)
    ns = [n for n, _ in curve]
    vs = [v for _, v in curve]
    slope, intercept, r2 = linear_fit_r2(ns, vs)
    meta = {
        "command": "scaling",
        "model": args.model,
        "p": args.p,
        "a": args.a,
        "n_range": [lo, hi],
        "linear_fit": {"slope": slope, "intercept": intercept, "r2": r2},
    }
    if args.out and args.format == "csv":
        out = Path(args.out)
        with out.open("w") as fh:
            fh.write("n,v_optimal\n")
            for n, v in curve:
                fh.write(f"{n},{v!r}\n")
        write_sidecar(out, meta)
    else:
        meta["points"] = [{"n": n, "v_optimal": v} for n, v in curve]
        _emit(args, meta)
    return 0


def cmd_simulate(args) -> int:
    params = _params(args)
    mdp = build_mdp(args.n, params)
    policy = scheme_policy(args.policy, mdp)
    config = SimConfig(n=args.n, params=params, policy=policy,
                       trials=args.trials, seed=args.seed)
    est = estimate_waiting_time(config)
    _emit(args, estimate_json_dict(config, est))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repeatermdp",
        description="Exact waiting-time optimization for quantum repeater chains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_pa=True, needs_policy=False):
        p.add_argument("--n", type=int, required=True, help="number of segments")
        p.add_argument("--model", choices=["nocc", "cc"], default="nocc")
        if needs_pa:
            p.add_argument("--p", type=float, required=True,
                           help="distribution success probability")
            p.add_argument("--a", type=float, required=True,
                           help="swap success probability")
        if needs_policy:
            p.add_argument("--policy",
                           help="doubling | swap-asap | pi0 | pi1 | pi2 | file=PATH")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = sub.add_parser("solve", help="optimal waiting time at one parameter point")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="waiting time of a fixed policy")
    common(p, needs_policy=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("enumerate", help="dump the canonical state space")
    common(p, needs_pa=False)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("policies", help="policy counts, or export a named policy")
    common(p, needs_pa=False, needs_policy=True)
    p.set_defaults(func=cmd_policies)

    p = sub.add_parser("region-map", help="optimal-scheme regions over a (p, a) grid")
    common(p, needs_pa=False)
    p.add_argument("--grid", default="0.01:1.0:0.01:1.0:100",
                   help="pmin:pmax:amin:amax:steps")
    p.set_defaults(func=cmd_region_map)

    p = sub.add_parser("ratio-map", help="fixed-scheme vs optimal waiting-time ratio")
    common(p, needs_pa=False, needs_policy=True)
    p.add_argument("--grid", default="0.01:1.0:0.01:1.0:100")
    p.set_defaults(func=cmd_ratio_map)

    p = sub.add_parser("cc-impact", help="optimal waiting time with CC vs without")
    common(p, needs_pa=False)
    p.add_argument("--grid", default="0.01:1.0:0.01:1.0:100")
    p.set_defaults(func=cmd_cc_impact)

    p = sub.add_parser("scaling", help="optimal waiting time vs segment count")
    p.add_argument("--n-range", default="2:10", help="inclusive range lo:hi")
    p.add_argument("--model", choices=["nocc", "cc"], default="nocc")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("simulate", help="Monte Carlo estimate of the waiting time")
    common(p, needs_policy=True)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except IntractableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
