"""Command-line driver: gen, simulate, report, tensor, sweep.

Exit codes: 0 ok, 1 input or validation error, 2 non-generic dynamics,
3 event cap reached.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .audit import check_log
from .dynamics import CollisionModel, Termination, run, totals, validate_scenario
from .estimates import report_from_totals, ternary_strong_count
from .io import LogFormatError, LogMeta, dump_scenario, load_scenario, read_log, scenario_digest, write_log
from .rng import derive_seed
from .scenarios import PackingError, generate
from . import tensorlab as tl

EXIT_OK, EXIT_INPUT, EXIT_NONGENERIC, EXIT_CAPPED = 0, 1, 2, 3

EXIT_FOR = {
    Termination.DISPERSED: EXIT_OK,
    Termination.TIME_CAPPED: EXIT_OK,
    Termination.NON_GENERIC: EXIT_NONGENERIC,
    Termination.EVENT_CAPPED: EXIT_CAPPED,
}


class InputError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _model(text: str) -> CollisionModel:
    if text == "elastic":
        return CollisionModel.elastic()
    if text == "sticky":
        return CollisionModel.sticky()
    if text.startswith("restitution"):
        _, _, r = text.partition(":")
        return CollisionModel.restitution(float(r) if r else 0.5)
    raise argparse.ArgumentTypeError(f"unknown model {text!r}")


def _write_json(path: str, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, allow_nan=False)
        fh.write("\n")


@dataclass
class RunManifest:
    version: str
    scenario_digest: str
    seed: int
    termination: str
    events: int
    wall_time: float


# ---------------------------------------------------------------- gen


def cmd_gen(args) -> int:
    try:
        s = generate(args.dim, args.count, args.radius, mass=args.mass, speed_scale=args.speed_scale,
                     box=args.box, eps0=args.eps0, seed=args.seed, model=args.model,
                     t_max=args.t_max, max_events=args.max_events)
    except PackingError as exc:
        print(f"error: packing too dense: {exc}", file=sys.stderr)
        return EXIT_INPUT
    with open(args.out, "w") as fh:
        dump_scenario(s, fh)
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def _load_scenario(path: str):
    try:
        with open(path) as fh:
            return load_scenario(fh)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read scenario {path}: {exc}") from None


def cmd_simulate(args) -> int:
    s = _load_scenario(args.scenario)
    if args.t_max is not None:
        s.t_max = args.t_max
    if args.max_events is not None:
        s.max_events = args.max_events
    problems = validate_scenario(s)
    if problems:
        for p in problems:
            print(f"invalid scenario: {p}", file=sys.stderr)
        return EXIT_INPUT
    t0 = time.perf_counter()
    res = run(s, broadphase=args.broadphase)
    wall = time.perf_counter() - t0
    with open(args.out, "w") as fh:
        write_log(fh, LogMeta.for_scenario(s), res.events)
    manifest = RunManifest(__version__, scenario_digest(s), s.seed, res.termination.value, len(res.events), wall)
    _write_json(args.manifest or args.out + ".manifest.json", asdict(manifest))
    print(f"{res.termination.value}: {len(res.events)} collisions", file=sys.stderr)
    return EXIT_FOR[res.termination]


# ---------------------------------------------------------------- report


def _read_log(path: str):
    try:
        with open(path) as fh:
            return read_log(fh)
    except LogFormatError as exc:
        raise InputError(f"{path}: {exc}") from None
    except OSError as exc:
        raise InputError(str(exc)) from None


def report_json(rep) -> dict:
    out = {k: v for k, v in rep.summary().items() if "[" not in k}
    out["per_collision"] = [asdict(row) for row in rep.per_collision]
    out["strong_counts"] = {f"{eps!r}": {"per_pair": c.per_pair, "per_collision": c.per_collision,
                                         "corollary_sum_pairs": c.corollary_sum_pairs}
                            for eps, c in rep.strong_counts.items()}
    out["ternary_strong_counts"] = {f"{eps!r}": c for eps, c in rep.ternary_strong_counts.items()}
    return out


def build_report_from_log(meta, events, strong_eps, ternary_eps=None, ternary_cap: float = 10.0):
    """EstimateReport from a log's meta scalars; ternary counts at ``ternary_eps`` (default: strong_eps)."""
    rep = report_from_totals(events, meta.dim, meta.N, meta.mass, meta.M, meta.E0, strong_eps, ternary_cap)
    if ternary_eps is not None and meta.dim >= 2 and meta.E0 > 0:
        rep.ternary_strong_counts = {e: ternary_strong_count(events, e, ternary_cap, meta.M, meta.E0)
                                     for e in ternary_eps if ternary_cap > e}
    return rep


def cmd_report(args) -> int:
    meta, events = _read_log(args.events)
    scenario = _load_scenario(args.scenario) if args.scenario else None
    violations = check_log(events, meta, scenario)
    if violations:
        for v in violations:
            print(f"audit: {v}", file=sys.stderr)
        return EXIT_INPUT
    rep = build_report_from_log(meta, events, args.strong_eps, args.ternary_eps, args.ternary_cap)
    _write_json(args.out, report_json(rep))
    if args.csv:
        by_k = {r.k: r for r in events}
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "t", "binary_i", "binary_j", "corollary_i", "corollary_j", "ternary"])
            for row in rep.per_collision:
                w.writerow([row.k, repr(by_k[row.k].t), repr(row.binary_i), repr(row.binary_j),
                            repr(row.corollary_i), repr(row.corollary_j),
                            "" if row.ternary is None else repr(row.ternary)])
    return EXIT_OK


# ---------------------------------------------------------------- tensor


def tensor_pipeline(events, scenario, t0: float, t1: float, h: float, radius: float | None,
                    b_policy, with_kinks: bool, with_frames: bool) -> dict:
    """Assemble segments, rasterize, optionally mollify, and evaluate the CI check."""
    a, m = scenario.radius, scenario.mass
    M, E, _ = totals(scenario.particles, m)
    probe = tl.SlabSpec(t0, t1, np.zeros(scenario.n), np.zeros(scenario.n), h)
    segs = tl.trajectory_segments(events, scenario, probe) + tl.colliton_segments(events, probe)
    kink_segs = tl.kink_tensors(events, probe, b_policy, a, M, E) if with_kinks else []
    frame_segs = tl.collision_frame_tensors(events, probe, b_policy, a, M, E) if with_frames else []
    all_segs = segs + kink_segs + frame_segs
    margin = (radius or 0.0) + h
    if all_segs:
        slab = tl.SlabSpec.around(all_segs, t0, t1, h, margin)
    else:
        slab = tl.SlabSpec(t0, t1, np.zeros(scenario.n), np.zeros(scenario.n), h, margin)
    div = tl.divergence_report(all_segs, slab)
    fld = tl.rasterize(all_segs, slab)
    if radius:
        fld = tl.mollify(fld, radius)
    ci = tl.ci_check(fld, div.interior_mass, div.trace_masses)
    out = {
        "h": h, "r": radius, "lhs": ci.lhs, "rhs_base": ci.rhs_base, "ratio": ci.ratio,
        "div_mass": div.interior_mass, "trace_masses": list(div.trace_masses),
        "segments": len(all_segs), "grid": list(slab.shape), "margins": [],
    }
    if with_kinks and radius and abs(radius - 2 * a) <= 1e-12 * a and a >= 4 * h:
        ks = tl.kinks(events, slab)
        b = b_policy.weight(M, E, len(ks))
        for kn in ks:
            margin_k = tl.kink_lower_bound_check(fld, kn, m, a, b)
            out["margins"].append({"k": kn.k, "particle": kn.particle, "margin": margin_k})
    return out


def cmd_tensor(args) -> int:
    meta, events = _read_log(args.events)
    scenario = _load_scenario(args.scenario)
    if scenario_digest(scenario) != meta.scenario_digest:
        raise InputError("scenario does not match the log's digest")
    try:
        t0, t1 = _floats(args.slab)
    except ValueError:
        raise InputError("--slab expects t0,t1") from None
    try:
        out = tensor_pipeline(events, scenario, t0, t1, args.h, args.mollify_radius,
                              tl.parse_b_policy(args.b_policy), args.with_kinks, args.with_collision_frames)
    except (tl.TensorInputError, ValueError) as exc:
        raise InputError(str(exc)) from None
    _write_json(args.out, out)
    return EXIT_OK


# ---------------------------------------------------------------- sweep


SWEEP_EPS = (0.01, 0.1, 1.0)


def sweep_rows(dim: int, n_list, trials: int, seed: int, radius: float = 0.5, density: float = 0.25,
               model: CollisionModel | None = None, speed_scale: float = 1.0, max_events: int = 10**6,
               strong_eps=SWEEP_EPS) -> list[dict]:
    """One row per (N, trial); box side (N / density)^(1/dim)."""
    rows = []
    for N in n_list:
        for trial in range(trials):
            sd = derive_seed(seed, N, trial)
            box = (N / density) ** (1.0 / dim)
            s = generate(dim, N, radius, speed_scale=speed_scale, box=box, seed=sd,
                         model=model or CollisionModel.elastic(), max_events=max_events)
            res = run(s, broadphase="cells")
            meta = LogMeta.for_scenario(s)
            rep = report_from_totals(res.events, dim, N, s.mass, meta.M, meta.E0, strong_eps)
            nongeneric = res.termination is Termination.NON_GENERIC
            row = {"n": dim, "N": N, "trial": trial, "seed": sd, "termination": res.termination.value,
                   "nongeneric": int(nongeneric), "collisions": len(res.events),
                   "binary_ratio": rep.binary_ratio, "ternary_ratio": rep.ternary_ratio}
            for eps in strong_eps:
                c = rep.strong_counts.get(eps)
                row[f"strong_pairs_{eps:g}"] = c.per_pair if c else 0
                row[f"strong_collisions_{eps:g}"] = c.per_collision if c else 0
            rows.append(row)
    return rows


def sweep_aggregate(rows: list[dict]) -> dict[int, dict]:
    """Per-N maxima of the ratios over runs that ended generically."""
    out: dict[int, dict] = {}
    for r in rows:
        if r["nongeneric"] or r["binary_ratio"] is None:
            continue
        agg = out.setdefault(r["N"], {"runs": 0, "max_binary_ratio": 0.0, "max_ternary_ratio": None})
        agg["runs"] += 1
        agg["max_binary_ratio"] = max(agg["max_binary_ratio"], r["binary_ratio"])
        if r["ternary_ratio"] is not None:
            agg["max_ternary_ratio"] = max(agg["max_ternary_ratio"] or 0.0, r["ternary_ratio"])
    return out


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else ("" if v is None else v)) for k, v in r.items()})
    return buf.getvalue()


def cmd_sweep(args) -> int:
    rows = sweep_rows(args.dim, args.n_list, args.trials, args.seed, args.radius, args.density, args.model,
                      args.speed_scale, args.max_events)
    with open(args.out, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))
    for N, agg in sorted(sweep_aggregate(rows).items()):
        print(f"N={N} runs={agg['runs']} max_binary_ratio={agg['max_binary_ratio']:.6g}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsmd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hsmd {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random scenario")
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--radius", type=float, default=0.5)
    g.add_argument("--mass", type=float, default=1.0)
    g.add_argument("--speed-scale", type=float, default=1.0)
    g.add_argument("--box", type=float, default=10.0)
    g.add_argument("--eps0", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--model", type=_model, default=CollisionModel.elastic(),
                   help="elastic | sticky | restitution:R")
    g.add_argument("--t-max", type=float, default=None)
    g.add_argument("--max-events", type=int, default=10**7)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("simulate", help="run a scenario and write the event log")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--t-max", type=float, default=None)
    s.add_argument("--max-events", type=int, default=None)
    s.add_argument("--broadphase", choices=("exhaustive", "cells"), default="cells")
    s.add_argument("--manifest", default=None, help="manifest path (default OUT.manifest.json)")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="audit a log and evaluate the collision functionals")
    r.add_argument("--events", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--scenario", default=None, help="initial scenario, enables replay from t = 0")
    r.add_argument("--strong-eps", type=_floats, default=list(SWEEP_EPS))
    r.add_argument("--ternary-eps", type=_floats, default=None)
    r.add_argument("--ternary-cap", type=float, default=10.0)
    r.add_argument("--csv", default=None)
    r.set_defaults(func=cmd_report)

    t = sub.add_parser("tensor", help="tensor measures and the determinant integral check")
    t.add_argument("--events", required=True)
    t.add_argument("--scenario", required=True, help="initial scenario (the log holds no initial states)")
    t.add_argument("--slab", required=True, help="t0,t1")
    t.add_argument("--h", type=float, required=True)
    t.add_argument("--mollify-radius", type=float, default=None)
    t.add_argument("--b-policy", default="paper", help="paper | uniform:B")
    t.add_argument("--with-kinks", action="store_true")
    t.add_argument("--with-collision-frames", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tensor)

    w = sub.add_parser("sweep", help="ratios and strong counts across particle numbers")
    w.add_argument("--dim", type=int, required=True)
    w.add_argument("--n-list", type=_ints, required=True)
    w.add_argument("--trials", type=int, default=1)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--radius", type=float, default=0.5)
    w.add_argument("--density", type=float, default=0.25, help="particles per unit volume")
    w.add_argument("--model", type=_model, default=CollisionModel.elastic())
    w.add_argument("--speed-scale", type=float, default=1.0)
    w.add_argument("--max-events", type=int, default=10**6)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
