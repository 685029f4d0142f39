"""Command-line entry point ``exponent``.

Every command writes CSV or JSON to ``--out`` (default stdout). Floats are
printed as ``{:.11e}`` so repeated runs with the same seed give identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time

from .async_exponent import AsyncSolver, SolverConfig, SolverNonConvergence, comparison_curve, grid_oracle
from .channels import blahut_arimoto, parse_channel_spec, symmetric_capacity_input, virtual_mac
from .gallager import trellis_exponent
from .packing import LemmaConfig, realizable_lengths, report_to_dict, verify_lemma
from .prob_core import Dist, TypeVector, nearest_type
from .trellis import FrameLayout, SimConfig, monte_carlo

FLOAT_FMT = "{:.11e}"


class RateGridError(ValueError):
    pass


class UsageError(ValueError):
    pass


def parse_grid(text: str) -> list[float]:
    """Inclusive ``start:step:stop`` grid. The stop value must lie on the grid."""
    parts = text.split(":")
    if len(parts) != 3:
        raise RateGridError(f"expected start:step:stop, got {text!r}")
    try:
        start, step, stop = (float(p) for p in parts)
    except ValueError:
        raise RateGridError(f"non-numeric field in {text!r}") from None
    if not all(math.isfinite(v) for v in (start, step, stop)):
        raise RateGridError("grid values must be finite")
    if step <= 0:
        raise RateGridError("step must be positive")
    if stop < start:
        raise RateGridError("stop is below start")
    count = round((stop - start) / step)
    if abs(start + count * step - stop) > 1e-9 * max(step, abs(stop)):
        raise RateGridError(f"stop {stop} is not start plus a whole number of steps")
    return [round(start + i * step, 12) for i in range(count + 1)]


def parse_probs(text: str) -> Dist:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse distribution {text!r}") from None
    return Dist(vals)


def parse_counts(text: str, k: int) -> TypeVector:
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse composition counts {text!r}") from None
    return TypeVector(vals, k)


def load_channel(arg: str):
    if os.path.isfile(arg):
        with open(arg, encoding="utf-8") as fh:
            arg = fh.read()
    return parse_channel_spec(arg)


def fmt(v):
    if isinstance(v, bool) or v is None:
        return v
    if isinstance(v, float):
        return FLOAT_FMT.format(v)
    return v


def _json_value(v) -> str:
    if isinstance(v, float):
        return FLOAT_FMT.format(v) if math.isfinite(v) else "null"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_json_value(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_json_value(x) for x in v) + "]"
    return json.dumps(v)


def dumps(obj) -> str:
    """JSON with fixed scientific float formatting; non-finite floats become null."""
    return _json_value(obj) + "\n"


def table_text(header: list[str], rows: list[list], comments: list[str] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    for c in comments:
        buf.write(f"# {c}\n")
    return buf.getvalue()


def emit(args, text: str) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def render(args, header, rows, extra: dict | None = None, comments=()) -> str:
    if args.format == "json":
        doc = {"columns": header, "rows": [dict(zip(header, r)) for r in rows]}
        if extra:
            doc.update(extra)
        return dumps(doc)
    return table_text(header, rows, comments)


def render_record(args, record: dict) -> str:
    if args.format == "json":
        return dumps(record)
    flat = []
    for k, v in record.items():
        if isinstance(v, (list, tuple, dict)):
            v = json.dumps(v) if not isinstance(v, (list, tuple)) else ";".join(str(fmt(x)) for x in v)
        flat.append([k, v])
    return table_text(["key", "value"], flat)


# -- commands ------------------------------------------------------------------

def cmd_gallager(args) -> str:
    dmc, _ = load_channel(args.channel)
    rates = parse_grid(args.rates)
    if args.input == "optimized":
        p = None
    elif args.input == "uniform":
        p = Dist.uniform(dmc.n_inputs)
    elif args.input == "capacity":
        p = blahut_arimoto(dmc)[1]
    else:
        p = parse_probs(args.input)
    rows = []
    for r in rates:
        g = trellis_exponent(r, args.memory, p, dmc)
        rows.append([g.rate, g.rho_star, g.exponent, *g.input_dist])
    header = ["rate", "rho_star", "exponent"] + [f"input_{x}" for x in range(dmc.n_inputs)]
    return render(args, header, rows)


def cmd_async(args) -> str:
    dmc, op = load_channel(args.channel)
    mac = virtual_mac(dmc, op)
    p_star = parse_probs(args.p_star) if args.p_star else symmetric_capacity_input(mac)
    cfg = SolverConfig(restarts=args.restarts, seed=args.seed)
    solver = AsyncSolver(mac, p_star, cfg)
    realizable = set(realizable_lengths(args.K))
    header = ["rate", "exponent", "l_star", "branch", "solver_residual", "l_realizable"]
    if args.oracle:
        header += ["oracle", "oracle_slack"]
    rows = []
    for r in parse_grid(args.rates):
        try:
            res = solver.exponent(r, args.K)
            row = [r, res.exponent, res.l_star, res.branch, res.residual, res.l_star in realizable]
        except SolverNonConvergence as e:
            res = None
            row = [r, e.best_value, "", "nonconverged", e.residual, ""]
        if args.oracle:
            if res is None:
                row += [math.nan, math.nan]
            else:
                o = grid_oracle(solver.params(res.l_star, args.K, r), 1.0 / args.oracle_grid)
                row += [o.value, o.slack]
        rows.append(row)
    extra = {"K": args.K, "p_star": list(p_star.probs), "threshold": solver.zero_threshold(args.K)}
    return render(args, header, rows, extra)


def cmd_compare(args) -> str:
    dmc, op = load_channel(args.channel)
    forney_input = None if args.forney_input == "optimized" else Dist.uniform(dmc.n_inputs)
    cfg = SolverConfig(restarts=args.restarts, seed=args.seed)
    c = comparison_curve(dmc, op, args.K, parse_grid(args.rates), cfg=cfg,
                         effective=args.effective, forney_input=forney_input)
    header = ["plotted_rate", "forney_memory1", "async_scaled"]
    rows = [list(t) for t in zip(c.forney.rates, c.forney.exponents, c.async_scaled.exponents)]
    summary = {"low_rate_max_gap": c.low_rate_max_gap, "high_rate_gap": c.high_rate_gap,
               "high_rate": c.high_rate}
    comments = ["summary " + " ".join(f"{k}={FLOAT_FMT.format(v)}" for k, v in summary.items())]
    return render(args, header, rows, {"summary": summary}, comments)


def cmd_simulate(args) -> str:
    dmc, op = load_channel(args.channel)
    layout = FrameLayout.from_k(args.k, args.K)
    M = max(1, round(2 ** (layout.n * args.rate)))
    if args.comp_type:
        comp = parse_counts(args.comp_type, args.k)
    else:
        comp = nearest_type(symmetric_capacity_input(virtual_mac(dmc, op)), args.k)
    cfg = SimConfig(dmc, layout, comp, M, args.trials, seed=args.seed, batch=args.batch, op=op)
    t0 = time.perf_counter()
    st = monte_carlo(cfg)
    wall = time.perf_counter() - t0
    record = {
        "k": args.k, "K": args.K, "n": layout.n, "M": M,
        "comp_type": comp.counts.tolist(),
        "nominal_rate": args.rate,
        "realized_rate": st.realized_rate,
        "trials": st.trials,
        "frame_errors": st.frame_errors,
        "frame_error_rate": st.frame_error_rate,
        "frame_wilson": list(st.frame_wilson),
        "message_errors": st.message_errors,
        "messages": st.messages,
        "message_error_rate": st.message_error_rate,
        "message_wilson": list(st.message_wilson),
        "seed": args.seed,
    }
    if args.timing:
        record["wall_time_s"] = wall
    print(f"wall time {wall:.3f} s", file=sys.stderr)
    return render_record(args, record)


def cmd_verify_packing(args) -> str:
    comp = parse_counts(args.comp_type, args.k) if args.comp_type else nearest_type(Dist.uniform(2), args.k)
    cfg = LemmaConfig(k=args.k, K=args.K, M=args.M, comp_type=comp, trials=args.trials,
                      slack_exp=args.slack_exp, seed=args.seed, cap=args.cap)
    rep = verify_lemma(cfg)
    doc = report_to_dict(rep)
    if args.format == "csv":
        doc.pop("failing_cells")
    return render_record(args, doc)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--format", choices=["csv", "json"], default=None,
                        help="csv for curves, json for simulate and verify-packing by default")
    common.add_argument("--out", metavar="PATH", help="output file (default stdout)")

    p = argparse.ArgumentParser(prog="exponent", description="Trellis and asynchronous MAC error exponents.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gallager", parents=[common], help="time-varying trellis exponent a*E0(rho*)")
    g.add_argument("--channel", required=True, help="z:<p>, bsc:<p>, a JSON document or a file holding one")
    g.add_argument("--rates", default="0.02:0.02:0.6", help="start:step:stop, inclusive")
    g.add_argument("--memory", type=int, default=1)
    g.add_argument("--input", default="optimized",
                   help="optimized (per rho), uniform, capacity, or comma-separated probabilities")
    g.set_defaults(func=cmd_gallager)

    a = sub.add_parser("async", parents=[common], help="asynchronous MAC random-coding exponent")
    a.add_argument("--channel", required=True)
    a.add_argument("--K", type=int, default=3)
    a.add_argument("--rates", default="0.02:0.02:0.4")
    a.add_argument("--p-star", help="comma-separated input law (default: symmetric sum-rate maximizer)")
    a.add_argument("--restarts", type=int, default=32)
    a.add_argument("--oracle", action="store_true", help="append the grid-oracle value (binary channels)")
    a.add_argument("--oracle-grid", type=int, default=32, help="oracle grid denominator")
    a.set_defaults(func=cmd_async)

    c = sub.add_parser("compare", parents=[common], help="trellis vs scaled asynchronous exponent")
    c.add_argument("--channel", required=True)
    c.add_argument("--K", type=int, default=9)
    c.add_argument("--rates", default="0.02:0.02:0.44", help="MAC rates R; plotted at 2R")
    c.add_argument("--effective", action="store_true", help="scale the plotted rate by (1 - 1/K)")
    c.add_argument("--forney-input", choices=["optimized", "uniform"], default="optimized")
    c.add_argument("--restarts", type=int, default=32)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo frame error rate of the trellis code")
    s.add_argument("--channel", required=True)
    s.add_argument("--k", type=int, required=True, help="half blocklength")
    s.add_argument("--K", type=int, default=5)
    s.add_argument("--rate", type=float, required=True, help="bits per symbol; M = round(2^(nR))")
    s.add_argument("--trials", type=int, default=10000)
    s.add_argument("--batch", type=int, default=200)
    s.add_argument("--comp-type", help="comma-separated half-word counts (default: nearest k-type of P*)")
    s.add_argument("--timing", action="store_true", help="include wall time in the output record")
    s.set_defaults(func=cmd_simulate, default_format="json")

    v = sub.add_parser("verify-packing", parents=[common], help="check the packing inequality on random codebooks")
    v.add_argument("--k", type=int, default=4)
    v.add_argument("--K", type=int, default=3)
    v.add_argument("--M", type=int, default=2)
    v.add_argument("--trials", type=int, default=200)
    v.add_argument("--slack-exp", type=float, default=8)
    v.add_argument("--comp-type", help="comma-separated half-word counts (default: balanced binary)")
    v.add_argument("--cap", type=int, default=1_000_000, help="max message tuples per codebook")
    v.set_defaults(func=cmd_verify_packing, default_format="json")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.format is None:
        args.format = getattr(args, "default_format", "csv")
    try:
        emit(args, args.func(args))
    except Exception as e:  # one-line diagnostic, nonzero exit
        msg = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
