"""Command-line interface: ``quasihess <subcommand> ...``.

Exit codes: 0 success, 1 failed check or computation error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import divergence as dv
from . import equivalence as eq
from . import frontsampler as fs
from . import geodesy as geo
from . import tensors as ts
from .checks import run_checks
from .expr import (DomainError, ExprSyntaxError, UnknownFunction, UnknownVariable, default_variables,
                   eval_jet3, parse, to_source, variables_of)
from .model import ChartPoint, NoConvergence, OutsideDomain, SingularHessian, lift, load_model


class UsageError(Exception):
    pass


def _vec(s: str | None, name: str) -> np.ndarray:
    if s is None:
        raise UsageError(f"--{name} is required")
    try:
        return np.array([float(t) for t in s.replace(";", ",").split(",") if t.strip()], dtype=float)
    except ValueError as exc:
        raise UsageError(f"--{name}: expected comma-separated numbers, got {s!r}") from exc


def _atlas(args):
    if not args.model:
        raise UsageError("--model is required")
    try:
        return load_model(args.model)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def _chart(args):
    atlas = _atlas(args)
    try:
        return atlas, atlas.chart(args.chart)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc


def _point(chart, s, name="at") -> ChartPoint:
    u = _vec(s, name)
    if u.size != chart.n:
        raise UsageError(f"--{name}: chart {chart.name!r} needs {chart.n} coordinates, got {u.size}")
    return ChartPoint(chart, u)


def _at(cp: ChartPoint) -> dict:
    return {"chart": cp.chart.name, "u": cp.u.tolist(), **lift(cp).as_dict()}


def _emit(args, payload) -> None:
    text = json.dumps(payload, indent=2 if getattr(args, "pretty", False) else None)
    if getattr(args, "out", None) and args.cmd not in ("wavefront", "caustics"):
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_parse(args):
    e = parse(args.expr)
    return {"source": to_source(e), "variables": sorted(variables_of(e))}


def cmd_jet(args):
    if args.expr:
        e = parse(args.expr)
        names = args.vars.split(",") if args.vars else default_variables(e)
        u = _vec(args.at, "at")
        j = eval_jet3(e, u, names)
        return {"at": {"variables": names, "u": u.tolist()}, "value": float(j.v), "gradient": j.g.tolist(),
                "hessian": j.H.tolist(), "third": j.T.tolist()}
    _, chart = _chart(args)
    cp = _point(chart, args.at)
    j = chart.jet(cp.u)
    return {"at": _at(cp), "variables": chart.variables, "value": float(j.v), "gradient": j.g.tolist(),
            "hessian": j.H.tolist(), "third": j.T.tolist()}


def cmd_metric(args):
    _, chart = _chart(args)
    cp = _point(chart, args.at)
    return {"at": _at(cp), "h": ts.metric(cp).h.tolist(), "classification": ts.degeneracy_test(cp, args.tol)}


def cmd_cubic(args):
    _, chart = _chart(args)
    cp = _point(chart, args.at)
    return {"at": _at(cp), "C": ts.cubic(cp).C.tolist(), "classification": ts.degeneracy_test(cp, args.tol)}


def cmd_classify(args):
    _, chart = _chart(args)
    cp = _point(chart, args.at)
    return {"at": _at(cp), "classification": ts.degeneracy_test(cp, args.tol)}


def cmd_divergence(args):
    atlas, chart = _chart(args)
    qchart = atlas.chart(args.chart_q) if args.chart_q else chart
    p = _point(chart, args.p, "p")
    q = _point(qchart, args.q, "q")
    return {"D": dv.atlas_divergence(atlas, p, q).value, "Dreverse": dv.atlas_divergence(atlas, q, p).value}


def cmd_pythagoras(args):
    _, chart = _chart(args)
    P, Q, R = (lift(_point(chart, getattr(args, k), k)) for k in ("p", "q", "r"))
    e = _vec(args.e, "e") if args.e else P.x - Q.x
    m = _vec(args.m, "m") if args.m else R.p - Q.p
    return geo.pythagoras_check(P, Q, R, e, m).as_dict()


def cmd_project(args):
    _, chart = _chart(args)
    if not args.S:
        raise UsageError("--S is required")
    try:
        S = geo.Submanifold.load(chart, args.S)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"--S: cannot load submanifold {args.S!r}: {exc}") from exc
    p = lift(_point(chart, args.from_, "from"))
    if args.seeds in (None, "auto"):
        seeds = None
    else:
        seeds = np.array([_vec(s, "seeds") for s in args.seeds.split(";")])
    return [c.as_dict() for c in geo.project_onto(S, p, seeds, kind=args.kind)]


def _grid_counts(s: str, n: int):
    try:
        counts = [int(t) for t in s.lower().split("x")]
    except ValueError as exc:
        raise UsageError(f"--grid: expected e.g. 201x201, got {s!r}") from exc
    if len(counts) == 1:
        counts = counts * n
    if len(counts) != n:
        raise UsageError(f"--grid: need {n} counts")
    return counts


def cmd_wavefront(args):
    _, chart = _chart(args)
    w = fs.sample_wavefront(chart, args.side, _grid_counts(args.grid, chart.n))
    if args.out:
        w.write_csv(args.out)
    return {"side": args.side, "samples": int(len(w.u)), "skipped": w.skipped, "out": args.out}


def cmd_caustics(args):
    _, chart = _chart(args)
    c = fs.extract_caustics(chart, args.side, _grid_counts(args.grid, chart.n))
    if args.out:
        c.write_json(args.out)
    return c.to_geojson()


def cmd_check(args):
    atlas = _atlas(args)
    results = run_checks(atlas, seed=args.seed)
    if args.format == "json":
        payload = {"model": atlas.name, "seed": args.seed, "results": [r.as_dict() for r in results]}
        print(json.dumps(payload))
    else:
        print(f"model={atlas.name} seed={args.seed}")
        for r in results:
            print(r.line())
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "parse": cmd_parse, "jet": cmd_jet, "metric": cmd_metric, "cubic": cmd_cubic, "classify": cmd_classify,
    "divergence": cmd_divergence, "pythagoras": cmd_pythagoras, "project": cmd_project,
    "wavefront": cmd_wavefront, "caustics": cmd_caustics, "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quasihess", description="Quasi-Hessian geometry of generating functions")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, at=True):
        p.add_argument("--model", help="model JSON path or bundled model name")
        p.add_argument("--chart", help="chart name (default: first chart)")
        if at:
            p.add_argument("--at", help="chart coordinates, comma separated")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--out")
        p.add_argument("--format", choices=("json", "csv", "text"), default="json")
        p.add_argument("--pretty", action="store_true")
        return p

    p = sub.add_parser("parse", help="parse and pretty-print an expression")
    p.add_argument("expr")
    p.add_argument("--out")
    p = common(sub.add_parser("jet", help="value and derivatives up to order three"))
    p.add_argument("--expr")
    p.add_argument("--vars", help="variable order for --expr, comma separated")
    common(sub.add_parser("metric", help="quasi-Hessian metric at a point"))
    common(sub.add_parser("cubic", help="cubic tensor at a point"))
    common(sub.add_parser("classify", help="regular / e_critical / m_critical / both"))
    p = common(sub.add_parser("divergence", help="canonical divergence of two points"), at=False)
    p.add_argument("--p")
    p.add_argument("--q")
    p.add_argument("--chart-q", dest="chart_q", help="chart of q if different")
    p = common(sub.add_parser("pythagoras", help="Pythagorean defect of an e-leg p-q and m-leg q-r"), at=False)
    for k in ("p", "q", "r", "e", "m"):
        p.add_argument(f"--{k}")
    p = common(sub.add_parser("project", help="critical points of the divergence on a submanifold"), at=False)
    p.add_argument("--S", help="submanifold JSON")
    p.add_argument("--from", dest="from_")
    p.add_argument("--seeds", default="auto", help="'auto' or θ vectors separated by ';'")
    p.add_argument("--kind", choices=("m", "e"), default="m")
    for name in ("wavefront", "caustics"):
        p = common(sub.add_parser(name), at=False)
        p.add_argument("--side", choices=("e", "m"), required=True)
        p.add_argument("--grid", default="201")
    p = common(sub.add_parser("check", help="run the property suite on a model"), at=False)
    p.set_defaults(format="text")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        out = COMMANDS[args.cmd](args)
    except (UsageError, ExprSyntaxError, UnknownFunction, UnknownVariable) as exc:
        print(f"quasihess: error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, OutsideDomain, SingularHessian, ts.SingularMetric, NoConvergence,
            eq.NoTransition, eq.OutsideOverlap, eq.ReexpressionFailure, dv.ChartMismatch,
            geo.NotOnECurve, geo.NotOnMCurve, geo.ContinuationStall) as exc:
        print(f"quasihess: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if isinstance(out, int):
        return out
    _emit(args, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
