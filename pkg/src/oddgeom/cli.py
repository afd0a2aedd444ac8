"""Command-line front end: ``odd <command> [flags]``.

Exit status is 0 on success, 1 on a domain error (reported as JSON on
stderr) and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import expr as E
from .errors import OddGeomError
from .fixtures import NAMES, get_fixture
from .metric import OddMetric, read_metric


class UsageError(Exception):
    def __init__(self, flag: str, message: str):
        super().__init__(f"{flag}: {message}")
        self.flag = flag


# ---------------------------------------------------------------------------
# argument helpers


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(flag, f"expected a comma-separated list of numbers, got {text!r}") from None


def _point(args, flag: str, m: OddMetric, required=True):
    text = getattr(args, flag.lstrip("-").replace("-", "_"), None)
    if text is None:
        if required:
            raise UsageError(flag, "is required for this command")
        return None
    p = _floats(text, flag)
    if len(p) != m.dim:
        raise UsageError(flag, f"needs {m.dim} coordinates, got {len(p)}")
    return p


def _tspan(args, default=None):
    if args.tspan is None:
        if default is None:
            raise UsageError("--tspan", "is required for this command")
        return default
    a = _floats(args.tspan, "--tspan")
    if len(a) != 2 or not a[0] < a[1]:
        raise UsageError("--tspan", "expects a,b with a < b")
    return tuple(a)


def load_metric(source: str) -> OddMetric:
    path = Path(source)
    if path.is_file():
        return read_metric(path)
    try:
        return get_fixture(source).metric
    except KeyError:
        raise UsageError("--metric", f"no such file or fixture {source!r} "
                         f"(fixtures: {', '.join(NAMES)})") from None


_FRAME_TERM = r"(\d+(\.\d*)?\*)?E\d+"
_FRAME_FIELD = re.compile(rf"^[+-]?{_FRAME_TERM}([+-]{_FRAME_TERM})*$")


def parse_field(m: OddMetric, raw: str | None):
    """``E1``, ``E1+E2`` (frame fields) or ``"1:expr,2:expr"`` coordinate components."""
    from .frames import VectorField, frame_field_expr, gram_schmidt_frame

    if raw is None:
        raise UsageError("--field", "is required for this command")
    text = raw.strip()
    if _FRAME_FIELD.match(text.replace(" ", "")):
        return frame_field_expr(gram_schmidt_frame(m), text)
    comps = [E.ZERO] * m.dim
    parts = [p for p in text.split(",") if p.strip()]
    indexed = all(":" in p for p in parts)
    if not indexed and len(parts) != m.dim:
        raise UsageError("--field", f"needs {m.dim} components or i:expr entries")
    for k, part in enumerate(parts):
        if indexed:
            i, _, body = part.partition(":")
            try:
                i = int(i) - 1
            except ValueError:
                raise UsageError("--field", f"bad component index in {part!r}") from None
            if not 0 <= i < m.dim:
                raise UsageError("--field", f"component index {i + 1} outside 1..{m.dim}")
        else:
            i, body = k, part
        comps[i] = E.parse(body, m.coords)
    return VectorField(tuple(comps))


def _function(args, m):
    if args.f is None:
        raise UsageError("--f", "is required for this command")
    return E.parse(args.f, m.coords)


def _curve(args, m):
    from .curves import PiecewiseCurve

    if args.curve is None:
        raise UsageError("--curve", "is required for this command")
    parts = [s.strip() for s in args.curve.split(";")]
    if len(parts) != m.dim:
        raise UsageError("--curve", f"needs {m.dim} ';'-separated coordinate expressions")
    a, b = _tspan(args)
    return PiecewiseCurve.from_exprs(a, b, parts)


def _num(v: float):
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def _emit(obj, out=None):
    text = json.dumps(obj, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def _emit_lines(records, out=None):
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args, m):
    from .metric import degenerate_rank, restrict, validate

    report = validate(m, samples=args.samples, tol=args.tol or 1e-9, rng_seed=args.seed)
    d = report.to_dict()
    if args.at is not None:
        d["rank_at_point"] = degenerate_rank(m, _point(args, "--at", m))
    ok = report.passed
    if args.stratum is not None:
        try:
            axes = [int(v) - 1 for v in args.stratum.split(",")]
        except ValueError:
            raise UsageError("--stratum", f"expected 1-based coordinate indices, got {args.stratum!r}") from None
        try:
            sub = restrict(m, axes)
        except ValueError as exc:
            raise UsageError("--stratum", str(exc)) from None
        sub_report = validate(sub, samples=args.samples, tol=args.tol or 1e-9, rng_seed=args.seed)
        d["restricted"] = {
            "coords": list(sub.coords),
            "g": [[E.to_string(sub.g(i, j), sub.coords) for j in range(sub.dim)]
                  for i in range(sub.dim)],
            "report": sub_report.to_dict(),
        }
        ok = ok and sub_report.passed
    _emit(d, args.out)
    return 0 if ok else 1


def cmd_frame(args, m):
    from .frames import flat, frame_gram, gram_schmidt_frame, inverse_metric

    frame = gram_schmidt_frame(m)
    out = {"frame": [[E.to_string(c, m.coords) for c in row] for row in frame.E],
           "inverse": [[E.to_string(c, m.coords) for c in row] for row in inverse_metric(m)]}
    p = _point(args, "--at", m, required=False)
    if p is not None:
        F, ok = frame.eval(np.array([p]))
        out["values"] = [[_num(v) for v in row] for row in F[0]] if ok[0] else None
        out["gram"] = [[_num(v) for v in row] for row in frame_gram(frame, np.array([p]))[0]]
    if args.field is not None:
        X = parse_field(m, args.field)
        out["flat"] = [E.to_string(c, m.coords) for c in flat(m, X).components]
    _emit(out, args.out)
    return 0


def cmd_christoffel(args, m):
    from .connection import christoffel, covariant_derivative, verify_connection

    table = christoffel(m)
    n = m.dim
    p = _point(args, "--at", m, required=False)
    if p is not None:
        G, ok = table.eval(np.array([p]))
        if not ok[0]:
            raise OddGeomError(f"Christoffel symbols are not finite at {p}")
    lines = []
    for k in range(n):
        for i in range(n):
            for j in range(n):
                val = repr(float(G[0, k, i, j])) if p is not None \
                    else E.to_string(table[k, i, j], m.coords)
                lines.append(f"Γ[{k + 1}][{i + 1}][{j + 1}] = {val}")
    if args.field is not None:
        fields = args.field.split(";")
        if len(fields) != 2:
            raise UsageError("--field", "expects 'X;Y' for the covariant derivative")
        X, Y = (parse_field(m, f) for f in fields)
        V = covariant_derivative(m, X, Y)
        lines.append("nabla_X Y = (" + ", ".join(E.to_string(c, m.coords)
                                                  for c in V.components) + ")")
    if args.verify:
        rep = verify_connection(m, seed=args.seed)
        lines.append("verify: " + json.dumps(rep.to_dict(), sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _expr_or_value(args, m, exprs):
    p = _point(args, "--at", m, required=False)
    out = {"exprs": [E.to_string(e, m.coords) for e in exprs]}
    if p is not None:
        out["values"] = [_num(E.evaluate_float(e, p)) for e in exprs]
    return out


def cmd_grad(args, m):
    from .frames import gradient

    _emit(_expr_or_value(args, m, gradient(m, _function(args, m)).components), args.out)
    return 0


def cmd_div(args, m):
    from .frames import divergence

    _emit(_expr_or_value(args, m, [divergence(m, parse_field(m, args.field))]), args.out)
    return 0


def cmd_laplacian(args, m):
    from .frames import laplacian

    _emit(_expr_or_value(args, m, [laplacian(m, _function(args, m))]), args.out)
    return 0


def cmd_volume(args, m):
    from .frames import integrate_volume, volume_form

    box = None
    if args.box is not None:
        vals = _floats(args.box, "--box")
        if len(vals) != 2 * m.dim:
            raise UsageError("--box", f"expects {2 * m.dim} numbers lo1,hi1,...")
        box = [(vals[2 * i], vals[2 * i + 1]) for i in range(m.dim)]
    res = integrate_volume(m, box)
    _emit({"density": E.to_string(volume_form(m), m.coords), "value": res.value,
           "error": res.error}, args.out)
    return 0


def _parameter(args, curve):
    if args.at is None:
        return None
    t = _floats(args.at, "--at")
    if len(t) != 1 or not curve.a <= t[0] <= curve.b:
        raise UsageError("--at", f"expects one parameter in [{curve.a}, {curve.b}]")
    return t[0]


def cmd_curve_length(args, m):
    from .curves import length, speed

    curve = _curve(args, m)
    out = {"length": length(m, curve)}
    t = _parameter(args, curve)
    if t is not None:
        out["speed"] = speed(m, curve, t)
    _emit(out, args.out)
    return 0


def cmd_curve_check(args, m):
    from .curves import check_odd_regular, reparametrize_to_regular, write_curve_csv

    from .connection import covariant_derivative_along_curve

    curve = _curve(args, m)
    report = check_odd_regular(m, curve, tol=args.tol or 1e-4)
    if args.reparam:
        new, _ = reparametrize_to_regular(m, curve)
        ts = np.linspace(new.a, new.b, args.samples)
        write_curve_csv(m, new, args.reparam, ts)
    out = report.to_dict()
    if args.field is not None:
        t = _parameter(args, curve)
        if t is None:
            raise UsageError("--at", "the covariant derivative along the curve needs a parameter")
        D = covariant_derivative_along_curve(m, curve, parse_field(m, args.field), t)
        out["covariant_derivative"] = [_num(v) for v in D]
    _emit(out, args.out)
    return 0 if report.regular else 1


def cmd_flow(args, m):
    from .curves import write_curve_csv
    from .flows import FlowProblem, integrate_flow, invert_time_map

    X = parse_field(m, args.field)
    p0 = _point(args, "--from", m)
    curve, trace = integrate_flow(FlowProblem(m, X, p0, _tspan(args)))
    ts = np.linspace(curve.a, curve.b, args.samples)
    if args.out:
        write_curve_csv(m, curve, args.out, ts)
    # cross-check the solver's clock against quadrature of the density h(y(k))
    ks = trace.k_nodes
    tm = invert_time_map(trace.density, (float(ks[0]), float(ks[-1])), nodes=65)
    drift = float(np.max(np.abs(tm.t_of_k(ks) + trace.time_map.t_of_k([0.0])[0] - trace.t_nodes)))
    _emit({"t_range": [curve.a, curve.b], "clearing_factor": E.to_string(trace.h, m.coords),
           "crossings": trace.crossings, "stopped": trace.stopped,
           "time_map_drift": drift,
           "end": [_num(v) for v in curve.position([curve.b])[0]]})
    return 0


def cmd_geodesic(args, m):
    from .curves import write_curve_csv
    from .flows import GeodesicProblem, integrate_geodesic

    p0 = _point(args, "--from", m)
    v0 = _point(args, "--v0", m)
    curve = integrate_geodesic(GeodesicProblem(m, p0, v0, _tspan(args)))
    ts = np.linspace(curve.a, curve.b, args.samples)
    if args.out:
        write_curve_csv(m, curve, args.out, ts)
    _emit({"t_range": [curve.a, curve.b], "crossings": curve.crossings,
           "end": [_num(v) for v in curve.position([curve.b])[0]]})
    return 0


def cmd_directions(args, m):
    from .flows import radial_directions
    from .plot import emit_field_plot

    X = parse_field(m, args.field)
    p = _point(args, "--at", m, required=False) or [0.0] * m.dim
    dirs = radial_directions(m, X, p)
    recs = [{"direction": [_num(v) for v in d.direction], "tag": d.tag,
             "slope": _num(d.slope) if m.dim == 2 else None} for d in dirs]
    if args.svg:
        emit_field_plot(m, X, args.grid, args.svg, center=p)
    _emit_lines(recs, args.out)
    return 0


def cmd_distance(args, m):
    from .curves import write_curve_csv
    from .distance import DistanceQuery, distance_estimate

    p = _point(args, "--from", m)
    q = _point(args, "--to", m)
    res = distance_estimate(m, DistanceQuery(tuple(p), tuple(q), resolution=args.grid,
                                             tol=args.tol or 1e-4))
    if args.witness:
        write_curve_csv(m, res.witness, args.witness)
    _emit({"value": res.value, "resolution": res.resolution}, args.out)
    return 0


def cmd_metric_check(args, m):
    from .distance import comparison_lemma_check, metric_space_check

    tol = args.tol or 1e-3
    report = metric_space_check(m, seed=args.seed, count=args.count, tol=tol)
    recs = [r.to_dict() for r in report.records]
    ok = report.passed
    if args.radii:
        p = _point(args, "--at", m, required=False) or [0.0] * m.dim
        rows, rep2 = comparison_lemma_check(m, p, _floats(args.radii, "--radii"),
                                            seed=args.seed, tol=tol)
        recs += [dict(r.to_dict(), check="comparison") for r in rows]
        recs += [r.to_dict() for r in rep2.records]
        ok = ok and rep2.passed
    _emit_lines(recs, args.out)
    return 0 if ok else 1


def cmd_experiment(args, m):
    from .flows import perturbed_flow_experiment, radial_directions, sector_seeds

    if m.dim != 2:
        raise UsageError("--metric", "the perturbation experiment is planar")
    X = parse_field(m, args.field)
    p = _point(args, "--at", m, required=False) or [0.0, 0.0]
    eps = _floats(args.eps, "--eps") if args.eps else [1e-1, 1e-2, 1e-3, 1e-4]
    if args.sector:
        lo, hi = (math.radians(v) for v in _floats(args.sector, "--sector"))
    else:
        lo, hi = inbound_sector(radial_directions(m, X, p))
    seeds = sector_seeds(p, args.radius, lo, hi, args.count)
    rep = perturbed_flow_experiment(m, X, eps, p, seeds, args.axis - 1, args.radius)
    if args.out:
        rep.to_csv(args.out, m.coords)
    _emit({"medians": {repr(k): _num(v) for k, v in rep.medians().items()},
           "sector_degrees": [math.degrees(lo), math.degrees(hi)]})
    return 0


def inbound_sector(directions):
    """Angular sector bounded by two angularly adjacent inbound directions."""
    angs = sorted((math.atan2(d.direction[1], d.direction[0]), d.tag) for d in directions)
    if len(angs) < 2:
        raise OddGeomError("need two radial directions to bound a seed sector")
    for (a, ta), (b, tb) in zip(angs, angs[1:] + [(angs[0][0] + 2 * math.pi, angs[0][1])]):
        if ta == tb == "inbound":
            return a, b
    raise OddGeomError("no sector bounded by two inbound directions; pass --sector")


# name -> (handler, library operations reachable through it)
COMMANDS = {
    "validate": (cmd_validate, ("metric.validate", "metric.degenerate_rank", "metric.restrict")),
    "frame": (cmd_frame, ("frames.gram_schmidt_frame", "frames.frame_gram", "frames.flat",
                          "frames.inverse_metric")),
    "christoffel": (cmd_christoffel, ("connection.christoffel",
                                      "connection.covariant_derivative",
                                      "connection.verify_connection")),
    "grad": (cmd_grad, ("frames.gradient", "frames.sharp")),
    "div": (cmd_div, ("frames.divergence",)),
    "laplacian": (cmd_laplacian, ("frames.laplacian",)),
    "volume": (cmd_volume, ("frames.integrate_volume", "frames.volume_form")),
    "curve-length": (cmd_curve_length, ("curves.length", "curves.speed")),
    "curve-check": (cmd_curve_check, ("curves.check_odd_regular",
                                      "curves.reparametrize_to_regular",
                                      "connection.covariant_derivative_along_curve")),
    "flow": (cmd_flow, ("flows.integrate_flow", "flows.clearing_factor",
                        "flows.invert_time_map")),
    "geodesic": (cmd_geodesic, ("flows.integrate_geodesic",)),
    "directions": (cmd_directions, ("flows.radial_directions", "plot.emit_field_plot")),
    "distance": (cmd_distance, ("distance.distance_estimate",)),
    "metric-check": (cmd_metric_check, ("distance.metric_space_check",
                                        "distance.comparison_lemma_check")),
    "experiment": (cmd_experiment, ("flows.perturbed_flow_experiment",)),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="odd", description="Computations with ODD metrics.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--metric", required=True, help="metric file or fixture name")
        sp.add_argument("--field", help='frame field (E1, E1+E2) or "i:expr,..."')
        sp.add_argument("--from", dest="from_", metavar="POINT")
        sp.add_argument("--to", metavar="POINT")
        sp.add_argument("--v0", metavar="VECTOR")
        sp.add_argument("--tspan", metavar="A,B")
        sp.add_argument("--at", metavar="POINT")
        sp.add_argument("--grid", type=int, default=32 if name == "distance" else 21)
        sp.add_argument("--eps", metavar="LIST")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--samples", type=int, default=256 if name == "validate" else 201)
        if name == "validate":
            sp.add_argument("--stratum", help="1-based indices of the vanishing coordinates")
        if name in ("grad", "laplacian"):
            sp.add_argument("--f", help="function expression")
        if name in ("curve-length", "curve-check"):
            sp.add_argument("--curve", help="coordinate expressions in t, separated by ';'")
        if name == "curve-check":
            sp.add_argument("--reparam", help="write the regular reparametrization as CSV")
        if name == "volume":
            sp.add_argument("--box", help="lo1,hi1,lo2,hi2,...")
        if name == "christoffel":
            sp.add_argument("--verify", action="store_true")
        if name == "directions":
            sp.add_argument("--svg", help="write a field plot")
        if name == "distance":
            sp.add_argument("--witness", help="write the witness polyline as CSV")
        if name == "metric-check":
            sp.add_argument("--count", type=int, default=10)
            sp.add_argument("--radii", help="radii for the comparison check")
        if name == "experiment":
            sp.add_argument("--radius", type=float, default=1.0)
            sp.add_argument("--count", type=int, default=12)
            sp.add_argument("--axis", type=int, default=2, help="transversal x_axis = p_axis")
            sp.add_argument("--sector", metavar="DEG1,DEG2")
    return parser


_NUMERIC = re.compile(r"^-[\d.]")


def _glue_negative_values(argv: list[str]) -> list[str]:
    """Turn ``--flag -1,2`` into ``--flag=-1,2`` so argparse accepts negative numbers."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "=" not in tok and i + 1 < len(argv) \
                and _NUMERIC.match(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(_glue_negative_values(argv))
    args.from_ = getattr(args, "from_", None)
    setattr(args, "from", args.from_)
    handler, _ = COMMANDS[args.command]
    try:
        m = load_metric(args.metric)
        return handler(args, m)
    except UsageError as exc:
        sys.stderr.write(f"odd {args.command}: error: {exc}\n")
        return 2
    except (OddGeomError, E.ExpressionError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)},
                                    sort_keys=True) + "\n")
        return 1


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
