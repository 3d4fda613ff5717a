"""Command-line front end: ``nlma <subcommand> [options]``.

Exit codes: 0 success, 2 invalid request, 3 solve did not converge,
4 property-suite failure.  Every request is validated before any numerical
work starts.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .grid import FAMILIES, grid_size, parse_builder_spec

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_SUITE = 0, 2, 3, 4


class RequestError(ValueError):
    """Invalid command-line request (exit code 2)."""


def fmt(v) -> str:
    """Deterministic text for reports; extended reals as ``inf``/``-inf``."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.12g}"


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_csv(rows, header, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    if path:
        Path(path).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _write_json(obj, path):
    if path:
        Path(path).write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


class _Timing:
    """Optional log of numerical phases; untouched when validation fails."""

    def __init__(self, path):
        self.path = path
        self.lines = []
        self.t0 = time.perf_counter()

    def mark(self, phase):
        self.lines.append(f"{phase} {time.perf_counter() - self.t0:.3f}")

    def flush(self):
        if self.path and self.lines:
            Path(self.path).write_text("\n".join(self.lines) + "\n")


# parsing and validation ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlma", description="Nonlocal Monge-Ampere toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fn=True):
        sp.add_argument("--s", type=float, default=1.5, help="order s in (1, 2)")
        sp.add_argument("--dim", type=int, default=1, help="dimension d (1, 2 or 3)")
        sp.add_argument("--box", type=float, default=None, help="box half-width L")
        sp.add_argument("--h", type=float, default=None, help="grid spacing")
        if fn:
            sp.add_argument("--fn", default="smoothcone:a=1", help="builder spec name:key=val,...")
        sp.add_argument("--out", default=None, help="CSV report path (default stdout)")
        sp.add_argument("--json", default=None, help="JSON metadata path")
        sp.add_argument("--timing", default=None, help="phase timing log path")

    e = sub.add_parser("eval", help="operator values at grid nodes")
    common(e)
    e.add_argument("--kernel", default="full",
                   help="full, nearpinned:eps=E, capped:n=N or localized:R=R")
    e.add_argument("--at", action="append", default=None, help="node coordinates, comma separated")
    e.add_argument("--b", default=None, help="slope, comma separated")

    r = sub.add_parser("rearrange", help="radial rearrangement of the increment")
    common(r)
    r.add_argument("--at", action="append", default=None, help="node coordinates (default origin)")
    r.add_argument("--b", default=None, help="slope, comma separated")

    s = sub.add_parser("solve", help="global solve of MA u = u - phi")
    common(s)
    s.add_argument("--tol", type=float, default=1e-3, help="residual tolerance, relative to the data scale")
    s.add_argument("--max-iters", type=int, default=60)
    s.add_argument("--tau0", type=float, default=1.0, help="initial step size, halved on rejected steps")
    s.add_argument("--eps0", type=float, default=None, help="first regularization radius (default 4h)")
    s.add_argument("--eps-min", type=float, default=None, help="last regularization radius (default h)")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--barrier-out", default=None, help="write the barrier grid with its tail line")
    s.add_argument("--u-out", default=None, help="write the solution grid")

    lim = sub.add_parser("limit", help="scaled values (2-s) MA u(x) as s approaches 2")
    common(lim)
    lim.add_argument("--at", action="append", default=None, help="node coordinates (default origin)")
    lim.add_argument("--b", default=None, help="slope, comma separated")
    lim.add_argument("--s-list", default="1.9,1.95,1.99", help="orders approaching 2")

    c = sub.add_parser("check", help="run the seeded property suites")
    c.add_argument("--seed", type=int, default=7, help="suite RNG seed")
    c.add_argument("--suites", default=None, help="comma separated subset")
    c.add_argument("--out", default=None)
    c.add_argument("--json", default=None)
    c.add_argument("--timing", default=None)

    dd = sub.add_parser("demo-dirichlet", help="nonexistence witness for the Dirichlet problem")
    common(dd, fn=False)
    dd.add_argument("--f", type=float, default=0.01, help="constant right-hand side")
    return p


def _floats(text, what):
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        bad = next(t for t in text.split(",") if not _is_float(t))
        raise RequestError(f"bad {what} token {bad!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise RequestError(f"{what} must be finite")
    return vals


def _is_float(t):
    try:
        float(t)
        return True
    except ValueError:
        return False


def _default_grid(args):
    d = args.dim
    L = args.box if args.box is not None else (20.0 if d == 1 else 8.0)
    h = args.h if args.h is not None else (0.05 if d == 1 else 0.1)
    return L, h


def validate(args) -> dict:
    """Check every parameter; return the normalized request."""
    req = {"command": args.command}
    if args.command == "check":
        from .suites import SUITES
        names = args.suites.split(",") if args.suites else list(SUITES)
        unknown = [n for n in names if n not in SUITES]
        if unknown:
            raise RequestError(f"unknown suite {unknown[0]!r}")
        req["suites"] = names
        return req
    if not 1 < args.s < 2:
        raise RequestError(f"--s must lie in (1, 2), got {args.s}")
    if args.dim not in (1, 2, 3):
        raise RequestError(f"--dim must be 1, 2 or 3, got {args.dim}")
    L, h = _default_grid(args)
    if args.command == "demo-dirichlet":
        L = args.box if args.box is not None else 4.0
        h = args.h if args.h is not None else (0.05 if args.dim == 1 else 0.1)
        if not args.f >= 0:
            raise RequestError("--f must be nonnegative")
    try:
        grid_size(L, h)
    except ValueError as exc:
        raise RequestError(str(exc)) from None
    req.update(L=L, h=h)
    if args.command == "demo-dirichlet":
        if L <= 1 + h:
            raise RequestError("--box must exceed the unit ball")
        return req
    try:
        name, params = parse_builder_spec(args.fn)
    except ValueError as exc:
        raise RequestError(str(exc)) from None
    if name not in FAMILIES:
        raise RequestError(f"unknown function family {name!r} in --fn")
    if name == "file" and not Path(str(params.get("path", ""))).is_file():
        raise RequestError(f"--fn file path {params.get('path')!r} does not exist")
    req["fn"] = (name, params)
    if args.command in ("eval", "rearrange", "limit"):
        pts = args.at
        if not pts and args.command != "eval":
            pts = [",".join(["0"] * args.dim)]
        if not pts:
            raise RequestError("--at is required")
        nodes = []
        for text in pts:
            x = _floats(text, "--at")
            if len(x) != args.dim:
                raise RequestError(f"--at {text!r} needs {args.dim} coordinates")
            k = (np.asarray(x) + L) / h
            if np.any(np.abs(k - np.rint(k)) > 1e-6) or np.any(k < -1e-6) or np.any(k > 2 * L / h + 1e-6):
                raise RequestError(f"--at {text!r} is not a grid node")
            nodes.append(x)
        req["at"] = nodes
        req["b"] = None
        if args.b is not None:
            b = _floats(args.b, "--b")
            if len(b) != args.dim:
                raise RequestError(f"--b needs {args.dim} coordinates")
            req["b"] = b
    if args.command == "eval":
        from .operator import KernelSpec
        try:
            req["kernel"] = KernelSpec.parse(args.kernel)
        except ValueError as exc:
            raise RequestError(str(exc)) from None
    if args.command == "limit":
        sl = _floats(args.s_list, "--s-list")
        if not all(1 < v < 2 for v in sl):
            raise RequestError("--s-list entries must lie in (1, 2)")
        req["s_list"] = sl
    if args.command == "solve":
        if not args.tol > 0:
            raise RequestError("--tol must be positive")
        if args.max_iters < 0:
            raise RequestError("--max-iters must be nonnegative")
        if not 0 < args.tau0 <= 1:
            raise RequestError("--tau0 must lie in (0, 1]")
        for key in ("eps0", "eps_min"):
            v = getattr(args, key)
            if v is not None and not v > 0:
                raise RequestError(f"--{key.replace('_', '-')} must be positive")
    return req


# commands ----------------------------------------------------------------------

def _grid_fn(args, req):
    from .grid import build_grid_function
    return build_grid_function(req["fn"], L=req["L"], h=req["h"], dim=args.dim)


def cmd_eval(args, req, timing):
    from .operator import OperatorParams, eval_ma
    f = _grid_fn(args, req)
    timing.mark("grid")
    params = OperatorParams(args.s, args.dim)
    kernel = req["kernel"]
    rows, meta = [], []
    for x in req["at"]:
        res = eval_ma(f, x, params, kernel, b=req["b"])
        b = res.b if res.b is not None else [None] * args.dim
        rows.append([*x, *b, str(kernel), args.s, res.value, ";".join(res.flags)])
        if "witness" in res.meta and res.meta["witness"] is not None:
            meta.append({"x": x, "witness": np.asarray(res.meta["witness"]).tolist()})
    timing.mark("eval")
    d = args.dim
    header = [f"x{i + 1}" for i in range(d)] + [f"b{i + 1}" for i in range(d)] + ["kernel", "s", "value", "flags"]
    _write_csv(rows, header, args.out)
    _write_json({"command": "eval", "fn": args.fn, "s": args.s, "dim": d, "L": req["L"],
                 "h": req["h"], "kernel": str(kernel), "witnesses": meta}, args.json)
    return EXIT_OK


def cmd_rearrange(args, req, timing):
    from .operator import OperatorParams, eval_ma, eval_ma_oracle
    from .profile import radial_rearrangement, section_profile
    f = _grid_fn(args, req)
    params = OperatorParams(args.s, args.dim)
    rows, info = [], []
    for x in req["at"]:
        prof = section_profile(f, x, req["b"])
        rad = radial_rearrangement(prof)
        r = np.geomspace(1e-3, 4 * f.L, 64)
        v = rad(r)
        rows.extend([*x, ri, vi] for ri, vi in zip(r, v))
        val = eval_ma(f, x, params, b=req["b"]).value
        orc = eval_ma_oracle(f, x, params, b=req["b"])
        info.append({"x": x, "eval_ma": val, "oracle": orc, "flags": list(prof.flags)})
    timing.mark("rearrange")
    header = [f"x{i + 1}" for i in range(args.dim)] + ["r", "v"]
    _write_csv(rows, header, args.out)
    _write_json({"command": "rearrange", "fn": args.fn, "s": args.s, "points": info}, args.json)
    return EXIT_OK


def cmd_limit(args, req, timing):
    from .operator import scaled_limit_study
    f = _grid_fn(args, req)
    rows = []
    for x in req["at"]:
        for s, val in scaled_limit_study(f, x, req["s_list"], b=req["b"]):
            rows.append([*x, s, val])
    timing.mark("limit")
    header = [f"x{i + 1}" for i in range(args.dim)] + ["s", "scaled_value"]
    _write_csv(rows, header, args.out)
    vals = [r[-1] for r in rows]
    gaps = np.abs(np.diff(vals)).tolist()
    _write_json({"command": "limit", "fn": args.fn, "s_list": req["s_list"], "gaps": gaps,
                 "gaps_decreasing": bool(np.all(np.diff(gaps) < 0))}, args.json)
    return EXIT_OK


def cmd_solve(args, req, timing):
    from .grid import write_grid
    from .operator import OperatorParams
    from .solver import LOG_FIELDS, SolverConfig, solve_global, symmetry_defect
    phi = _grid_fn(args, req)
    params = OperatorParams(args.s, args.dim)
    cfg = SolverConfig(tol=args.tol, max_iters=args.max_iters, tau0=args.tau0,
                       eps0=args.eps0, eps_min=args.eps_min)
    state = solve_global(phi, params, cfg)
    timing.mark("solve")
    _write_csv(state.log, LOG_FIELDS, args.out)
    if args.barrier_out:
        write_grid(state.w, args.barrier_out, tail=state.w.meta.get("tail"))
    if args.u_out:
        write_grid(state.u, args.u_out)
    cert = dict(state.certificate)
    cert.update(converged=state.converged, flags=list(state.flags), iterations=state.iteration,
                symmetry_defect=symmetry_defect(state.u), barrier_tail=state.w.meta.get("tail"))
    _write_json({"command": "solve", "fn": args.fn, "s": args.s, "dim": args.dim, "L": req["L"],
                 "h": req["h"], "certificate": cert}, args.json)
    return EXIT_OK if state.converged else EXIT_NOT_CONVERGED


def cmd_check(args, req, timing):
    from .suites import SUITES
    results = []
    for name in req["suites"]:
        res = SUITES[name](args.seed)
        timing.mark(name)
        results.append(res)
        print(f"{res.name}: {res.passed}/{res.total} passed")
        for msg in res.failures[:5]:
            print(f"  {msg}")
    rows = [[r.name, r.passed, r.total] for r in results]
    if args.out:
        _write_csv(rows, ["suite", "passed", "total"], args.out)
    _write_json({"command": "check", "seed": args.seed,
                 "suites": {r.name: {"passed": r.passed, "total": r.total, "failures": r.failures}
                            for r in results}}, args.json)
    return EXIT_OK if all(r.ok for r in results) else EXIT_SUITE


def cmd_demo_dirichlet(args, req, timing):
    from .solver import dirichlet_demo
    v = dirichlet_demo(args.s, args.f, req["L"], req["h"], args.dim)
    timing.mark("demo")
    loc = "" if v.location is None else " ".join(fmt(c) for c in v.location)
    rows = [[v.verdict, loc, v.detail["f"], v.detail["ma_min"], v.detail["ma_max"],
             v.detail["nodes_violating"], v.detail["nodes_in_ball"]]]
    _write_csv(rows, ["verdict", "location", "f", "ma_min", "ma_max", "nodes_violating",
                      "nodes_in_ball"], args.out)
    _write_json({"command": "demo-dirichlet", "verdict": v.verdict,
                 "location": None if v.location is None else v.location.tolist(), **v.detail},
                args.json)
    return EXIT_OK


COMMANDS = {"eval": cmd_eval, "rearrange": cmd_rearrange, "solve": cmd_solve,
            "limit": cmd_limit, "check": cmd_check, "demo-dirichlet": cmd_demo_dirichlet}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        req = validate(args)
    except RequestError as exc:
        print(f"nlma: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    timing = _Timing(getattr(args, "timing", None))
    try:
        code = COMMANDS[args.command](args, req, timing)
    except ValueError as exc:
        print(f"nlma: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    timing.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
