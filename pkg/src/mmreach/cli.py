"""Command-line front end.

Subcommands tie the pipeline together and emit plot-ready JSON/CSV:

* ``mmreach reach``       -- over-/under-approximation boxes for a horizon,
  optional Monte Carlo oracle cloud and containment check.
* ``mmreach decomp eval`` -- evaluate a decomposition at one point of T,
  optionally against the dense-grid oracle.
* ``mmreach verify``      -- diagonal identity, Kamke monotonicity,
  SE-monotonicity, and cross-evaluator agreement for a decomposition.
* ``mmreach compare``     -- box-trajectory containment between two
  decompositions from one initial set.

Exit codes are stable API: 0 ok, 2 left_TX, 3 left_domain (a run that
blew up to non-finite values also exits 3; the status string in
result.json distinguishes the two), 4 validation failure, 64 usage,
65 domain precondition (unordered arguments, unbounded domain, or an
inapplicable special-case construction).

Every file-writing command also writes manifest.json recording the
command, system, boxes, horizon, configs, seed, and tool version; runs
with the same manifest (timestamp aside) reproduce their outputs
bit-for-bit.
"""
from __future__ import annotations

import argparse
import datetime
import json
import pathlib
import re
import sys as _sys

import numpy as np

from . import __version__
from .core import ExtendedBox, OrderViolation, UnboundedDomain
from .decomposition import (OptimizerConfig, SpecialCaseError,
                            UserDecomposition, backward_special_case,
                            brute_force_decomp_oracle, check_condition1,
                            check_kamke, loose_decomposition,
                            make_decomposition)
from .embedding import (IntegratorConfig, check_se_monotonicity,
                        over_approximate, under_approximate)
from .expr import ExprError, parse_expr
from .oracle import OracleConfig, check_over, endpoints_to_csv, mc_reach
from .systems import (BUILTIN_NAMES, SystemConfigError, SystemSpec, builtin,
                      parse_system)

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_LEFT_TX = 2
EXIT_LEFT_DOMAIN = 3
EXIT_VALIDATION = 4
EXIT_USAGE = 64
EXIT_PRECONDITION = 65

_STATUS_EXIT = {"ok": EXIT_OK, "left_TX": EXIT_LEFT_TX,
                "left_domain": EXIT_LEFT_DOMAIN, "nonfinite": EXIT_LEFT_DOMAIN}

# Tokens like "-0.5,0.5" must parse as values, not option names; widen
# argparse's negative-number detection to anything starting with -digit.
_NEG_VALUE = re.compile(r"^-(\d|\.\d)")


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = _NEG_VALUE

    def error(self, message):
        self.print_usage(_sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if v < 0.0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be a finite nonnegative number, got {text!r}")
    return v


def _pos_float(text: str) -> float:
    v = _nonneg_float(text)
    if v == 0.0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _pos_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _interval(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(
            f"expected 'lo,hi' per axis, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric bound in {text!r}")


def _vector(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric component in {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmreach",
                description="Reachable-set over- and under-approximation "
                            "via mixed-monotone embeddings")
    p.add_argument("--version", action="version", version=f"mmreach {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common_sys = argparse.ArgumentParser(add_help=False)
    common_sys.add_argument("--system", required=True,
                            help=f"builtin name ({', '.join(BUILTIN_NAMES)}) "
                                 "or path to a JSON system config")
    common_sys.add_argument("--decomp", default="tight",
                            help="decomposition: tight, closed, user, loose, "
                                 "or path to a JSON file with a "
                                 "'decomposition' list (default tight)")
    common_sys.add_argument("--grid", type=_pos_int, default=9,
                            help="optimizer grid points per axis (default 9)")
    common_sys.add_argument("--seed", type=int, default=0,
                            help="random seed (default 0)")

    reach = sub.add_parser("reach", parents=[common_sys],
                           help="compute reach-box approximations")
    reach.add_argument("--x0", required=True, nargs="+", type=_interval,
                       metavar="LO,HI", help="initial box, one lo,hi per axis")
    reach.add_argument("--T", required=True, type=_nonneg_float, help="horizon")
    reach.add_argument("--method", choices=("over", "under", "both"),
                       default="over")
    reach.add_argument("--step", type=_pos_float, default=1e-3,
                       help="integrator step (default 1e-3)")
    reach.add_argument("--oracle", action="store_true",
                       help="also sample the true flow and check containment")
    reach.add_argument("--oracle-samples", type=_pos_int, default=10000)
    reach.add_argument("--out", default="mmreach_out", help="output directory")
    reach.set_defaults(func=cmd_reach)

    decomp = sub.add_parser("decomp", help="decomposition utilities")
    dsub = decomp.add_subparsers(dest="decomp_command", required=True,
                                 parser_class=_Parser)
    deval = dsub.add_parser("eval", parents=[common_sys],
                            help="evaluate d(x, w, xh, wh) at one point")
    deval.add_argument("--x", required=True, type=_vector, help="x, comma-separated")
    deval.add_argument("--xh", required=True, type=_vector, help="xh, comma-separated")
    deval.add_argument("--w", type=_vector, default=None, help="w (omit when m=0)")
    deval.add_argument("--wh", type=_vector, default=None, help="wh (omit when m=0)")
    deval.add_argument("--compare-oracle", action="store_true",
                       help="also print the dense-grid oracle value and gap")
    deval.add_argument("--oracle-grid", type=_pos_int, default=201)
    deval.set_defaults(func=cmd_decomp_eval)

    verify = sub.add_parser("verify", parents=[common_sys],
                            help="validity checks for a decomposition")
    verify.add_argument("--box", nargs="+", type=_interval, metavar="LO,HI",
                        default=None,
                        help="sample box, one lo,hi per axis (default [-2,2]^n)")
    verify.add_argument("--samples", type=_pos_int, default=200)
    verify.add_argument("--pairs", type=_pos_int, default=100,
                        help="SE-monotonicity trajectory pairs")
    verify.add_argument("--T", type=_nonneg_float, default=0.5,
                        help="horizon for the SE-monotonicity check")
    verify.add_argument("--step", type=_pos_float, default=1e-3)
    verify.add_argument("--against", default=None,
                        help="second decomposition to compare values against")
    verify.add_argument("--gap-tol", type=_pos_float, default=1e-4,
                        help="allowed max gap against --against")
    verify.set_defaults(func=cmd_verify)

    compare = sub.add_parser("compare", parents=[common_sys],
                             help="box-trajectory containment of two decompositions")
    compare.add_argument("--against", required=True,
                         help="decomposition whose boxes must contain --decomp's")
    compare.add_argument("--x0", required=True, nargs="+", type=_interval,
                         metavar="LO,HI")
    compare.add_argument("--T", required=True, type=_nonneg_float)
    compare.add_argument("--step", type=_pos_float, default=1e-3)
    compare.add_argument("--tol", type=_pos_float, default=1e-6,
                         help="containment tolerance (default 1e-6)")
    compare.add_argument("--out", default="mmreach_out")
    compare.set_defaults(func=cmd_compare)

    return p


# --------------------------------------------------------------------------
#   Shared construction helpers
# --------------------------------------------------------------------------

def _load_system(spec: str) -> SystemSpec:
    if spec in BUILTIN_NAMES:
        return builtin(spec)
    path = pathlib.Path(spec)
    if not path.exists():
        raise SystemConfigError(
            f"unknown system {spec!r}: not a builtin "
            f"({', '.join(BUILTIN_NAMES)}) and no such file")
    return parse_system(path.read_text())


def _make_decomp(sys_spec: SystemSpec, name: str, cfg: OptimizerConfig):
    if name in ("tight", "closed", "user"):
        return make_decomposition(sys_spec, name, cfg)
    if name == "loose":
        return loose_decomposition(sys_spec)
    path = pathlib.Path(name)
    if not path.exists():
        raise SystemConfigError(
            f"unknown decomposition {name!r}: not tight/closed/user/loose "
            "and no such file")
    obj = json.loads(path.read_text())
    texts = obj.get("decomposition") if isinstance(obj, dict) else obj
    if not isinstance(texts, list):
        raise SystemConfigError(
            f"{name}: expected a JSON list or an object with a "
            "'decomposition' list")
    try:
        exprs = tuple(parse_expr(t, sys_spec.n, sys_spec.m, allow_hat=True)
                      for t in texts)
    except ExprError as e:
        raise SystemConfigError(f"{name}: {e}") from e
    return UserDecomposition(sys_spec, exprs)


def _box_from_intervals(pairs, n: int, what: str) -> ExtendedBox:
    if len(pairs) != n:
        raise SystemConfigError(
            f"{what}: expected {n} lo,hi tokens, got {len(pairs)}")
    return ExtendedBox([p[0] for p in pairs], [p[1] for p in pairs])


def _manifest(args, sys_spec: SystemSpec, X0: ExtendedBox | None, T: float | None,
              icfg: IntegratorConfig | None, ocfg: OptimizerConfig) -> dict:
    return {
        "command": args.command,
        "system": args.system,
        "system_name": sys_spec.name,
        "x0": None if X0 is None else X0.to_json(),
        "disturbance": sys_spec.disturbance.to_json(),
        "T": T,
        "integrator": None if icfg is None else icfg.to_json(),
        "optimizer": ocfg.to_json(),
        "decomposition": args.decomp,
        "seed": args.seed,
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _write_json(path: pathlib.Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
#   Subcommands
# --------------------------------------------------------------------------

def cmd_reach(args) -> int:
    sys_spec = _load_system(args.system)
    X0 = _box_from_intervals(args.x0, sys_spec.n, "--x0")
    ocfg = OptimizerConfig(grid_points=args.grid)
    icfg = IntegratorConfig(step=args.step,
                            max_time=max(100.0, float(args.T)))
    decomp = _make_decomp(sys_spec, args.decomp, ocfg)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    results: dict = {}
    codes = [EXIT_OK]
    if args.method in ("over", "both"):
        res = over_approximate(sys_spec, decomp, X0, args.T, icfg)
        results["over"] = res
        codes.append(_STATUS_EXIT[res.status])
        print(f"over: status={res.status}"
              + (f" box={res.box}" if res.box else ""))
    if args.method in ("under", "both"):
        D = backward_special_case(decomp)
        res = under_approximate(sys_spec, D, X0, args.T, icfg)
        results["under"] = res
        codes.append(_STATUS_EXIT[res.status])
        print(f"under: status={res.status}"
              + (f" box={res.box}" if res.box else ""))

    if args.method == "both":
        payload = {k: v.to_json() for k, v in results.items()}
    else:
        payload = results[args.method].to_json()
    _write_json(out / "result.json", payload)

    if args.oracle:
        oracle_cfg = OracleConfig(samples=args.oracle_samples, seed=args.seed,
                                  integrator=icfg)
        mc = mc_reach(sys_spec, X0, args.T, oracle_cfg)
        endpoints_to_csv(mc.endpoints, out / "oracle.csv")
        print(f"oracle: {mc.total} samples, {mc.exited} exited, "
              f"cloud box={mc.box}")
        over = results.get("over")
        if over is not None and over.status == "ok":
            report = check_over(over.box, mc.endpoints, tol=1e-3)
            print(f"oracle containment: {'ok' if report.ok else 'FAIL'} "
                  f"({report.outside} of {report.total} outside)")
            if not report.ok:
                print("error: oracle endpoints escaped the over box",
                      file=_sys.stderr)
                codes.append(EXIT_VALIDATION)

    _write_json(out / "manifest.json",
                _manifest(args, sys_spec, X0, args.T, icfg, ocfg))
    return max(codes)


def cmd_decomp_eval(args) -> int:
    sys_spec = _load_system(args.system)
    ocfg = OptimizerConfig(grid_points=args.grid)
    decomp = _make_decomp(sys_spec, args.decomp, ocfg)
    x, xh = args.x, args.xh
    w = args.w if args.w is not None else []
    wh = args.wh if args.wh is not None else []
    if len(x) != sys_spec.n or len(xh) != sys_spec.n:
        raise SystemConfigError(f"--x/--xh: expected {sys_spec.n} components")
    if len(w) != sys_spec.m or len(wh) != sys_spec.m:
        raise SystemConfigError(f"--w/--wh: expected {sys_spec.m} components")

    d = decomp(x, w, xh, wh)
    print("d =", _fmt_vec(d))
    if args.compare_oracle:
        ref = brute_force_decomp_oracle(sys_spec, x, w, xh, wh,
                                        points=args.oracle_grid)
        gap = float(np.max(np.abs(d - ref)))
        print("oracle =", _fmt_vec(ref))
        print(f"max gap = {gap:.6g}")
    return EXIT_OK


def _fmt_vec(v) -> str:
    return "[" + ", ".join(f"{float(c):.12g}" for c in v) + "]"


def cmd_verify(args) -> int:
    sys_spec = _load_system(args.system)
    ocfg = OptimizerConfig(grid_points=args.grid)
    decomp = _make_decomp(sys_spec, args.decomp, ocfg)
    if args.box is None:
        box = ExtendedBox([-2.0] * sys_spec.n, [2.0] * sys_spec.n)
    else:
        box = _box_from_intervals(args.box, sys_spec.n, "--box")
    icfg = IntegratorConfig(step=args.step,
                            max_time=max(100.0, float(args.T)))

    # Numeric evaluators only resolve values to the optimizer tolerance,
    # so monotonicity comparisons get that much extra slack.
    slack = max(1e-9, decomp.value_tolerance)
    c1 = check_condition1(decomp, box, samples=args.samples, seed=args.seed)
    kamke = check_kamke(decomp, box, samples=args.samples, seed=args.seed,
                        slack=slack)
    se = check_se_monotonicity(decomp, box, pairs=args.pairs, T=args.T,
                               cfg=icfg, seed=args.seed)
    report = {"system": sys_spec.name, "decomposition": args.decomp,
              "condition1": {"ok": c1.ok, "checked": c1.checked,
                             "max_error": c1.max_error},
              "kamke": {"ok": kamke.ok, "checked": kamke.checked,
                        "violations": kamke.violations, "worst": kamke.worst,
                        "slack": slack},
              "se_monotonicity": {"ok": se.ok, "pairs": se.pairs,
                                  "violations": se.violations,
                                  "worst": se.worst}}
    ok = c1.ok and kamke.ok and se.ok

    if args.against is not None:
        other = _make_decomp(sys_spec, args.against, ocfg)
        gap = _max_gap(decomp, other, box, sys_spec, args.samples, args.seed)
        agree = gap <= args.gap_tol
        report["against"] = {"decomposition": args.against, "max_gap": gap,
                            "tol": args.gap_tol, "ok": agree}
        ok = ok and agree

    report["ok"] = ok
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if ok else EXIT_VALIDATION


def _max_gap(d1, d2, box: ExtendedBox, sys_spec: SystemSpec,
             samples: int, seed: int) -> float:
    """Max componentwise disagreement on sampled ordered tuples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(samples):
        p = box.sample(rng, 2)
        x, xh = np.minimum(p[:, 0], p[:, 1]), np.maximum(p[:, 0], p[:, 1])
        if sys_spec.m:
            q = sys_spec.disturbance.sample(rng, 2)
            w, wh = np.minimum(q[:, 0], q[:, 1]), np.maximum(q[:, 0], q[:, 1])
        else:
            w = wh = np.empty(0)
        if trial % 2:
            x, w, xh, wh = xh, wh, x, w
        worst = max(worst, float(np.max(np.abs(d1(x, w, xh, wh)
                                               - d2(x, w, xh, wh)))))
    return worst


def cmd_compare(args) -> int:
    sys_spec = _load_system(args.system)
    ocfg = OptimizerConfig(grid_points=args.grid)
    tight_cand = _make_decomp(sys_spec, args.decomp, ocfg)
    other = _make_decomp(sys_spec, args.against, ocfg)
    X0 = _box_from_intervals(args.x0, sys_spec.n, "--x0")
    icfg = IntegratorConfig(step=args.step,
                            max_time=max(100.0, float(args.T)))

    # Gate: both candidates must look like valid decompositions before
    # their boxes are compared at all.
    gate_box = ExtendedBox(np.minimum(X0.lower, -2.0), np.maximum(X0.upper, 2.0))
    for label, d in (("--decomp", tight_cand), ("--against", other)):
        rep = check_kamke(d, gate_box, samples=200, seed=args.seed,
                          slack=max(1e-9, d.value_tolerance))
        if not rep.ok:
            print(f"error: {label} {getattr(d, 'kind', '?')} fails the Kamke "
                  f"check ({rep.violations} violations, worst {rep.worst:.3g})",
                  file=_sys.stderr)
            return EXIT_VALIDATION

    ra = over_approximate(sys_spec, tight_cand, X0, args.T, icfg)
    rb = over_approximate(sys_spec, other, X0, args.T, icfg)
    if ra.status != "ok" or rb.status != "ok":
        print(f"error: integration failed (candidate {ra.status}, "
              f"other {rb.status})", file=_sys.stderr)
        return max(_STATUS_EXIT[ra.status], _STATUS_EXIT[rb.status])

    times = [t for t, _ in ra.trajectory]
    times_b = [t for t, _ in rb.trajectory]
    if times != times_b:
        raise SystemConfigError("trajectory sampling mismatch between runs")
    worst = 0.0
    boxes_a, boxes_b = [], []
    for (t, sa), (_, sb) in zip(ra.trajectory, rb.trajectory):
        la, ua = np.minimum(sa.x, sa.xhat), np.maximum(sa.x, sa.xhat)
        lb, ub = np.minimum(sb.x, sb.xhat), np.maximum(sb.x, sb.xhat)
        worst = max(worst, float(np.max(lb - la)), float(np.max(ua - ub)))
        boxes_a.append({"t": t, "lower": list(la), "upper": list(ua)})
        boxes_b.append({"t": t, "lower": list(lb), "upper": list(ub)})
    contained = worst <= args.tol

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "compare.json",
                {"system": sys_spec.name, "candidate": args.decomp,
                 "against": args.against, "contained": contained,
                 "worst_excess": worst, "tol": args.tol,
                 "candidate_boxes": boxes_a, "against_boxes": boxes_b})
    _write_json(out / "manifest.json",
                _manifest(args, sys_spec, X0, args.T, icfg, ocfg))
    print(f"containment: {'ok' if contained else 'FAIL'} "
          f"(worst excess {worst:.3g}, tol {args.tol:g})")
    return EXIT_OK if contained else EXIT_VALIDATION


# --------------------------------------------------------------------------
#   Entry point
# --------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OrderViolation, UnboundedDomain, SpecialCaseError) as e:
        print(f"error: {e}", file=_sys.stderr)
        return EXIT_PRECONDITION
    except (SystemConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=_sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
