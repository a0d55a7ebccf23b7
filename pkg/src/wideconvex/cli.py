"""
Command line runner: one subcommand per experiment, CSV out, one summary line.

Exit codes: 0 success, 1 invalid input or usage, 2 failed computation.
"""

from __future__ import annotations

import argparse
import math
import sys
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from . import epigraph as ep
from . import kernel as kn
from . import minimize as mn
from . import network as nw
from . import sgd
from .csvio import render_csv
from .errors import ComputationError, ParseError, UnknownKey, ValidationError

# keys that locate files or tune parallelism; they never change the output
_NOT_ECHOED = {"out", "config", "threads", "command", "handler"}


class UsageError(Exception):
    def __init__(self, parser: argparse.ArgumentParser, message: str):
        self.parser = parser
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(self, message)


def parse_config(path) -> Dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment. Keys may use dashes or underscores."""
    out: Dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ValidationError(f"config {path} is not UTF-8") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value or " " in key:
            raise ParseError(lineno, raw)
        out[key.replace("-", "_")] = value
    return out


# ---------------------------------------------------------------------------
# argument types
# ---------------------------------------------------------------------------


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _check_alpha(alpha: float) -> None:
    kn.kernel_weights(alpha, 0)


def _check_nonneg_int(name: str, value: int) -> None:
    if value < 0:
        raise ValidationError(f"{name} must be nonnegative, got {value}")


def _check_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be positive, got {value}")


# ---------------------------------------------------------------------------
# subcommands; each returns (header, rows, summary)
# ---------------------------------------------------------------------------


def _kernel_weights(a):
    _check_alpha(a.alpha)
    _check_nonneg_int("width", a.width)
    kw = kn.kernel_weights(a.alpha, a.width)
    rows = [[int(i), w] for i, w in zip(kw.indices, kw.weights)]
    total = math.fsum(kw.weights)
    status = "PASS" if abs(total - 1) < 1e-12 else "FAIL"
    return ["i", "weight"], rows, f"{status} kernel-weights alpha={a.alpha:g} N={a.width} sum={total:.17g}"


_SEQUENCES = {
    "even": kn.even_indicator,
    "period3": kn.period_three,
    "constant": lambda: kn.constant_sequence(1.0),
}


def _tauber(a):
    for alpha in a.alphas:
        _check_alpha(alpha)
    _check_nonneg_int("n-cesaro", a.n_cesaro)
    _check_positive("tol", a.tol)
    if a.sequence not in _SEQUENCES:
        raise ValidationError(f"unknown sequence {a.sequence!r}; choose from {sorted(_SEQUENCES)}")
    table = kn.tauberian_gap(_SEQUENCES[a.sequence](), sorted(a.alphas), a.n_cesaro, a.tol)
    rows = [[r.alpha, r.abel, r.cesaro, r.gap, r.tolerance] for r in table.rows]
    status = "PASS" if table.monotone else "FAIL"
    return (
        ["alpha", "abel", "cesaro", "gap", "tolerance"],
        rows,
        f"{status} tauber sequence={a.sequence} monotone={table.monotone} last_gap={table.rows[-1].gap:.6g}",
    )


def _sampled(a) -> ep.SampledFunction:
    box = ep.ParamBox.interval(a.lower, a.upper, a.grid_step)
    return ep.sample_function(ep.builtin_function(a.function), box)


def _minkowski_rate(a):
    _check_positive("delta", a.delta)
    sf = _sampled(a)
    cap = ep.default_cap(sf) if a.cap is None else a.cap
    report = ep.convexification_rate(sf, cap, a.delta, a.n_max, capacity=a.capacity)
    rows = [[int(n), d, bool(u)] for n, d, u in zip(report.n, report.distance, report.used)]
    nonincreasing = bool(np.all(np.diff(report.distance) <= 1e-12))
    slope = "NotApplicable" if report.slope is None else f"{report.slope:.6g}"
    status = "PASS" if nonincreasing else "FAIL"
    return ["n", "hausdorff", "used_in_fit"], rows, f"{status} minkowski-rate function={a.function} slope={slope}"


def _minorant(a):
    sf = _sampled(a)
    mino = ep.convex_minorant(sf)
    rows = [[x, q, m] for x, q, m in zip(sf.nodes[:, 0], sf.values, mino.values)]
    gap = float(np.max(sf.values - mino.values))
    return ["x", "q", "minorant"], rows, f"PASS minorant function={a.function} nonconvexity_gap={gap:.6g}"


def _verify_corollary(a):
    _check_positive("delta", a.delta)
    box = ep.ParamBox.interval(a.lower, a.upper, a.grid_step)
    if a.suite_size:
        _check_nonneg_int("suite-size", a.suite_size)
        funcs = [(f"suite_{k}", f) for k, f in enumerate(ep.piecewise_smooth_suite(a.suite_size, a.seed, a.lower, a.upper))]
    else:
        funcs = [(a.function, ep.builtin_function(a.function))]
    rows = []
    for name, f in funcs:
        sf = ep.sample_function(f, box)
        cap = ep.default_cap(sf) if a.cap is None else a.cap
        rep = ep.verify_corollary(sf, cap, a.delta)
        rows.append([name, cap, rep.distance, rep.tolerance, rep.passed])
    passed = sum(r[-1] for r in rows)
    status = "PASS" if passed == len(rows) else "FAIL"
    worst = max(r[2] / r[3] for r in rows)
    return (
        ["function", "cap", "distance", "tolerance", "passed"],
        rows,
        f"{status} verify-corollary passed={passed}/{len(rows)} worst_ratio={worst:.6g}",
    )


def _data_config(a, seed: int) -> nw.DataConfig:
    fam = nw.builtin_family(a.family, d=a.input_dim)
    if a.grid_step is not None:
        fam = nw.builtin_family(
            a.family, d=a.input_dim, domain=ep.ParamBox(fam.domain.lower, fam.domain.upper, a.grid_step)
        )
    beta = a.beta_star if a.beta_star is not None else None
    return nw.DataConfig(fam, beta_star=beta, noise=a.noise, noise_scale=a.sigma, seed=seed)


def _phi_argmin_sweep(a):
    for alpha in a.alphas:
        _check_alpha(alpha)
    widths = a.widths
    if widths is None:
        # every alpha runs at the widest certified cutoff so the alpha column is comparable
        widths = [max(kn.infinite_tail_cutoff(alpha, a.cutoff_tol) for alpha in a.alphas)]
    for N in widths:
        _check_nonneg_int("widths", N)
    cfg = _data_config(a, 0)
    report = mn.theorem_sweep(cfg, a.alphas, widths, a.seeds, n=a.sample_index, threads=a.threads)
    rows = [r.as_list() for r in report.rows]
    top = max(widths)
    gaps = [g for _, g in report.gaps_along_alpha(top)]
    decreasing = all(x > y for x, y in zip(gaps, gaps[1:]))
    status = "PASS" if decreasing else "FAIL"
    text = " ".join(f"{g:.4g}" for g in gaps)
    return list(mn.SWEEP_HEADER), rows, f"{status} phi-argmin-sweep N={top} gaps_along_alpha=[{text}]"


def _schedule(a):
    return sgd.make_schedule(a.a0, a.gamma)


def _sgd_train(a):
    _check_alpha(a.alpha)
    _check_nonneg_int("width", a.width)
    schedule = _schedule(a)
    cfg = _data_config(a, a.seed)
    traj = sgd.sgd_run(cfg, a.alpha, a.width, schedule, a.steps, a.mode, a.init)
    final = " ".join(f"{b:.6g}" for b in traj.final)
    return (
        traj.header(),
        traj.rows(),
        f"PASS sgd-train final_beta=[{final}] projections={traj.projection_count}",
    )


def _sgd_suite(a):
    _check_alpha(a.alpha)
    _check_nonneg_int("width", a.width)
    schedule = _schedule(a)
    cfg = _data_config(a, 0)
    if len(a.seeds) < sgd.MIN_TRAJECTORIES:
        raise ValidationError(f"sgd-suite needs at least {sgd.MIN_TRAJECTORIES} seeds, got {len(a.seeds)}")
    trajs = sgd.sgd_suite(cfg, a.alpha, a.width, schedule, a.steps, a.seeds, a.mode, a.init, threads=a.threads)
    descent = sgd.descent_inequality_check(trajs, a.window)
    affine = cfg.family.name == "affine"
    p = cfg.family.p
    header = ["seed"] + [f"beta_{k + 1}" for k in range(p)] + ["ls_error", "decay_ratio", "decay_slope", "projections"]
    rows = []
    close = 0
    for t in trajs:
        err = float(np.linalg.norm(t.final - sgd.least_squares_beta(t.cfg, a.alpha, a.width))) if affine else math.nan
        close += err < a.tolerance
        decay = sgd.gradient_decay_report(t)
        rows.append([t.seed, *t.final, err, decay.ratio, decay.slope, t.projection_count])
    decayed = sum(r[-3] < 0.1 for r in rows)
    ok = descent.pass_fraction >= 0.9 and decayed >= 0.9 * len(rows) and (not affine or close >= 0.9 * len(rows))
    status = "PASS" if ok else "FAIL"
    summary = (
        f"{status} sgd-suite seeds={len(rows)} within_tol={close if affine else 'n/a'} "
        f"decayed={decayed} descent_pass={descent.pass_fraction:.3g} C={descent.constant:.4g}"
    )
    return header, rows, summary


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--out", help="CSV destination (default: standard output)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps (output is unaffected)")


def _add_function(p, grid_step):
    p.add_argument("--function", default="double_well", choices=sorted(ep.BUILTIN_FUNCTIONS))
    p.add_argument("--lower", type=float, default=-1.5)
    p.add_argument("--upper", type=float, default=1.5)
    p.add_argument("--grid-step", type=float, default=grid_step)


def _add_data(p):
    p.add_argument("--family", default="affine", choices=nw.FAMILY_NAMES)
    p.add_argument("--input-dim", type=int, default=1)
    p.add_argument("--beta-star", type=_float_list, default=[1.0])
    p.add_argument("--noise", default="gaussian", choices=nw.NOISE_LAWS)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--grid-step", type=float, default=None, help="parameter grid step (default: family's)")


def _add_sgd(p):
    _add_data(p)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--a0", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--mode", default="single_beta", choices=sgd.MODES)
    p.add_argument("--init", type=_float_list, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wideconvex", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"wideconvex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("kernel-weights", help="normalized two-sided kernel weights")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--width", type=int, default=1)
    p.set_defaults(handler=_kernel_weights)

    p = sub.add_parser("tauber", help="kernel means against window averages")
    p.add_argument("--sequence", default="even", choices=sorted(_SEQUENCES))
    p.add_argument("--alphas", type=_float_list, default=[0.5, 0.9, 0.99])
    p.add_argument("--n-cesaro", type=int, default=1_000_000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(handler=_tauber)

    p = sub.add_parser("minkowski-rate", help="Minkowski averages of a truncated epigraph")
    _add_function(p, 0.375)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--cap", type=float, default=None, help="cap level (default: scale-aware rule)")
    p.add_argument("--n-max", type=int, default=5)
    p.add_argument("--capacity", type=float, default=1e7)
    p.set_defaults(handler=_minkowski_rate)

    p = sub.add_parser("minorant", help="convex minorant of a sampled function")
    _add_function(p, 0.01)
    p.set_defaults(handler=_minorant)

    p = sub.add_parser("verify-corollary", help="hull of the truncated epigraph against the minorant's")
    _add_function(p, 0.05)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--cap", type=float, default=None)
    p.add_argument("--suite-size", type=int, default=0, help="run a seeded piecewise-smooth suite instead")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_verify_corollary)

    p = sub.add_parser("phi-argmin-sweep", help="per-unit argmin sweep over alpha, width and seed")
    _add_data(p)
    p.add_argument("--alphas", type=_float_list, default=[0.5, 0.9, 0.99])
    p.add_argument("--widths", type=_int_list, default=None, help="default: widest certified cutoff")
    p.add_argument("--cutoff-tol", type=float, default=1e-6)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--sample-index", type=int, default=0)
    p.set_defaults(handler=_phi_argmin_sweep)

    p = sub.add_parser("sgd-train", help="one projected SGD trajectory")
    _add_sgd(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_sgd_train)

    p = sub.add_parser("sgd-suite", help="seeded SGD trajectories with descent and decay diagnostics")
    _add_sgd(p)
    p.add_argument("--seeds", type=_int_list, default=list(range(20)))
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=0.05, help="distance to the least-squares fit")
    p.set_defaults(handler=_sgd_suite)

    for sp in sub.choices.values():
        _add_common(sp)
    return parser


def _subcommands(parser):
    return parser._subparsers._group_actions[0].choices


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    return parser


def _apply_config(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = parse_config(args.config)
    sp = _subparser(parser, args.command)
    known = {a.dest for a in sp._actions} - {"help", "config", "handler"}
    for key in values:
        if key not in known:
            raise UnknownKey(key)
    sp.set_defaults(**values)
    try:
        return parser.parse_args(argv)
    except UsageError as exc:
        raise ValidationError(f"bad config value: {exc}") from None


def _provenance(args) -> Dict[str, object]:
    prov: Dict[str, object] = {"tool": f"wideconvex {__version__}", "command": args.command}
    for key in sorted(vars(args)):
        if key not in _NOT_ECHOED:
            value = getattr(args, key)
            prov[key] = "auto" if value is None else value
    return prov


def run(argv: Optional[List[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        if args.threads < 1:
            raise ValidationError(f"threads must be at least 1, got {args.threads}")
        header, rows, summary = args.handler(args)
        text = render_csv(header, list(rows), _provenance(args))
    except UsageError as exc:
        named = [t for t in (argv or []) if t in _subcommands(parser)]
        (_subparser(parser, named[0]) if named else exc.parser).print_help(stderr)
        print(f"error: {exc}", file=stderr)
        return 1
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=stderr)
        return 1
    except ComputationError as exc:
        print(f"computation failed: {exc}", file=stderr)
        return 2
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    print(summary, file=stdout)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
