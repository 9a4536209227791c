"""Command line front end: ``etdrk <command> ...``.

Exit codes: 0 pass/success, 1 analytic fail, 2 partial verification,
3 usage or input error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import math
import os
import re
import sys

import numpy as np

from . import certificate, harness
from .adaptive import AdaptiveAbort, adaptive_run
from .stepper import DivergenceError, run
from .tableau import TableauParseError, order_conditions, resolve_scheme

EXIT_OK, EXIT_FAIL, EXIT_PARTIAL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # let values such as -1e-3 through as numbers rather than options
        self._negative_number_matcher = re.compile(r"^-(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text: str, path=None) -> None:
    if path:
        harness.write_text(path, text)
    else:
        sys.stdout.write(text)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


# analytic commands ------------------------------------------------------------
def cmd_certify(args) -> int:
    tab = resolve_scheme(args.scheme)
    report = certificate.certify(tab, args.z_min, args.z_max, args.points)
    text = "\n".join(report.csv_lines()) + "\n"
    if args.out:
        harness.write_text(args.out, text)
        print(report.verdict_line())
    else:
        sys.stdout.write(text)
    return {"pass": EXIT_OK, "fail": EXIT_FAIL}.get(report.verdict, EXIT_PARTIAL)


def cmd_order_check(args) -> int:
    tab = resolve_scheme(args.scheme)
    report = order_conditions(tab, args.order, args.z, mode=args.mode)
    _emit("\n".join(report.lines()) + "\n", args.out)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_minors(args) -> int:
    tab = resolve_scheme(args.scheme)
    z = -np.linspace(-args.z_max, -args.z_min, args.points)[::-1]
    table = certificate.minor_curves(tab, z)
    s = tab.stages
    header = ["z"] + [f"det{k}" for k in range(1, s + 1)] + ["scaled_det2", f"scaled_det{s}"]
    _emit(harness.csv_text(header, table.tolist()), args.out)
    return EXIT_OK


# configured runs --------------------------------------------------------------
_OVERRIDES = {
    # flag dest -> (section, key)
    "model": ("model", "name"),
    "epsilon": ("model", "epsilon"),
    "beta": ("model", "beta"),
    "M": ("model", "M"),
    "scheme": (None, "scheme"),
    "tau": (None, "tau"),
    "T": (None, "T"),
    "energy_csv": ("outputs", "energy_csv"),
    "steps_csv": ("outputs", "steps_csv"),
    "report": ("outputs", "report"),
    "snapshot_dir": ("outputs", "snapshot_dir"),
    "snapshot_times": ("outputs", "snapshot_times"),
    "rho": ("adaptive", "rho"),
    "tol": ("adaptive", "tol"),
    "r": ("adaptive", "r"),
    "tau_min": ("adaptive", "tau_min"),
    "tau_max": ("adaptive", "tau_max"),
    "norm": ("adaptive", "norm"),
    "base_tau": ("converge", "base_tau"),
    "k_max": ("converge", "k_max"),
    "reference_divisor": ("converge", "reference_divisor"),
}


_PATH_FLAGS = ("energy_csv", "steps_csv", "report", "snapshot_dir")


def build_config(args) -> harness.RunConfig:
    if args.config:
        cfg = harness.RunConfig.load(args.config)
        data, base = cfg.to_dict(), cfg.base_dir
    else:
        data, base = {"scheme": "ed-etdrk3a", "initial": {"kind": "preset", "name": "smooth"}}, None
    for dest, (section, key) in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        # paths given on the command line are relative to the working directory
        if dest in _PATH_FLAGS or (dest == "scheme" and os.path.exists(value)):
            value = os.path.abspath(value)
        target = data if section is None else data.setdefault(section, {})
        target[key] = value
    if args.n is not None or args.length is not None or "grid" not in data:
        dims = args.dims
        n = args.n if args.n is not None else 128
        length = args.length if args.length is not None else 2 * math.pi
        data["grid"] = {"n": [n] * dims, "lengths": [length] * dims}
    if args.ic is not None:
        data["initial"] = (
            {"kind": "preset", "name": args.ic} if args.ic in harness.INITIAL_PRESETS else {"kind": args.ic}
        )
    init = data.setdefault("initial", {"kind": "preset", "name": "smooth"})
    for key in ("seed", "mean", "amplitude", "value"):
        if getattr(args, key, None) is not None:
            init[key] = getattr(args, key)
    if args.ic_file is not None:
        data["initial"] = {"kind": "file", "path": os.path.abspath(args.ic_file)}
    return harness.RunConfig.from_dict(data, base)


def _output(cfg, key):
    """Configured output path, relative entries taken from the config's directory."""
    name = cfg.outputs.get(key)
    return cfg.resolve_path(name) if name else None


def _write_energy(cfg, record):
    path = _output(cfg, "energy_csv")
    text = harness.csv_text(harness.ENERGY_HEADER, record.energy_rows())
    if path:
        harness.write_text(path, text)
    return text


def _finish(cfg, record):
    if _output(cfg, "snapshot_dir") and record.snapshots:
        harness.write_snapshots(_output(cfg, "snapshot_dir"), record.snapshots)


def cmd_run(args) -> int:
    cfg = build_config(args)
    try:
        record = run(cfg.model(), cfg.tableau(), cfg.grid(), cfg.initial(), cfg.tau, cfg.data["T"],
                     cfg.outputs.get("snapshot_times", ()))
    except DivergenceError as exc:
        if exc.record is not None:
            _write_energy(cfg, exc.record)
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    text = _write_energy(cfg, record)
    if not cfg.outputs.get("energy_csv"):
        sys.stdout.write(text)
    _finish(cfg, record)
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = build_config(args)
    params = cfg.adaptive_params()
    try:
        record = adaptive_run(cfg.model(), cfg.grid(), cfg.initial(), params, cfg.data["T"],
                              cfg.outputs.get("snapshot_times", ()))
    except (DivergenceError, AdaptiveAbort) as exc:
        rec = getattr(exc, "record", None)
        if rec is not None:
            _write_energy(cfg, rec)
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _write_energy(cfg, record)
    steps = harness.csv_text(harness.STEPS_HEADER, record.attempt_rows())
    if _output(cfg, "steps_csv"):
        harness.write_text(_output(cfg, "steps_csv"), steps)
    else:
        sys.stdout.write(steps)
    _finish(cfg, record)
    print(f"# accepted={len(record.step_sizes) - 1} rejected={record.rejections}", file=sys.stderr)
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = build_config(args)
    opts = cfg.data.get("converge", {})
    try:
        table = harness.converge(cfg.model(), cfg.tableau(), cfg.grid(), cfg.initial(), cfg.data["T"],
                                 opts.get("base_tau") or cfg.tau, opts.get("k_max", 4),
                                 opts.get("reference_divisor", 2))
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _emit(table.csv(), _output(cfg, "report"))
    return EXIT_OK


# parser -------------------------------------------------------------------------
def _run_flags(p, adaptive=False, converge=False):
    p.add_argument("--config", help="JSON run configuration; flags below override it")
    p.add_argument("--model", choices=["allen-cahn", "cahn-hilliard", "mbe", "pfc"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--M", type=float)
    p.add_argument("--n", type=int, help="points per dimension")
    p.add_argument("--dims", type=int, choices=[1, 2], default=2)
    p.add_argument("--length", type=float, help="domain side length (default 2*pi)")
    p.add_argument("--scheme", help="built-in scheme name or tableau file")
    p.add_argument("--tau", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--ic", choices=[*harness.INITIAL_PRESETS, "random", "constant"])
    p.add_argument("--seed", type=int)
    p.add_argument("--mean", type=float)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--value", type=float)
    p.add_argument("--ic-file", help="ETDF snapshot used as initial field")
    p.add_argument("--energy-csv")
    p.add_argument("--snapshot-dir")
    p.add_argument("--snapshot-times", type=_floats)
    if adaptive:
        p.add_argument("--steps-csv")
        p.add_argument("--rho", type=float)
        p.add_argument("--tol", type=float)
        p.add_argument("--r", type=float)
        p.add_argument("--tau-min", type=float)
        p.add_argument("--tau-max", type=float)
        p.add_argument("--norm", choices=["l2", "linf"])
    if converge:
        p.add_argument("--report", help="output CSV (default stdout)")
        p.add_argument("--base-tau", type=float)
        p.add_argument("--k-max", type=int)
        p.add_argument("--reference-divisor", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="etdrk", description="Exponential Runge-Kutta schemes for gradient flows")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("certify", help="energy-stability certificate of a scheme")
    p.add_argument("scheme")
    p.add_argument("--z-min", type=float, default=certificate.DEFAULT_ZMIN)
    p.add_argument("--z-max", type=float, default=certificate.DEFAULT_ZMAX)
    p.add_argument("--points", type=int, default=certificate.DEFAULT_POINTS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("order-check", help="scalar order-condition residuals")
    p.add_argument("scheme")
    p.add_argument("order", type=int, choices=[1, 2, 3, 4])
    p.add_argument("--mode", choices=["classical", "stiff"], default="classical")
    p.add_argument("--z", type=_floats, default=[-0.5, -1.0, -2.0, -5.0, -20.0])
    p.add_argument("--out")
    p.set_defaults(func=cmd_order_check)

    p = sub.add_parser("minors", help="leading minors of the certificate matrix along z")
    p.add_argument("scheme")
    p.add_argument("--z-min", type=float, default=-6.0)
    p.add_argument("--z-max", type=float, default=-1e-3)
    p.add_argument("--points", type=int, default=500)
    p.add_argument("--out")
    p.set_defaults(func=cmd_minors)

    p = sub.add_parser("run", help="fixed-step run, energy CSV")
    _run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("adapt", help="adaptive run, energy and step CSV")
    _run_flags(p, adaptive=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("converge", help="self-convergence table")
    _run_flags(p, converge=True)
    p.set_defaults(func=cmd_converge)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, TableauParseError, certificate.SingularTableauError, ValueError, OSError) as exc:
        print(f"etdrk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
