"""``qfilter`` command line.

Exit codes: 0 success, 1 internal error, 2 parse or usage error,
3 validation failure, 4 integration failure.
"""

import argparse
import sys
import traceback

import numpy as np

from . import filter as engine
from .errors import IntegrationError, ParseError, ValidationError
from .gaussian_field import validate_gaussian
from .measurement import validate_measurement
from .model_io import load_model, write_records

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_INTEGRATION = 4

DEFAULT_DT = 1e-3
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


def _positive_float(text):
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not np.isfinite(val) or val <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive finite number: {text!r}")
    return val


def _nonneg_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if val < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text!r}")
    return val


def _times(text):
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated times, got {text!r}") from None
    if not all(np.isfinite(v) and v >= 0 for v in vals):
        raise argparse.ArgumentTypeError("snapshot times must be finite and non-negative")
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="qfilter", description="Quantum filtering for Gaussian-field driven open systems.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    help_text = {
        "validate": "check a model file stage by stage",
        "simulate": "simulate one measurement record and its filter",
        "ensemble": "average many trajectories and compare with the master equation",
        "master": "solve the unconditional master equation",
    }
    for name, text in help_text.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--model", required=True, help="model file (YAML)")
        p.add_argument("--output", help="write results here instead of stdout")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--quiet", action="store_true", help="suppress progress and report output")
        if name == "validate":
            continue
        p.add_argument("--dt", type=_positive_float)
        p.add_argument("--tmax", type=_positive_float)
        p.add_argument("--snapshots", type=_times)
        if name in ("simulate", "ensemble"):
            p.add_argument("--seed", type=_nonneg_int)
        if name == "ensemble":
            p.add_argument("--trajectories", type=_nonneg_int)
    return parser


def _log(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def _settings(args, bundle):
    """Resolve run settings: command line, then model file, then defaults."""
    sim = bundle.simulation
    T = args.tmax if args.tmax is not None else sim.T
    if T is None:
        raise UsageError("no time horizon: pass --tmax or set simulation.T")
    dt = args.dt if args.dt is not None else (sim.dt if sim.dt is not None else DEFAULT_DT)
    if dt > T:
        raise UsageError(f"dt = {dt:g} exceeds tmax = {T:g}")
    try:
        steps = engine.grid_steps(T, dt)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.snapshots is not None:
        snaps = args.snapshots
    else:
        # model-file snapshots past an overridden horizon are dropped, not errors
        snaps = tuple(t for t in sim.snapshots if t <= T * (1 + 1e-12))
    try:
        engine.snapshot_indices(snaps, dt, steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = {"T": T, "dt": dt, "snapshots": tuple(snaps)}
    if hasattr(args, "seed"):
        out["seed"] = args.seed if args.seed is not None else (sim.seed if sim.seed is not None else DEFAULT_SEED)
    if hasattr(args, "trajectories"):
        count = args.trajectories if args.trajectories is not None else sim.trajectories
        if count is None:
            raise UsageError("no trajectory count: pass --trajectories or set simulation.trajectories")
        if count < 2:
            raise UsageError(f"an ensemble needs at least 2 trajectories, got {count}")
        out["trajectories"] = count
    return out


def _emit(args, payload):
    if args.output:
        with open(args.output, "wb") as fh:
            fh.write(payload)
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()


def _load(args):
    try:
        return load_model(args.model, validate=False)
    except FileNotFoundError:
        raise UsageError(f"model file not found: {args.model}") from None
    except IsADirectoryError:
        raise UsageError(f"model path is a directory: {args.model}") from None
    except PermissionError:
        raise UsageError(f"model file not readable: {args.model}") from None


# ---------------------------------------------------------------------------
# subcommands


def _fmt_residuals(res):
    return ", ".join(f"{k} {v:.2e}" for k, v in res.items())


def cmd_validate(args):
    """Run every validation stage and report each one."""
    lines = []
    ok = True

    def report(status, stage, detail):
        lines.append(f"{status:<4}  {stage:<22} {detail}")

    bundle = _load(args)
    report("PASS", "parse", f"d = {bundle.d}, n = {bundle.n}, m = {bundle.G.shape[0]}")
    failure = None
    try:
        system = bundle.system()
        report("PASS", "system", f"dims {list(system.dims)}, {system.n} coupling(s)")
        spec = validate_gaussian(bundle.N, bundle.M)
        kind = "vacuum" if spec.is_vacuum else "non-vacuum"
        report("PASS", "gaussian-spec", f"{kind}, min eig(F) = {spec.min_eigenvalue:.6g}")
        coeffs = spec.coefficients
        report("PASS", "factorization", "residuals " + _fmt_residuals(coeffs.residuals()))
        meas = validate_measurement(bundle.G, bundle.n)
        report("PASS", "measurement", f"commutation residual {meas.commutation_residual:.2e}")
        model = engine.build_filter_model(system, bundle.G, field=spec, mode=bundle.field_mode)
        if model.mode == "gaussian":
            report("PASS", "lifted-measurement", f"commutation residual {model.measurement.commutation_residual:.2e}")
        comp = model.completion
        report("PASS", "completion", f"cond(W) = {comp.condition_number:.6g}")
        top = float(np.max(np.abs(comp.K[: model.m] - np.eye(model.m))))
        report("PASS", "gain", f"K top-block residual {top:.2e}")
        eig = np.linalg.eigvalsh(comp.Sigma)
        report("PASS", "noise-covariance", "Sigma eigenvalues " + ", ".join(f"{x:.6g}" for x in eig))
        for name, op in bundle.observables.items():
            herm = float(np.max(np.abs(op - op.conj().T)))
            if herm > 1e-10:
                report("NOTE", f"observable {name}", f"not Hermitian (residual {herm:.2e}); complex expectations")
    except ValidationError as exc:
        ok = False
        failure = exc
        stage = exc.stage or "validation"
        check = f" [{exc.check}]" if exc.check else ""
        report("FAIL", stage, f"{exc}{check}")
    report("OK" if ok else "FAIL", "model", "all checks passed" if ok else "validation failed")
    text = "\n".join(lines) + "\n"
    if args.output:
        _emit(args, text.encode())
    elif not args.quiet:
        sys.stdout.write(text)
    if failure is not None:
        print(f"qfilter: validation failed: {failure}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def _build(args, bundle):
    model = bundle.build()
    _log(args, f"model: mode {model.mode}, d = {model.d}, n = {model.system.n}, m = {model.m}")
    return model


def cmd_simulate(args):
    bundle = _load(args)
    cfg = _settings(args, bundle)
    model = _build(args, bundle)
    rec = engine.simulate_trajectory(
        model, cfg["T"], cfg["dt"], cfg["seed"], observables=bundle.observables, snapshots=cfg["snapshots"]
    )
    _emit(args, write_records(rec, args.format))
    return EXIT_OK


def cmd_ensemble(args):
    bundle = _load(args)
    cfg = _settings(args, bundle)
    model = _build(args, bundle)
    res = engine.ensemble_average(
        model,
        cfg["T"],
        cfg["dt"],
        cfg["trajectories"],
        base_seed=cfg["seed"],
        observables=bundle.observables,
        snapshots=cfg["snapshots"],
    )
    ratio = float(np.max(res.deviation_grid / np.maximum(res.se_grid, 1e-300)))
    _log(args, f"ensemble: {res.count} trajectories, max deviation / SE = {ratio:.3f}")
    _emit(args, write_records(res, args.format))
    return EXIT_OK


def cmd_master(args):
    bundle = _load(args)
    cfg = _settings(args, bundle)
    model = _build(args, bundle)
    rec = engine.master_record(model, cfg["T"], cfg["dt"], observables=bundle.observables, snapshots=cfg["snapshots"])
    _emit(args, write_records(rec, args.format))
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "ensemble": cmd_ensemble, "master": cmd_master}


def run(argv=None):
    """Parse ``argv`` and run the subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ParseError) as exc:
        print(f"qfilter: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        where = f" (stage {exc.stage}, check {exc.check})" if exc.stage or exc.check else ""
        print(f"qfilter: validation failed{where}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IntegrationError as exc:
        print(f"qfilter: integration failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except OSError as exc:
        print(f"qfilter: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        print("qfilter: internal error", file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        return EXIT_INTERNAL


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
