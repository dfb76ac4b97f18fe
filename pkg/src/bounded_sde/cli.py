"""Command-line front end for the boundary-preserving SDE schemes.

Subcommands:

* ``validate``  check a model's inward-drift boundary conditions by sampling
* ``simulate``  write sample trajectories (CSV: t, y_1..y_d, tag_1..tag_d)
* ``converge``  run a strong-convergence experiment (CSV: dt, rmse, stderr,
  realizations, plus a JSON sidecar with the fitted order and full config)
* ``probe``     one-step mean-square error against a fine-substep reference

All numeric CSV fields are written at full round-trip precision and output
bytes depend only on the run configuration and seed, never on the thread
count (capped by the BOUNDED_SDE_THREADS environment variable).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import convergence as conv
from .core import Error, TimeGrid
from .integrators import Scheme, SchemeConfig, Trajectory, simulate_path
from .core import FlowTag, validate_model
from .models import available_models, benchmark_case

_DEFAULT_DT_LIST = "2^-4,2^-5,2^-6,2^-7,2^-8,2^-9"
_DEFAULT_SEED = 12345


def parse_step_size(token: str) -> float:
    """Parse a step size given as a float or as a power like ``2^-9``."""
    token = token.strip()
    if "^" in token:
        base, _, exp = token.partition("^")
        return float(base) ** int(exp)
    return float(token)


def parse_dt_list(text: str) -> tuple[float, ...]:
    values = tuple(parse_step_size(tok) for tok in text.split(",") if tok.strip())
    if not values:
        raise ValueError("empty dt list")
    if any(v <= 0 for v in values):
        raise ValueError("step sizes must be positive")
    return values


def parse_vector(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


@dataclass(frozen=True)
class RunSpec:
    """Fully resolved description of one CLI run, embedded in all outputs."""

    command: str
    model: str
    scheme: str = Scheme.EM_MEAN.value
    T: Optional[float] = None
    steps: Optional[int] = None
    dt_list: Optional[tuple[float, ...]] = None
    realizations: Optional[int] = None
    paths: int = 1
    samples: int = 100_000
    seed: int = _DEFAULT_SEED
    x0: Optional[tuple[float, ...]] = None
    theta: float = 0.5
    theta_clamp: tuple[float, float] = (0.0, 1.0)
    drift_shift: bool = False
    drift_shift_size: float = 1.0
    reference: str = "auto"
    ref_scheme: str = Scheme.MIL_MEAN.value
    ref_dt: float = 2.0**-14
    substeps: int = 1000
    sup_error: bool = False
    out: Optional[Path] = None
    format: str = "csv"

    def to_dict(self) -> dict:
        data = {
            "command": self.command,
            "model": self.model,
            "scheme": self.scheme,
            "seed": self.seed,
            "format": self.format,
        }
        optional = {
            "T": self.T,
            "steps": self.steps,
            "dt_list": list(self.dt_list) if self.dt_list else None,
            "realizations": self.realizations,
            "paths": self.paths if self.command == "simulate" else None,
            "samples": self.samples if self.command == "validate" else None,
            "x0": list(self.x0) if self.x0 else None,
            "theta": self.theta,
            "theta_clamp": list(self.theta_clamp),
            "drift_shift": self.drift_shift,
            "drift_shift_size": self.drift_shift_size,
            "reference": self.reference if self.command == "converge" else None,
            "ref_scheme": self.ref_scheme if self.command == "converge" else None,
            "ref_dt": self.ref_dt if self.command == "converge" else None,
            "substeps": self.substeps if self.command == "probe" else None,
            "sup_error": self.sup_error if self.command == "converge" else None,
            "out": str(self.out) if self.out else None,
        }
        data.update({k: v for k, v in optional.items() if v is not None})
        return data


def _scheme_config(spec: RunSpec) -> SchemeConfig:
    return SchemeConfig(
        scheme=Scheme.from_name(spec.scheme),
        theta_fixed=spec.theta,
        theta_clamp=spec.theta_clamp,
        drift_shift=spec.drift_shift,
        drift_shift_size=spec.drift_shift_size,
    )


def _resolve_case(spec: RunSpec):
    case = benchmark_case(spec.model)
    x0 = np.asarray(spec.x0 if spec.x0 else case.x0, dtype=float)
    if x0.size == 1 and case.model.d > 1:
        x0 = np.full(case.model.d, float(x0))
    if x0.shape != (case.model.d,):
        raise ValueError(f"x0 must have {case.model.d} component(s)")
    T = spec.T if spec.T is not None else case.horizon
    return case, x0, T


def _sidecar_path(out: Path) -> Path:
    sidecar = out.with_suffix(".json")
    if sidecar == out:
        raise ValueError("CSV output path must not end in .json (it would clash with the sidecar)")
    return sidecar


def _write_tagged_csv(traj: Trajectory, path: Path) -> None:
    d = traj.states.shape[1]
    names = [f"y_{i + 1}" for i in range(d)] + [f"tag_{i + 1}" for i in range(d)]
    with open(path, "w", newline="\n") as fh:
        fh.write("t," + ",".join(names) + "\n")
        for n, t in enumerate(traj.times):
            ys = [repr(float(v)) for v in traj.states[n]]
            if n == 0:
                tags = ["-"] * d
            else:
                tags = [FlowTag.LETTERS[int(code)] for code in traj.tags[n - 1]]
            fh.write(",".join([repr(float(t))] + ys + tags) + "\n")


def _run_validate(spec: RunSpec) -> int:
    case, _, _ = _resolve_case(spec)
    report = validate_model(case.model, samples=spec.samples, seed=spec.seed)
    print(report.summary())
    if spec.out is not None:
        payload = {
            "spec_version": conv.SPEC_VERSION,
            "kind": "validation",
            "passed": report.passed,
            "model": report.model_label,
            "samples": report.samples,
            "seed": report.seed,
            "tolerance": report.tol,
            "worst_lower": report.worst_lower,
            "worst_upper": report.worst_upper,
            "messages": list(report.messages),
            "run_spec": spec.to_dict(),
        }
        conv._write_json(payload, spec.out)
    return 0 if report.passed else 1


def _run_simulate(spec: RunSpec) -> int:
    case, x0, T = _resolve_case(spec)
    config = _scheme_config(spec)
    if spec.steps is None:
        raise ValueError("simulate requires --steps")
    if spec.out is None:
        raise ValueError("simulate requires --out")
    grid = TimeGrid(T, spec.steps)
    out = Path(spec.out)
    paths_meta = []
    for k in range(spec.paths):
        if grid.N > 0:
            lattice = conv.generate_lattice(case.model.d, grid, spec.seed, k)
            increments = lattice.increments
        else:
            increments = np.zeros((case.model.d, 0))
        traj = simulate_path(case.model, config, x0, grid, increments)
        if spec.paths == 1:
            target = out
        else:
            target = out.with_name(f"{out.stem}_p{k}{out.suffix or '.csv'}")
        if spec.format == "csv":
            _write_tagged_csv(traj, target)
        paths_meta.append(
            {
                "file": str(target),
                "realization_index": k,
                "theta_clamp_events": traj.theta_clamp_events,
            }
        )
    payload = {
        "spec_version": conv.SPEC_VERSION,
        "kind": "trajectory",
        "model": case.model.label,
        "scheme": config.scheme.value,
        "T": T,
        "steps": spec.steps,
        "seed": spec.seed,
        "x0": [float(v) for v in x0],
        "L": [float(v) for v in case.model.L],
        "R": [float(v) for v in case.model.R],
        "paths": paths_meta,
        "run_spec": spec.to_dict(),
    }
    if spec.format == "json":
        conv._write_json(payload, out)
    else:
        conv._write_json(payload, _sidecar_path(out))
    return 0


def _resolve_reference(spec: RunSpec, case) -> conv.Reference:
    mode = spec.reference
    if mode == "auto":
        mode = "exact" if case.exact_solution is not None else "fine"
    if mode == "exact":
        if case.exact_solution is None:
            raise ValueError(f"model '{case.name}' has no exact solution; use --reference fine")
        return conv.ExactReference(case.exact_solution, description=f"exact solution of {case.name}")
    if mode == "fine":
        ref_config = SchemeConfig(scheme=Scheme.from_name(spec.ref_scheme))
        return conv.SchemeReference(config=ref_config, dt_ref=spec.ref_dt)
    raise ValueError("--reference must be one of: auto, exact, fine")


def _run_converge(spec: RunSpec) -> int:
    case, x0, T = _resolve_case(spec)
    config = _scheme_config(spec)
    if spec.out is None:
        raise ValueError("converge requires --out")
    dt_list = spec.dt_list or parse_dt_list(_DEFAULT_DT_LIST)
    realizations = spec.realizations if spec.realizations is not None else case.realizations
    reference = _resolve_reference(spec, case)
    report = conv.rmse_experiment(
        case.model,
        config,
        x0,
        T,
        dt_list,
        realizations,
        spec.seed,
        reference,
        sup_error=spec.sup_error,
    )
    out = Path(spec.out)
    payload = report.to_dict()
    payload["run_spec"] = spec.to_dict()
    if spec.format == "json":
        conv._write_json(payload, out)
    else:
        report.write_csv(out)
        conv._write_json(payload, _sidecar_path(out))
    return 0


def _run_probe(spec: RunSpec) -> int:
    case, x0, _ = _resolve_case(spec)
    config = _scheme_config(spec)
    if spec.out is None:
        raise ValueError("probe requires --out")
    dt_list = spec.dt_list or parse_dt_list(_DEFAULT_DT_LIST)
    realizations = spec.realizations if spec.realizations is not None else 8192
    report = conv.local_error_probe(
        case.model, config, x0, dt_list, realizations, spec.seed, substeps=spec.substeps
    )
    out = Path(spec.out)
    payload = report.to_dict()
    payload["run_spec"] = spec.to_dict()
    if spec.format == "json":
        conv._write_json(payload, out)
    else:
        report.write_csv(out)
        conv._write_json(payload, _sidecar_path(out))
    return 0


def run(spec: RunSpec) -> int:
    """Execute a resolved run specification; returns the process exit status."""
    handlers = {
        "validate": _run_validate,
        "simulate": _run_simulate,
        "converge": _run_converge,
        "probe": _run_probe,
    }
    try:
        handler = handlers[spec.command]
    except KeyError:
        raise ValueError(f"unknown command '{spec.command}'") from None
    return handler(spec)


def _add_common(parser: argparse.ArgumentParser, with_scheme: bool = True) -> None:
    parser.add_argument(
        "--model",
        required=True,
        help=f"model name ({', '.join(available_models())})",
    )
    parser.add_argument("--seed", type=int, default=_DEFAULT_SEED, help="base seed (default %(default)s)")
    parser.add_argument("--out", type=Path, default=None, help="output file path")
    parser.add_argument(
        "--format", choices=("csv", "json"), default="csv",
        help="primary artifact format; csv also writes a .json sidecar",
    )
    if with_scheme:
        parser.add_argument(
            "--scheme", default=Scheme.EM_MEAN.value,
            help="scheme name (em-mean, em-weighted, mil-mean, proj-em, proj-mil)",
        )
        parser.add_argument("--x0", type=str, default=None, help="initial state, comma-separated")
        parser.add_argument("--theta", type=float, default=0.5, help="fixed combination weight")
        parser.add_argument(
            "--theta-clamp", type=str, default="0,1",
            help="clamp interval for the weighted combination weight",
        )
        parser.add_argument("--drift-shift", action="store_true", help="stabilise near-zero boundary drifts")
        parser.add_argument("--drift-shift-size", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bounded-sde",
        description="Boundary-preserving SDE schemes and strong-convergence benchmarks.",
        epilog="The BOUNDED_SDE_THREADS environment variable caps the worker thread count.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model's boundary conditions by sampling")
    _add_common(p, with_scheme=False)
    p.add_argument("--samples", type=int, default=100_000)

    p = sub.add_parser("simulate", help="write sample trajectories")
    _add_common(p)
    p.add_argument("--T", type=float, default=None, help="final time (default: model's)")
    p.add_argument("--steps", type=int, default=512, help="number of time steps")
    p.add_argument("--paths", type=int, default=1, help="number of independent trajectories")

    p = sub.add_parser("converge", help="strong-convergence experiment")
    _add_common(p)
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--dt-list", type=str, default=_DEFAULT_DT_LIST)
    p.add_argument("--realizations", type=int, default=None, help="default: model's benchmark count")
    p.add_argument("--reference", choices=("auto", "exact", "fine"), default="auto")
    p.add_argument("--ref-scheme", default=Scheme.MIL_MEAN.value)
    p.add_argument("--ref-dt", type=str, default="2^-14")
    p.add_argument("--sup-error", action="store_true", help="measure sup-over-grid error instead of final-time")

    p = sub.add_parser("probe", help="one-step local error against a fine-substep reference")
    _add_common(p)
    p.add_argument("--dt-list", type=str, default=_DEFAULT_DT_LIST)
    p.add_argument("--realizations", type=int, default=8192)
    p.add_argument("--substeps", type=int, default=1000)
    return parser


def _spec_from_args(args: argparse.Namespace) -> RunSpec:
    kwargs = {
        "command": args.command,
        "model": args.model,
        "seed": args.seed,
        "out": args.out,
        "format": args.format,
    }
    if hasattr(args, "scheme"):
        kwargs.update(
            scheme=args.scheme,
            x0=parse_vector(args.x0) if args.x0 else None,
            theta=args.theta,
            theta_clamp=tuple(parse_vector(args.theta_clamp)),
            drift_shift=args.drift_shift,
            drift_shift_size=args.drift_shift_size,
        )
    if hasattr(args, "samples"):
        kwargs["samples"] = args.samples
    if hasattr(args, "T"):
        kwargs["T"] = args.T
    if hasattr(args, "steps"):
        kwargs["steps"] = args.steps
    if hasattr(args, "paths"):
        kwargs["paths"] = args.paths
    if hasattr(args, "dt_list"):
        kwargs["dt_list"] = parse_dt_list(args.dt_list)
    if hasattr(args, "realizations"):
        kwargs["realizations"] = args.realizations
    if hasattr(args, "reference"):
        kwargs.update(
            reference=args.reference,
            ref_scheme=args.ref_scheme,
            ref_dt=parse_step_size(args.ref_dt),
            sup_error=args.sup_error,
        )
    if hasattr(args, "substeps"):
        kwargs["substeps"] = args.substeps
    spec = RunSpec(**kwargs)
    if len(spec.theta_clamp) != 2:
        raise ValueError("--theta-clamp needs exactly two values")
    return spec


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = _spec_from_args(args)
        return run(spec)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
