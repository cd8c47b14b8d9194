"""Command-line interface: JSON reports on stdout, diagnostics on stderr.

Exit codes: 0 success, 1 negative verdict (non-commuting, non-attractive),
2 input error, 3 internal verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import dynamics, manifold, models, spectral
from .operators import basis_state, is_cptp, require_density_operator, trace_distance
from .rates import RateEvaluationError, RateExpressionError, as_rate
from .serialization import matrix_from_json, matrix_to_json

SCHEMA_VERSION = 1

EXIT_OK, EXIT_NEGATIVE, EXIT_INPUT, EXIT_VERIFY = 0, 1, 2, 3


class InputError(Exception):
    pass


def _emit(command: str, payload: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "command": command}
    doc.update(payload)
    sys.stdout.write(json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _load(path: str) -> models.GeneratorModel:
    try:
        return models.load_model(path)
    except FileNotFoundError as exc:
        raise InputError(f"model file not found: {path}") from exc
    except OSError as exc:
        raise InputError(f"cannot read model file {path}: {exc}") from exc


def _load_state(spec: str | None, d: int) -> np.ndarray:
    """State from ``basis:k``, ``mixed`` or a JSON file (a matrix or ``{"state": matrix}``)."""
    if spec is None:
        return basis_state(d, d - 1)
    if spec == "mixed":
        return np.eye(d, dtype=complex) / d
    if spec.startswith("basis:"):
        k = int(spec.split(":", 1)[1])
        if not 0 <= k < d:
            raise InputError(f"basis index {k} out of range for dimension {d}")
        return basis_state(d, k)
    try:
        with open(spec, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"state file not found: {spec}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"state file {spec} is not valid JSON: {exc}") from exc
    rho = matrix_from_json(doc["state"] if isinstance(doc, dict) else doc)
    if rho.shape != (d, d):
        raise InputError(f"state shape {rho.shape} does not match model dimension {d}")
    return require_density_operator(rho)


def cmd_check_commute(args) -> int:
    model = _load(args.model)
    report = models.check_commutativity(model, tol=args.tol, n_samples=args.samples, seed=args.seed)
    _emit("check-commute", report.to_dict())
    return EXIT_OK if report.commuting else EXIT_NEGATIVE


def cmd_steady(args) -> int:
    model = _load(args.model)
    models.require_commuting(model)
    times = manifold.default_grid(args.t_max, args.grid)
    proj = manifold.steady_projector(model, sample_times=times, seed=args.seed)
    d = model.dimension
    rho0 = proj(np.eye(d, dtype=complex) / d)
    basis = spectral.damping_basis(model, seed=args.seed)
    witness = max(float(np.linalg.norm(ch @ rho0.reshape(-1, order="F") - rho0.reshape(-1, order="F")))
                  for ch in spectral.propagators(model, times, basis))
    cptp = is_cptp(proj.map)
    _emit("steady", {
        "fixed_space_dimension": proj.fixed_space.dimension,
        "idempotence_error": proj.idempotence_error(),
        "cptp": {"is_cptp": cptp.is_cptp, "min_choi_eigenvalue": cptp.min_choi_eigenvalue,
                 "trace_preservation_error": cptp.trace_preservation_error},
        "witness_state": matrix_to_json(rho0),
        "witness_fixed_residual": witness,
        "sample_times": times.tolist(),
        "diagnostics": proj.diagnostics,
        "projector": matrix_to_json(proj.map),
    })
    if not cptp.is_cptp or witness > 1e-8:
        print("error: steady projector failed post-verification", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_structure(args) -> int:
    model = _load(args.model)
    models.require_commuting(model)
    proj = manifold.steady_projector(model, seed=args.seed)
    structure = manifold.structure_decomposition(proj, seed=args.seed)
    payload = manifold.structure_to_dict(structure)
    payload.update({"block_dims": structure.block_dims,
                    "steady_dimension": structure.steady_dimension,
                    "fixed_space_dimension": proj.fixed_space.dimension,
                    "diagnostics": structure.diagnostics})
    _emit("structure", payload)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    model = _load(args.model)
    basis = spectral.damping_basis(model, seed=args.seed)
    _emit("spectrum", basis.to_dict())
    return EXIT_OK


def cmd_attract(args) -> int:
    model = _load(args.model)
    report = spectral.attractiveness(model, horizon=args.horizon, threshold=args.threshold,
                                     growth=args.growth,
                                     basis=spectral.damping_basis(model, seed=args.seed))
    _emit("attract", report.to_dict())
    return EXIT_OK if report.attractive else EXIT_NEGATIVE


def cmd_simulate(args) -> int:
    model = _load(args.model)
    rho0 = _load_state(args.state, model.dimension)
    commuting = models.check_commutativity(model, n_samples=0).commuting
    if args.method == "exact":
        if not commuting:
            raise models.NonCommutingError("exact propagation requires a commuting model")
        times = np.linspace(0.0, args.t_max, args.steps + 1)
        traj = dynamics.evolve_exact(model, rho0, times)
    else:
        traj = dynamics.evolve_ode(model, rho0, args.t_max, args.steps)
    summary = {"method": args.method, "n_points": len(traj.times), "t_max": args.t_max,
               "steps": args.steps, "final_state": matrix_to_json(traj.final)}
    distances = None
    if commuting:
        proj = manifold.steady_projector(model, seed=args.seed)
        trace = dynamics.attraction_trace(traj, proj)
        distances = trace.distances
        other = (dynamics.evolve_ode(model, rho0, args.t_max, args.steps) if args.method == "exact"
                 else dynamics.evolve_exact(model, rho0, traj.times))
        summary.update({
            "final_manifold_distance": trace.final_distance,
            "monotone_envelope": trace.monotone_envelope,
            "cross_check": {"method": other.method,
                            "max_trace_distance": dynamics.max_trace_distance(traj, other)},
        })
    if args.out:
        dynamics.write_trajectory_csv(traj, args.out, distances)
        summary["csv"] = args.out
    _emit("simulate", summary)
    return EXIT_OK


def cmd_project(args) -> int:
    model = _load(args.model)
    rho = _load_state(args.state, model.dimension)
    proj = manifold.steady_projector(model, seed=args.seed)
    out = manifold.project_to_manifold(proj, rho)
    _emit("project", {"state": matrix_to_json(out), "input_distance": trace_distance(rho, out)})
    return EXIT_OK


PRESET_PARAMS = {
    "amplitude-damping": {"gamma": "rate"},
    "pure-dephasing": {"n": "int", "gamma": "rate", "gamma0": "rate", "gamma1": "rate",
                       "gamma2": "rate", "gamma3": "rate"},
    "two-qubit-dephasing": {"gamma1": "rate", "gamma2": "rate"},
    "double-dot": {"phi": "float", "epsilon": "float", "kappa": "rate", "kappa_tilde": "rate",
                   "hamiltonian": "bool"},
}


def _parse_param(kind: str, key: str, text: str):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() not in ("on", "off", "true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {text!r}")
            return text.lower() in ("on", "true", "1", "yes")
        return as_rate(json.loads(text) if text.lstrip().startswith("{") else text)
    except (ValueError, KeyError) as exc:
        raise InputError(f"bad value for parameter {key!r}: {exc}") from exc


def build_preset(name: str, params: list[str]) -> models.GeneratorModel:
    if name not in PRESET_PARAMS:
        raise InputError(f"unknown preset {name!r}; known presets: {', '.join(sorted(PRESET_PARAMS))}")
    allowed = PRESET_PARAMS[name]
    values = {}
    for item in params:
        if "=" not in item:
            raise InputError(f"preset parameter must look like key=value, got {item!r}")
        key, text = item.split("=", 1)
        if key not in allowed:
            raise InputError(f"unknown parameter {key!r} for preset {name!r}; "
                             f"allowed: {', '.join(sorted(allowed))}")
        values[key] = _parse_param(allowed[key], key, text)
    if name == "amplitude-damping":
        return models.preset_amplitude_damping(values.get("gamma", 1.0))
    if name == "pure-dephasing":
        n = values.get("n", 1)
        per_qubit = [values.get(f"gamma{k}", values.get("gamma", 1.0)) for k in range(n)]
        return models.preset_pure_dephasing(n, per_qubit)
    if name == "two-qubit-dephasing":
        return models.preset_two_qubit_dephasing(values.get("gamma1", 1.0), values.get("gamma2", 0.0))
    return models.preset_double_dot(values.get("phi", 0.0), values.get("epsilon", 1.0),
                                    values.get("kappa", 1.0), values.get("kappa_tilde", 0.0),
                                    values.get("hamiltonian", False))


def cmd_preset(args) -> int:
    model = build_preset(args.name, args.params)
    text = models.save_model(model, args.out)
    payload = {"preset": args.name, "n_terms": len(model.terms), "dimension": model.dimension}
    if args.out:
        payload["written"] = args.out
    else:
        payload["model"] = json.loads(text)
    _emit("preset", payload)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tclsteady", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized steps (default 0)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log diagnostics to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-commute", help="test [L(t), L(t')] = 0")
    p.add_argument("model")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--samples", type=int, default=10)
    p.set_defaults(func=cmd_check_commute)

    p = sub.add_parser("steady", help="projector onto the steady-state manifold")
    p.add_argument("model")
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--grid", type=int, default=16)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("structure", help="block decomposition of the steady manifold")
    p.add_argument("model")
    p.set_defaults(func=cmd_structure)

    p = sub.add_parser("spectrum", help="damping basis")
    p.add_argument("model")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("attract", help="attractiveness from accumulated decay")
    p.add_argument("model")
    p.add_argument("--horizon", type=float, default=100.0)
    p.add_argument("--threshold", type=float, default=20.0)
    p.add_argument("--growth", type=float, default=1.0)
    p.set_defaults(func=cmd_attract)

    p = sub.add_parser("simulate", help="evolve a state and export a CSV trajectory")
    p.add_argument("model")
    p.add_argument("--state", help="basis:K, mixed, or a JSON state file (default: highest basis state)")
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--method", choices=["rk4", "exact"], default="rk4")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("project", help="project a state onto the steady manifold")
    p.add_argument("model")
    p.add_argument("--state", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("preset", help="write a preset model file")
    p.add_argument("name")
    p.add_argument("params", nargs="*", help="key=value parameters")
    p.add_argument("--out")
    p.set_defaults(func=cmd_preset)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (manifold.VerificationError, dynamics.IntegrationError) as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (InputError, models.ModelError, models.NonCommutingError, RateExpressionError,
            RateEvaluationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

if __name__ == "__main__":
    sys.exit(main())
