"""Time evolution: fixed-step RK4 and the exact commuting-case propagator."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np
from scipy import sparse

from .manifold import SteadyProjector, steady_projector
from .models import GeneratorModel, require_commuting
from .operators import (basis_state, devectorize, random_density, require_density_operator,
                        trace_distance, vectorize)
from .spectral import attractiveness, damping_basis, propagator_from_integrals, rate_integrals

log = logging.getLogger(__name__)

TRACE_DRIFT_TOL = 1e-8
POSITIVITY_SLACK = 1e-6


class IntegrationError(RuntimeError):
    """The integrator left the set of density operators."""


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray = field(repr=False)  # shape (n_times, d, d)
    method: str

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _rk4_step(terms, t: float, v: np.ndarray, h: float) -> np.ndarray:
    def rhs(tau, x):
        return sum(rate(tau) * (piece @ x) for rate, piece in terms)

    k1 = rhs(t, v)
    k2 = rhs(t + 0.5 * h, v + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, v + 0.5 * h * k2)
    k4 = rhs(t + h, v + h * k3)
    return v + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def evolve_ode(model: GeneratorModel, rho0: np.ndarray, t_max: float, steps: int,
               check_positivity: bool = True) -> Trajectory:
    """Integrate ``d rho/dt = L(t) rho`` with classical RK4 at fixed step ``t_max/steps``.

    Every state is renormalized in trace; drift above 1e-8 is logged.
    """
    if steps < 2:
        raise ValueError("steps must be at least 2")
    rho0 = require_density_operator(rho0, name="initial state")
    d = model.dimension
    if rho0.shape != (d, d):
        raise ValueError(f"initial state shape {rho0.shape} does not match model dimension {d}")
    h = t_max / steps
    times = np.linspace(0.0, t_max, steps + 1)
    states = np.empty((steps + 1, d, d), dtype=complex)
    states[0] = rho0
    v = vectorize(rho0).copy()
    # generator pieces are sparse for typical jump operators
    terms = [(term.rate, sparse.csr_array(term.piece)) for term in model.active_terms()]
    if not terms:
        states[1:] = rho0
        return Trajectory(times, states, "rk4")
    for n in range(steps):
        v = _rk4_step(terms, times[n], v, h)
        rho = devectorize(v, d)
        tr = np.trace(rho)
        if abs(tr - 1) > TRACE_DRIFT_TOL:
            log.warning("trace drift %.3g at t=%.6g renormalized", abs(tr - 1), times[n + 1])
        rho = rho / tr.real
        if check_positivity:
            lowest = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
            if lowest < -POSITIVITY_SLACK:
                raise IntegrationError(
                    f"state lost positivity at step {n + 1} (t={times[n + 1]:.6g}, eigenvalue "
                    f"{lowest:.3g}); try a smaller step than h={h:.3g}")
        states[n + 1] = rho
        v = vectorize(rho).copy()
    return Trajectory(times, states, "rk4")


def evolve_exact(model: GeneratorModel, rho0: np.ndarray, times: Sequence[float], basis=None) -> Trajectory:
    """Apply the exact propagator ``Lambda(t)`` at each requested time."""
    require_commuting(model)
    rho0 = require_density_operator(rho0, name="initial state")
    basis = damping_basis(model) if basis is None else basis
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    d = model.dimension
    table = rate_integrals(basis.rates, times)
    v0 = vectorize(rho0)
    states = np.empty((len(times), d, d), dtype=complex)
    for i in range(len(times)):
        rho = devectorize(propagator_from_integrals(basis, table[:, i]) @ v0, d)
        states[i] = 0.5 * (rho + rho.conj().T)
    return Trajectory(times, states, "exact")


def max_trace_distance(a: Trajectory, b: Trajectory) -> float:
    if a.states.shape != b.states.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise ValueError("trajectories are sampled on different time grids")
    return max(trace_distance(x, y) for x, y in zip(a.states, b.states))


@dataclass(frozen=True)
class AttractionTrace:
    times: np.ndarray
    distances: np.ndarray
    final_distance: float
    monotone: bool
    monotone_envelope: bool


def _checkpoint_indices(times: np.ndarray) -> list[int]:
    t_end = times[-1]
    return [int(np.argmin(np.abs(times - frac * t_end))) for frac in (0.25, 0.5, 1.0)]


def attraction_trace(traj: Trajectory, projector: SteadyProjector) -> AttractionTrace:
    """Trace distance from each state to its projection onto the steady manifold."""
    if traj.states.shape[1] != projector.hilbert_dim:
        raise ValueError("trajectory and projector dimensions differ")
    dist = np.array([trace_distance(rho, projector(rho)) for rho in traj.states])
    monotone = bool(np.all(np.diff(dist) <= 1e-10))
    env = dist[_checkpoint_indices(traj.times)]
    envelope = bool(np.all(np.diff(env) <= 1e-10))
    return AttractionTrace(traj.times, dist, float(dist[-1]), monotone, envelope)


@dataclass(frozen=True)
class AttractionReport:
    attracted: bool
    horizon: float
    tol: float
    final_distances: tuple[float, ...]
    spectral_attractive: bool
    consistent: bool
    note: str = ""

    def to_dict(self) -> dict:
        return {"attracted": self.attracted, "horizon": self.horizon, "tol": self.tol,
                "final_distances": list(self.final_distances),
                "max_final_distance": max(self.final_distances),
                "spectral_attractive": self.spectral_attractive, "consistent": self.consistent,
                "note": self.note}


def default_initial_states(d: int, seed: int = 0, n_random: int = 10) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [random_density(d, rng) for _ in range(n_random)] + [basis_state(d, k) for k in range(d)]


def verify_attraction(model: GeneratorModel, projector: SteadyProjector | None = None,
                      initial_states: Sequence[np.ndarray] | None = None, horizon: float = 50.0,
                      tol: float = 1e-4, seed: int = 0) -> AttractionReport:
    """Evolve initial states to ``horizon`` and test closeness to the steady manifold.

    The verdict is relative to the finite horizon. It is compared with the
    spectral attractiveness verdict at the same horizon and any
    disagreement is recorded in the report.
    """
    require_commuting(model)
    basis = damping_basis(model, seed=seed)
    projector = steady_projector(model, seed=seed) if projector is None else projector
    states = default_initial_states(model.dimension, seed) if initial_states is None else initial_states
    finals = []
    for rho in states:
        traj = evolve_exact(model, rho, [horizon], basis)
        finals.append(trace_distance(traj.final, projector(traj.final)))
    attracted = all(x <= tol for x in finals)
    spectral = attractiveness(model, horizon=horizon, basis=basis).attractive
    note = "" if attracted == spectral else (
        "trajectory verdict differs from the spectral verdict; the trajectory test only sees the "
        "finite horizon")
    return AttractionReport(attracted, horizon, tol, tuple(finals), spectral, attracted == spectral, note)


def write_trajectory_csv(traj: Trajectory, out: TextIO | str | None = None,
                         distances: Sequence[float] | None = None) -> str:
    """CSV with ``t``, real/imaginary parts of each entry (row-major) and optional manifold distance."""
    d = traj.states.shape[1]
    header = ["t"]
    for i in range(d):
        for j in range(d):
            header += [f"re_{i}_{j}", f"im_{i}_{j}"]
    if distances is not None:
        header.append("manifold_distance")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for k, (t, rho) in enumerate(zip(traj.times, traj.states)):
        row = [f"{t:.17g}"]
        for z in rho.ravel():
            row += [f"{z.real:.17g}", f"{z.imag:.17g}"]
        if distances is not None:
            row.append(f"{distances[k]:.17g}")
        writer.writerow(row)
    text = buf.getvalue()
    if isinstance(out, str):
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    elif out is not None:
        out.write(text)
    return text
