"""Damping basis of a commuting generator family, exact propagators, attractiveness."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .models import GeneratorModel, NonCommutingError, check_commutativity
from .operators import devectorize, hilbert_dim
from .rates import RateFunction

CLUSTER_TOL = 1e-8
CONDITION_LIMIT = 1e8
STEADY_TOL = 1e-10


def _clusters(values: np.ndarray, tol: float) -> list[np.ndarray]:
    """Group indices of complex values closer than ``tol`` (single linkage)."""
    n = len(values)
    labels = -np.ones(n, dtype=int)
    current = 0
    for i in range(n):
        if labels[i] >= 0:
            continue
        labels[i] = current
        stack = [i]
        while stack:
            j = stack.pop()
            near = np.where((labels < 0) & (np.abs(values - values[j]) <= tol))[0]
            labels[near] = current
            stack.extend(near.tolist())
        current += 1
    return [np.where(labels == c)[0] for c in range(current)]


def _hermitian_cluster_basis(vecs: np.ndarray, d: int) -> np.ndarray | None:
    """Orthonormal basis of vectorized Hermitian matrices spanning ``vecs``, if the span is †-closed."""
    k = vecs.shape[1]
    mats = [devectorize(vecs[:, j], d) for j in range(k)]
    herm = []
    for m in mats:
        herm.append(0.5 * (m + m.conj().T))
        herm.append(-0.5j * (m - m.conj().T))
    # Real coordinates keep the combinations real, hence Hermitian.
    real_coords = np.array([np.concatenate([h.real.ravel(), h.imag.ravel()]) for h in herm]).T
    u, s, _ = np.linalg.svd(real_coords, full_matrices=False)
    if s.size < k or (k < s.size and s[k] > 1e-8 * s[0]):
        return None
    half = d * d
    out = []
    for j in range(k):
        h = (u[:half, j] + 1j * u[half:, j]).reshape(d, d)
        out.append(h.reshape(-1, order="F"))
    basis = np.array(out).T
    # Must span the same space as the input cluster.
    proj = vecs @ np.linalg.pinv(vecs)
    if np.linalg.norm(basis - proj @ basis) > 1e-8:
        return None
    return basis / np.linalg.norm(basis, axis=0)


@dataclass(frozen=True)
class DampingBasis:
    """Common right/left eigenbasis of commuting generator pieces.

    ``coeffs[mu, g]`` is the eigenvalue of piece ``g`` on mode ``mu`` so that
    ``lambda_mu(t) = sum_g rates[g](t) * coeffs[mu, g]``. ``right`` holds the
    vectorized ``R_mu`` as columns and ``left_dual`` the rows ``vec(L_mu)^dag``,
    so ``left_dual @ right`` is the identity.
    """

    hilbert_dim: int
    rates: tuple[RateFunction, ...]
    pieces: tuple[np.ndarray, ...] = field(repr=False)
    coeffs: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)
    left_dual: np.ndarray = field(repr=False)
    diagonalizable: bool
    condition_number: float

    @property
    def n_modes(self) -> int:
        return self.right.shape[1]

    def right_matrix(self, mu: int) -> np.ndarray:
        return devectorize(self.right[:, mu], self.hilbert_dim)

    def left_matrix(self, mu: int) -> np.ndarray:
        return devectorize(self.left_dual[mu].conj(), self.hilbert_dim)

    def eigenvalues_at(self, t: float) -> np.ndarray:
        """Spectral parameters ``lambda_mu(t)``."""
        f = np.array([r(t) for r in self.rates])
        return self.coeffs @ f if len(f) else np.zeros(self.n_modes, dtype=complex)

    def integrated_eigenvalues(self, t: float) -> np.ndarray:
        """``int_0^t lambda_mu`` for every mode."""
        return self.coeffs @ rate_integrals(self.rates, [t])[:, 0] if self.rates else \
            np.zeros(self.n_modes, dtype=complex)

    def steady_modes(self, tol: float = STEADY_TOL) -> np.ndarray:
        """Boolean mask of modes whose eigenvalue coefficients all vanish."""
        if not self.rates:
            return np.ones(self.n_modes, dtype=bool)
        return np.all(np.abs(self.coeffs) <= tol, axis=1)

    def biorthonormality_error(self) -> float:
        return float(np.abs(self.left_dual @ self.right - np.eye(self.n_modes)).max())

    def to_dict(self) -> dict:
        return {
            "n_modes": self.n_modes,
            "diagonalizable": self.diagonalizable,
            "condition_number": self.condition_number,
            "rates": [r.to_dict() for r in self.rates],
            "modes": [{"coeffs": [[float(c.real), float(c.imag)] for c in self.coeffs[mu]],
                       "steady": bool(self.steady_modes()[mu])} for mu in range(self.n_modes)],
            "biorthonormality_error": self.biorthonormality_error(),
        }


def rate_integrals(rates: Sequence[RateFunction], times: Sequence[float]) -> np.ndarray:
    """Matrix ``F[g, i] = int_0^{t_i} rates[g]``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if not len(rates):
        return np.zeros((0, len(times)))
    return np.array([r.integrals(times) for r in rates])


def damping_basis(model: GeneratorModel, seed: int = 0, tol: float = 1e-10) -> DampingBasis:
    """Simultaneous eigendecomposition of the model's commuting generator pieces.

    A random real combination of the pieces is diagonalized; within each
    eigenvalue cluster the per-piece blocks are re-diagonalized if the
    combination left them coupled, and real-eigenvalue clusters closed under
    the adjoint get a Hermitian basis.
    """
    report = check_commutativity(model, tol=tol, n_samples=0)
    if not report.commuting:
        raise NonCommutingError(
            f"no common damping basis: pieces do not commute "
            f"(max normalized commutator {report.max_pair_residual:.3g})")
    d = model.dimension
    n = d * d
    groups = model.rate_groups()
    rates = tuple(r for r, _ in groups)
    pieces = tuple(np.array(p) for _, p in groups)
    if not pieces:
        eye = np.eye(n, dtype=complex)
        return DampingBasis(d, (), (), np.zeros((n, 0), dtype=complex), eye, eye, True, 1.0)

    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 1.5, size=len(pieces))
    combo = sum(w * p for w, p in zip(weights, pieces))
    evals, vecs = np.linalg.eig(combo)
    radius = max(1.0, float(np.abs(evals).max()))
    clusters = _clusters(evals, CLUSTER_TOL * radius)

    for idx in clusters:
        if len(idx) < 2:
            continue
        q, _ = np.linalg.qr(vecs[:, idx])
        vecs[:, idx] = q
    vinv = np.linalg.inv(vecs)

    # Split clusters where individual pieces still act non-trivially.
    split = set()
    for c, idx in enumerate(clusters):
        if len(idx) < 2:
            continue
        blocks = [(vinv @ p @ vecs)[np.ix_(idx, idx)] for p in pieces]
        coupled = any(np.linalg.norm(b - np.trace(b) / len(idx) * np.eye(len(idx))) >
                      1e-9 * max(1.0, np.linalg.norm(b)) for b in blocks)
        if coupled:
            mix = sum(rng.normal() * b for b in blocks)
            _, w = np.linalg.eig(mix)
            vecs[:, idx] = vecs[:, idx] @ w
            split.add(c)

    # Hermitian bases for real clusters closed under the adjoint.
    for c, idx in enumerate(clusters):
        if c in split or abs(evals[idx[0]].imag) > CLUSTER_TOL * radius:
            continue
        herm = _hermitian_cluster_basis(vecs[:, idx], d)
        if herm is not None:
            vecs[:, idx] = herm
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    vinv = np.linalg.inv(vecs)

    coeffs = np.array([np.diag(vinv @ p @ vecs) for p in pieces]).T
    cond = float(np.linalg.cond(vecs))
    # Residual of the diagonal form, per piece.
    diag_ok = all(np.linalg.norm(vinv @ p @ vecs - np.diag(c)) <= 1e-8 * max(1.0, np.linalg.norm(p))
                  for p, c in zip(pieces, coeffs.T))
    diagonalizable = bool(cond <= CONDITION_LIMIT and diag_ok)
    return DampingBasis(d, rates, pieces, coeffs, vecs, vinv, diagonalizable, cond)


def propagator_from_integrals(basis: DampingBasis, integrals: np.ndarray) -> np.ndarray:
    """Dynamical map for given rate integrals ``F_g``.

    Uses the mode expansion when the basis is diagonalizable and the dense
    exponential of ``sum_g F_g G_g`` otherwise.
    """
    integrals = np.asarray(integrals, dtype=float)
    if basis.diagonalizable:
        exponent = basis.coeffs @ integrals if len(integrals) else np.zeros(basis.n_modes)
        return (basis.right * np.exp(exponent)) @ basis.left_dual
    return exponential_propagator_from_integrals(basis, integrals)


def exponential_propagator_from_integrals(basis: DampingBasis, integrals: np.ndarray) -> np.ndarray:
    n = basis.hilbert_dim ** 2
    total = np.zeros((n, n), dtype=complex)
    for f, p in zip(integrals, basis.pieces):
        total += f * p
    return scipy.linalg.expm(total)


def propagator(model: GeneratorModel, t: float, basis: DampingBasis | None = None,
               method: str = "auto") -> np.ndarray:
    """``Lambda(t) = exp(int_0^t L)`` for a commuting model.

    ``method`` is ``"auto"`` (mode expansion if diagonalizable),
    ``"spectral"`` or ``"expm"``.
    """
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    basis = damping_basis(model) if basis is None else basis
    integrals = rate_integrals(basis.rates, [t])[:, 0]
    if method == "expm":
        return exponential_propagator_from_integrals(basis, integrals)
    if method == "spectral" and not basis.diagonalizable:
        raise ValueError("spectral propagator requested for a non-diagonalizable family")
    return propagator_from_integrals(basis, integrals)


def propagators(model: GeneratorModel, times: Sequence[float], basis: DampingBasis | None = None) -> list[np.ndarray]:
    basis = damping_basis(model) if basis is None else basis
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    table = rate_integrals(basis.rates, times)
    return [propagator_from_integrals(basis, table[:, i]) for i in range(len(times))]


def mode_rate_integral(model: GeneratorModel, basis: DampingBasis, mu: int, t: float) -> float:
    """``Re int_0^t lambda_mu``."""
    if not 0 <= mu < basis.n_modes:
        raise IndexError(f"mode index {mu} out of range (0..{basis.n_modes - 1})")
    if not basis.rates:
        return 0.0
    f = rate_integrals(basis.rates, [t])[:, 0]
    return float((basis.coeffs[mu] @ f).real)


@dataclass(frozen=True)
class AttractivenessReport:
    """Per-mode decay accumulation ``g_mu(T') = -Re int_0^{T'} lambda_mu`` at checkpoints."""

    horizon: float
    threshold: float
    growth: float
    checkpoints: tuple[float, ...]
    classification: tuple[str, ...]
    accumulated: np.ndarray = field(repr=False)
    asymptotic_rates: tuple[float | None, ...]
    attractive: bool
    certified: bool
    certified_attractive: bool | None
    note: str

    def to_dict(self) -> dict:
        return {
            "attractive": self.attractive,
            "horizon": self.horizon,
            "threshold": self.threshold,
            "growth": self.growth,
            "checkpoints": list(self.checkpoints),
            "certified": self.certified,
            "certified_attractive": self.certified_attractive,
            "note": self.note,
            "modes": [{"classification": c, "accumulated": [float(x) for x in self.accumulated[mu]],
                       "asymptotic_rate": self.asymptotic_rates[mu]}
                      for mu, c in enumerate(self.classification)],
            "counts": {k: self.classification.count(k) for k in ("steady", "decaying", "persistent")},
        }


def attractiveness(model: GeneratorModel, horizon: float = 100.0, threshold: float = 20.0,
                   growth: float = 1.0, basis: DampingBasis | None = None) -> AttractivenessReport:
    """Classify damping modes as steady, decaying or persistent over a finite horizon.

    A mode is decaying when ``g(T) >= threshold`` and ``g(T) - g(T/2) >= growth``.
    When every rate has a provable mean slope, ``g(t)`` is a linear function
    plus a bounded term and divergence is decided exactly; that verdict is
    reported separately as ``certified_attractive``.
    """
    basis = damping_basis(model) if basis is None else basis
    checkpoints = (horizon / 8, horizon / 4, horizon / 2, horizon)
    steady = basis.steady_modes()
    if basis.rates:
        g = -(basis.coeffs @ rate_integrals(basis.rates, checkpoints)).real
    else:
        g = np.zeros((basis.n_modes, len(checkpoints)))
    classes = []
    for mu in range(basis.n_modes):
        if steady[mu]:
            classes.append("steady")
        elif g[mu, -1] >= threshold and g[mu, -1] - g[mu, -2] >= growth:
            classes.append("decaying")
        else:
            classes.append("persistent")
    attractive = all(c != "persistent" for c in classes)

    slopes = [r.asymptotic_slope for r in basis.rates]
    certified = all(s is not None for s in slopes)
    if certified:
        slope_vec = np.array(slopes, dtype=float)
        mode_rates = [None if steady[mu] else float(-(basis.coeffs[mu] @ slope_vec).real)
                      for mu in range(basis.n_modes)]
        certified_attractive = all(r is None or r > STEADY_TOL for r in mode_rates)
        note = ("every rate has a mean slope with bounded remainder, so divergence of the "
                "accumulated decay is decided exactly by the asymptotic rates")
    else:
        mode_rates = [None] * basis.n_modes
        certified_attractive = None
        note = ("divergence as t -> infinity is not certified: at least one rate has no provable "
                "mean slope; the verdict uses the finite-horizon checkpoint heuristic")
    return AttractivenessReport(horizon, threshold, growth, checkpoints, tuple(classes), g,
                                tuple(mode_rates), attractive, certified, certified_attractive, note)


def spectrum_at(model: GeneratorModel, t: float) -> np.ndarray:
    """Plain eigenvalues of ``L(t)``; an oracle independent of the damping basis."""
    gen = model.generator_at(t)
    hilbert_dim(gen)
    return np.linalg.eigvals(gen)
