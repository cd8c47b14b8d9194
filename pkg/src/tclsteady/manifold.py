"""Fixed points, Cesàro projectors and the block structure of the steady-state manifold."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models import GeneratorModel, require_commuting
from .operators import (OperatorSubspace, apply, dual_map, hilbert_dim, identity_superop,
                        null_space, operator_subspace_from_vectors, partial_trace, random_density,
                        require_density_operator, support_basis)
from .serialization import matrix_to_json
from .spectral import damping_basis, propagators

log = logging.getLogger(__name__)

EIGENVALUE_ONE_TOL = 1e-9
DEDUP_TOL = 1e-8
RECONSTRUCTION_TOL = 1e-8
CESARO_CHECK_N = 1024


class VerificationError(RuntimeError):
    """An internal post-condition check failed."""


def fixed_point_space(channel: np.ndarray, tol: float = 1e-9) -> OperatorSubspace:
    """HS-orthonormal basis of ``{X : channel(X) = X}``."""
    d = hilbert_dim(channel)
    kernel = null_space(channel - identity_superop(d), tol)
    return operator_subspace_from_vectors(kernel, d)


def cesaro_mean(channel: np.ndarray, n: int) -> np.ndarray:
    """Finite Cesàro mean ``(1/N) sum_{k=1}^N channel^k``, by doubling when N is a power of two."""
    size = channel.shape[0]
    if n < 1:
        raise ValueError("N must be positive")
    if n & (n - 1) == 0:
        # S(m) = sum_{k<m} channel^k, S(2m) = S(m) + channel^m S(m)
        partial = np.eye(size, dtype=complex)
        power = channel.astype(complex)
        m = 1
        while m < n:
            partial = partial + power @ partial
            power = power @ power
            m *= 2
        return channel @ partial / n
    total = np.zeros((size, size), dtype=complex)
    power = np.eye(size, dtype=complex)
    for _ in range(n):
        power = power @ channel
        total += power
    return total / n


@dataclass(frozen=True)
class SteadyProjector:
    """Projection superoperator onto a set of fixed points, with its fixed space."""

    map: np.ndarray = field(repr=False)
    hilbert_dim: int
    fixed_space: OperatorSubspace = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return apply(self.map, x)

    def idempotence_error(self) -> float:
        return float(np.linalg.norm(self.map @ self.map - self.map) / max(1.0, np.linalg.norm(self.map)))


def _projector_from_kernels(right: np.ndarray, left: np.ndarray) -> np.ndarray:
    """``R (L^dag R)^{-1} L^dag`` for right/left kernel bases."""
    return right @ np.linalg.solve(left.conj().T @ right, left.conj().T)


def cesaro_projector(channel: np.ndarray, tol: float = EIGENVALUE_ONE_TOL,
                     check_mean: bool = True) -> SteadyProjector:
    """Limit of the Cesàro means of ``channel``, built as the eigenvalue-1 spectral projection.

    Peripheral eigenvalues other than 1 average out, so only the
    eigenvalue-1 eigenspace survives. It is semisimple for channels, which
    makes ``R (L^dag R)^{-1} L^dag`` from right/left kernel bases exact.
    ``check_mean`` compares against the finite mean at ``N = 1024``.
    """
    d = hilbert_dim(channel)
    evals = np.linalg.eigvals(channel)
    dist = np.abs(evals - 1.0)
    scale = tol * max(1.0, float(np.abs(evals).max()))
    count = int(np.sum(dist <= scale))
    if count == 0:
        raise ValueError("channel has no eigenvalue 1; input is not a valid CPTP map")
    outside = dist[dist > scale]
    gap = float(outside.min()) if outside.size else float("inf")
    diagnostics = {"cluster_size": count, "gap": gap}
    if gap <= 10 * scale:
        log.warning("eigenvalue-1 cluster is ambiguous: nearest excluded eigenvalue at distance %.3g, "
                    "cluster tolerance %.3g", gap, scale)
        diagnostics["ambiguous"] = True
    shifted = channel - np.eye(d * d)
    right = null_space(shifted, count=count)
    left = null_space(shifted.conj().T, count=count)
    proj = _projector_from_kernels(right, left)
    if check_mean:
        resid = float(np.linalg.norm(cesaro_mean(channel, CESARO_CHECK_N) - proj))
        diagnostics["cesaro_residual"] = resid
        if resid > 0.05:
            log.warning("finite Cesàro mean at N=%d is %.3g away from the spectral projector "
                        "(slow convergence near eigenvalue 1)", CESARO_CHECK_N, resid)
    return SteadyProjector(proj, d, operator_subspace_from_vectors(np.linalg.qr(right)[0], d),
                           diagnostics)


def default_grid(horizon: float = 10.0, points: int = 16) -> np.ndarray:
    return np.geomspace(horizon / 1000.0, horizon, points)


def _dedup(maps: Sequence[np.ndarray], tol: float = DEDUP_TOL) -> list[np.ndarray]:
    distinct: list[np.ndarray] = []
    for m in maps:
        if all(np.linalg.norm(m - other) > tol * max(1.0, np.linalg.norm(other)) for other in distinct):
            distinct.append(m)
    return distinct


def _product_projector(maps: Sequence[np.ndarray]) -> np.ndarray:
    out = maps[0]
    for m in maps[1:]:
        out = out @ m
    return out


def steady_projector(model: GeneratorModel, sample_times: Sequence[float] | None = None,
                     horizon: float = 10.0, verify_points: int = 64,
                     max_refinements: int = 3, seed: int = 0) -> SteadyProjector:
    """Projector onto the states fixed at every time: the product of the distinct ``P_inf(t)``.

    ``P_inf(Lambda(t))`` is evaluated on ``sample_times`` (default 16
    geometric points on (0, horizon]), duplicates are merged, and the
    product is checked to satisfy ``P_inf(t) P = P`` on a denser grid. A
    failed check refines the sampling grid.
    """
    require_commuting(model)
    basis = damping_basis(model, seed=seed)
    times = default_grid(horizon) if sample_times is None else np.asarray(sample_times, dtype=float)
    if times.size == 0 or np.any(times <= 0):
        raise ValueError("sample times must be non-empty and positive")
    d = model.dimension
    verify_times = default_grid(float(times.max()), verify_points) * (1 + 1 / (3 * verify_points))
    for attempt in range(max_refinements + 1):
        cesaro = [cesaro_projector(ch, check_mean=False).map for ch in propagators(model, times, basis)]
        distinct = _dedup(cesaro)
        proj = _product_projector(distinct)
        scale = max(1.0, np.linalg.norm(proj))
        worst = float(np.linalg.norm(proj @ proj - proj)) / scale
        for ch in propagators(model, verify_times, basis):
            pinf = cesaro_projector(ch, check_mean=False).map
            worst = max(worst, float(np.linalg.norm(pinf @ proj - proj)) / scale,
                        float(np.linalg.norm(proj @ pinf - proj)) / scale)
        if worst <= 1e-9:
            break
        log.warning("steady projector failed verification (residual %.3g); refining grid", worst)
        times = np.union1d(times, verify_times)
        verify_times = np.geomspace(times.min() / 3, times.max() * 1.5, 2 * len(verify_times))
    else:
        raise VerificationError(f"steady projector verification failed (residual {worst:.3g})")
    right = null_space(proj - np.eye(d * d), 1e-9)
    diagnostics = {"n_samples": int(times.size), "n_distinct": len(distinct),
                   "verification_residual": float(worst)}
    return SteadyProjector(proj, d, operator_subspace_from_vectors(np.linalg.qr(right)[0], d),
                           diagnostics)


def reference_state(projector: SteadyProjector, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Steady state of maximal support, ``rho0 = P(I/d)``, and its support projector.

    Maximality is checked against a regularized state built from each
    fixed-space basis element; a failing witness is mixed into ``rho0``.
    """
    d = projector.hilbert_dim
    rho0 = projector(np.eye(d, dtype=complex) / d)
    rho0 = 0.5 * (rho0 + rho0.conj().T)
    for e in projector.fixed_space.basis:
        h = 0.5 * (e + e.conj().T)
        norm = np.linalg.norm(h, 2)
        if norm == 0:
            continue
        sigma = np.eye(d) / d + h / (2 * d * norm)
        sigma = sigma / np.trace(sigma).real
        image = projector(sigma)
        v = support_basis(rho0, tol)
        outside = image - v @ (v.conj().T @ image @ v) @ v.conj().T
        if np.linalg.norm(outside) > 1e-8:
            log.warning("reference state support not maximal; mixing in witness")
            rho0 = 0.5 * rho0 + 0.5 * 0.5 * (image + image.conj().T)
    v = support_basis(rho0, tol)
    return rho0, v @ v.conj().T


@dataclass(frozen=True)
class Block:
    """One summand ``H_1 (x) H_2`` of the support decomposition.

    ``isometry`` maps ``C^{d1} (x) C^{d2}`` into the full Hilbert space.
    """

    d1: int
    d2: int
    isometry: np.ndarray = field(repr=False)
    rho2: np.ndarray = field(repr=False)

    @property
    def projector(self) -> np.ndarray:
        return self.isometry @ self.isometry.conj().T


@dataclass(frozen=True)
class ManifoldStructure:
    blocks: tuple[Block, ...]
    decaying_projector: np.ndarray = field(repr=False)
    reference_state: np.ndarray = field(repr=False)
    support_isometry: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def hilbert_dim(self) -> int:
        return self.reference_state.shape[0]

    @property
    def decaying_dim(self) -> int:
        return int(round(np.trace(self.decaying_projector).real))

    @property
    def block_dims(self) -> list[tuple[int, int]]:
        return [(b.d1, b.d2) for b in self.blocks]

    @property
    def steady_dimension(self) -> int:
        """Dimension of the steady operator space, ``sum d1**2``."""
        return sum(b.d1 ** 2 for b in self.blocks)

    def restricted_projection(self, rho: np.ndarray) -> np.ndarray:
        """Block formula ``sum_a V_a (Tr_2(V_a^dag rho V_a) (x) rho_a2) V_a^dag`` on full-space operators."""
        out = np.zeros_like(self.reference_state)
        for b in self.blocks:
            inner = b.isometry.conj().T @ rho @ b.isometry
            reduced = partial_trace(inner, [b.d1, b.d2], [0])
            out = out + b.isometry @ np.kron(reduced, b.rho2) @ b.isometry.conj().T
        return out


def _restrict(superop: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Superoperator ``X -> W^dag S(W X W^dag) W`` on the subspace spanned by ``w``."""
    embed = np.kron(w.conj(), w)
    compress = np.kron(w.T, w.conj().T)
    return compress @ superop @ embed


def _hermitian_parts(mats: Sequence[np.ndarray]) -> list[np.ndarray]:
    out = []
    for m in mats:
        out.append(0.5 * (m + m.conj().T))
        out.append(-0.5j * (m - m.conj().T))
    return out


def _random_hermitian(mats: Sequence[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    herm = _hermitian_parts(mats)
    return sum(rng.normal() * h for h in herm)


def _eigen_clusters(h: np.ndarray, rel_tol: float = 1e-7) -> list[np.ndarray]:
    w, v = np.linalg.eigh(h)
    spread = max(float(w.max() - w.min()), 1e-300)
    tol = rel_tol * max(spread, float(np.abs(w).max()))
    groups = []
    start = 0
    for i in range(1, len(w) + 1):
        if i == len(w) or w[i] - w[i - 1] > tol:
            groups.append(v[:, start:i])
            start = i
    return groups


def _algebra_center(basis: Sequence[np.ndarray], rng: np.random.Generator, n_generators: int = 4) -> list[np.ndarray]:
    """Elements of the algebra spanned by ``basis`` that commute with random algebra elements."""
    gens = [_random_hermitian(basis, rng) for _ in range(n_generators)]
    cols = []
    for b in basis:
        cols.append(np.concatenate([(b @ g - g @ b).ravel() for g in gens]))
    system = np.array(cols).T
    coeffs = null_space(system, 1e-9)
    return [sum(c * b for c, b in zip(coeffs[:, k], basis)) for k in range(coeffs.shape[1])]


def _decompose_algebra(basis: Sequence[np.ndarray], rng: np.random.Generator) -> list[tuple[int, int, np.ndarray]]:
    """Split a unital †-algebra of ``r x r`` matrices into blocks ``M_{d1} (x) I_{d2}``.

    Returns ``(d1, d2, V)`` with ``V`` an ``r x d1*d2`` isometry whose column
    ``i*d2 + k`` is ``|i> (x) |k>`` in block coordinates.
    """
    r = basis[0].shape[0]
    center = _algebra_center(basis, rng)
    for z in center:
        if max(np.linalg.norm(z @ b - b @ z) for b in basis) > 1e-7 * max(1.0, np.linalg.norm(z)):
            raise VerificationError("center element fails to commute with the algebra")
    central = _random_hermitian(center, rng)
    minimal = _eigen_clusters(central)
    if len(minimal) != len(center):
        raise VerificationError(f"central element separated {len(minimal)} blocks, "
                                f"center has dimension {len(center)}")
    blocks = []
    for u in minimal:
        n = u.shape[1]
        local = [u.conj().T @ b @ u for b in basis]
        local_vecs = np.array([m.ravel() for m in local]).T
        s = np.linalg.svd(local_vecs, compute_uv=False)
        alg_dim = int(np.sum(s > 1e-9 * max(1.0, s[0])))
        x = _random_hermitian(local, rng)
        spaces = _eigen_clusters(x)
        d1 = len(spaces)
        d2 = spaces[0].shape[1]
        if any(sp.shape[1] != d2 for sp in spaces) or d1 * d2 != n or alg_dim != d1 * d1:
            raise VerificationError(f"block of size {n} does not factor as M_{d1} (x) I_{d2} "
                                    f"(algebra dimension {alg_dim})")
        y = sum((rng.normal() + 1j * rng.normal()) * m for m in local)
        first = spaces[0]
        columns = [first]
        for sp in spaces[1:]:
            mapped = sp @ (sp.conj().T @ y @ first)
            gram = mapped.conj().T @ mapped
            size = np.sqrt(np.trace(gram).real / d2)
            if size < 1e-6:
                raise VerificationError("degenerate matrix-unit element")
            columns.append(mapped / size)
        local_iso = np.stack(columns, axis=1).reshape(n, d1 * d2)
        blocks.append((d1, d2, u @ local_iso))
    return blocks


def structure_decomposition(projector: SteadyProjector, seed: int = 0, n_checks: int = 20,
                            max_attempts: int = 5) -> ManifoldStructure:
    """Decompose the steady support into blocks ``H_a1 (x) H_a2`` plus the decaying subspace.

    The fixed points of the dual of the projector restricted to the support
    form a †-algebra; its minimal central projections give the blocks and
    a random Hermitian element of each block splits off the tensor factors.
    The result must reproduce the restricted projector on random states.
    """
    d = projector.hilbert_dim
    rho0, support = reference_state(projector)
    w = support_basis(rho0)
    r = w.shape[1]
    rng = np.random.default_rng(seed)

    for _ in range(n_checks):
        rho = w @ random_density(r, rng) @ w.conj().T
        kept = np.trace(support @ projector(rho)).real
        if kept < 1 - 1e-8:
            raise VerificationError(f"support of the reference state is not invariant ({kept:.3g})")

    restricted = _restrict(projector.map, w)
    dual = dual_map(restricted)
    unitality = float(np.linalg.norm(apply(dual, np.eye(r)) - np.eye(r)))
    if unitality > 1e-9:
        raise VerificationError(f"restricted dual map is not unital (error {unitality:.3g})")
    algebra = fixed_point_space(dual).basis

    rho0_local = w.conj().T @ rho0 @ w
    last_error: Exception | None = None
    for attempt in range(max_attempts):
        try:
            parts = _decompose_algebra(list(algebra), rng)
        except VerificationError as exc:
            last_error = exc
            continue
        blocks = []
        for d1, d2, v_local in parts:
            compressed = v_local.conj().T @ rho0_local @ v_local
            rho2 = partial_trace(compressed, [d1, d2], [1])
            rho2 = rho2 / np.trace(rho2).real
            rho2 = 0.5 * (rho2 + rho2.conj().T)
            blocks.append(Block(d1, d2, w @ v_local, rho2))
        structure = ManifoldStructure(tuple(blocks), np.eye(d) - support, rho0, w)
        residual = 0.0
        for _ in range(n_checks):
            rho = w @ random_density(r, rng) @ w.conj().T
            residual = max(residual, float(np.linalg.norm(projector(rho) - structure.restricted_projection(rho))))
        if residual <= RECONSTRUCTION_TOL:
            return ManifoldStructure(tuple(blocks), np.eye(d) - support, rho0, w,
                                     {"reconstruction_residual": float(residual), "attempts": attempt + 1,
                                      "dual_unitality_error": unitality})
        last_error = VerificationError(f"block reconstruction residual {residual:.3g} exceeds "
                                       f"{RECONSTRUCTION_TOL}")
    raise VerificationError(f"structure decomposition failed after {max_attempts} attempts: {last_error}")


def assemble_steady_state(structure: ManifoldStructure, weights: Sequence[float],
                          factors: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_a p_a V_a (rho_a1 (x) rho_a2) V_a^dag``."""
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(structure.blocks) or len(factors) != len(structure.blocks):
        raise ValueError(f"expected {len(structure.blocks)} weights and factors, "
                         f"got {len(weights)} and {len(factors)}")
    if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
        raise ValueError(f"weights must be non-negative and sum to 1, got {weights.tolist()}")
    d = structure.hilbert_dim
    out = np.zeros((d, d), dtype=complex)
    for p, rho1, b in zip(weights, factors, structure.blocks):
        rho1 = np.asarray(rho1, dtype=complex)
        if rho1.shape != (b.d1, b.d1):
            raise ValueError(f"factor of shape {rho1.shape} does not match block dimension {b.d1}")
        require_density_operator(rho1, name="block factor")
        out += p * b.isometry @ np.kron(rho1, b.rho2) @ b.isometry.conj().T
    return out


def project_to_manifold(projector: SteadyProjector, rho: np.ndarray) -> np.ndarray:
    """Image of a state under the steady projector."""
    rho = require_density_operator(rho)
    out = projector(rho)
    return 0.5 * (out + out.conj().T)


def structure_to_dict(structure: ManifoldStructure) -> dict:
    return {
        "blocks": [{"d1": b.d1, "d2": b.d2, "isometry": matrix_to_json(b.isometry),
                    "rho2": matrix_to_json(b.rho2)} for b in structure.blocks],
        "decaying_dim": structure.decaying_dim,
        "reference_state": matrix_to_json(structure.reference_state),
    }
