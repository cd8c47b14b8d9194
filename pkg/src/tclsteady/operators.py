"""Linear algebra on Hilbert space and Liouville (operator) space.

Superoperators are plain ``(d**2, d**2)`` complex arrays acting on
column-stacked operators, so that ``vec(A @ X @ B) == kron(B.T, A) @ vec(X)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-10
RANK_TOL = 1e-9

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# |1> is the excited / occupied level, so sigma_minus |1> = |0>.
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()


def hilbert_dim(superop: np.ndarray) -> int:
    """Return ``d`` for a ``(d**2, d**2)`` superoperator."""
    n = superop.shape[0]
    d = int(round(np.sqrt(n)))
    if superop.ndim != 2 or superop.shape[1] != n or d * d != n:
        raise ValueError(f"not a superoperator matrix: shape {superop.shape}")
    return d


def vectorize(x: np.ndarray) -> np.ndarray:
    """Column-stack a square matrix into a vector of length ``d**2``."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {x.shape}")
    return x.reshape(-1, order="F")


def devectorize(v: np.ndarray, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    if d is None:
        d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ValueError(f"vector of length {v.size} is not a vectorized {d}x{d} matrix")
    return v.reshape((d, d), order="F")


def kron(*factors: np.ndarray) -> np.ndarray:
    """Kronecker product of one or more matrices, left to right."""
    if not factors:
        raise ValueError("kron needs at least one factor")
    out = np.asarray(factors[0])
    for f in factors[1:]:
        out = np.kron(out, f)
    return out


def sandwich(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> a @ X @ b``."""
    return np.kron(np.asarray(b).T, a)


def apply(superop: np.ndarray, x: np.ndarray) -> np.ndarray:
    d = hilbert_dim(superop)
    x = np.asarray(x)
    if x.shape != (d, d):
        raise ValueError(f"operator shape {x.shape} does not match superoperator on d={d}")
    return devectorize(superop @ vectorize(x), d)


def identity_superop(d: int) -> np.ndarray:
    return np.eye(d * d, dtype=complex)


def partial_trace(x: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out every tensor factor of ``x`` not listed in ``keep``.

    ``dims`` gives the factor dimensions; factors in ``keep`` are retained in
    their original order. An empty ``keep`` yields the ``1x1`` full trace.
    """
    x = np.asarray(x)
    dims = [int(k) for k in dims]
    n = int(np.prod(dims)) if dims else 1
    if x.shape != (n, n):
        raise ValueError(f"dims {dims} (product {n}) do not match matrix shape {x.shape}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {len(dims)} factors")
    nf = len(dims)
    t = x.reshape(dims + dims)
    # Trace from the last factor backwards so the remaining axis indices stay valid.
    for k in reversed(range(nf)):
        if k in keep:
            continue
        nleft = t.ndim // 2
        t = np.trace(t, axis1=k, axis2=k + nleft)
    m = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(m, m)


def hs_inner(x: np.ndarray, y: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product ``Tr(x^dagger y)``."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return complex(np.vdot(x, y))


def dual_map(superop: np.ndarray) -> np.ndarray:
    """Adjoint with respect to the Hilbert-Schmidt inner product.

    With column stacking the HS product is the Euclidean product of the
    vectorized operators, so the dual is the conjugate transpose.
    """
    hilbert_dim(superop)
    return superop.conj().T


def choi_matrix(superop: np.ndarray) -> np.ndarray:
    """Choi matrix ``sum_ij |i><j| (x) S(|i><j|)`` (input factor first)."""
    d = hilbert_dim(superop)
    # superop[(b, a), (j, i)] holds S(|i><j|)[a, b] in column-stacked indices.
    s4 = superop.reshape(d, d, d, d)
    return s4.transpose(3, 1, 2, 0).reshape(d * d, d * d)


@dataclass(frozen=True)
class CPTPReport:
    is_cptp: bool
    min_choi_eigenvalue: float
    trace_preservation_error: float
    hermiticity_error: float
    tol: float

    def __bool__(self) -> bool:
        return self.is_cptp


def is_cptp(superop: np.ndarray, tol: float = 1e-8) -> CPTPReport:
    """Certify complete positivity and trace preservation via the Choi matrix."""
    d = hilbert_dim(superop)
    choi = choi_matrix(superop)
    herm_err = float(np.linalg.norm(choi - choi.conj().T))
    min_eig = float(np.linalg.eigvalsh(0.5 * (choi + choi.conj().T)).min())
    tp_err = float(np.linalg.norm(partial_trace(choi, [d, d], [0]) - np.eye(d)))
    ok = min_eig >= -tol and tp_err <= tol and herm_err <= max(tol, 1e-10 * np.linalg.norm(choi))
    return CPTPReport(ok, min_eig, tp_err, herm_err, tol)


def is_hermitian(x: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    x = np.asarray(x)
    return bool(np.linalg.norm(x - x.conj().T) <= tol * max(1.0, np.linalg.norm(x)))


def density_violations(rho: np.ndarray, tol: float = HERMITIAN_TOL) -> list[str]:
    """List the density-operator conditions that ``rho`` violates (empty if valid)."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return [f"not a square matrix: shape {rho.shape}"]
    problems = []
    if not is_hermitian(rho, tol):
        problems.append("not Hermitian")
    tr = np.trace(rho)
    if abs(tr - 1) > tol:
        problems.append(f"trace {tr.real:.3g}{tr.imag:+.3g}j differs from 1")
    min_eig = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if min_eig < -tol:
        problems.append(f"negative eigenvalue {min_eig:.3g}")
    return problems


def is_density_operator(rho: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return not density_violations(rho, tol)


def require_density_operator(rho: np.ndarray, tol: float = HERMITIAN_TOL, name: str = "state") -> np.ndarray:
    problems = density_violations(rho, tol)
    if problems:
        raise ValueError(f"{name} is not a valid density operator: {'; '.join(problems)}")
    return np.asarray(rho, dtype=complex)


def support_basis(rho: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal columns spanning the eigenvectors of ``rho`` with eigenvalue > tol."""
    rho = np.asarray(rho)
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    return v[:, w > tol]


def support_projector(rho: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Smallest orthogonal projector ``P`` with ``Tr(rho P) = 1`` (up to ``tol``)."""
    v = support_basis(rho, tol)
    return v @ v.conj().T


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    diff = np.asarray(rho) - np.asarray(sigma)
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(diff)).sum())


def basis_state(d: int, k: int) -> np.ndarray:
    rho = np.zeros((d, d), dtype=complex)
    rho[k, k] = 1.0
    return rho


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density operator from a Ginibre matrix (Hilbert-Schmidt measure at full rank)."""
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


@dataclass(frozen=True)
class OperatorSubspace:
    """Subspace of operators with an HS-orthonormal basis, stored as ``(k, d, d)``."""

    basis: np.ndarray

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    @property
    def hilbert_dim(self) -> int:
        return self.basis.shape[1]

    def vectors(self) -> np.ndarray:
        """Basis as the columns of a ``(d**2, k)`` matrix of vectorized operators."""
        return np.stack([vectorize(b) for b in self.basis], axis=1) if self.dimension else \
            np.zeros((self.hilbert_dim ** 2, 0), dtype=complex)

    def projector(self) -> np.ndarray:
        """Orthogonal (HS) projection superoperator onto the subspace."""
        v = self.vectors()
        return v @ v.conj().T

    def contains(self, x: np.ndarray, tol: float = 1e-8) -> bool:
        v = vectorize(np.asarray(x, dtype=complex))
        resid = v - self.projector() @ v
        return bool(np.linalg.norm(resid) <= tol * max(1.0, np.linalg.norm(v)))


def null_space(m: np.ndarray, tol: float = RANK_TOL, count: int | None = None) -> np.ndarray:
    """Orthonormal basis (columns) of the numerical kernel of ``m``.

    Singular values below ``tol * max(1, largest)`` count as zero unless
    ``count`` fixes the kernel dimension explicitly.
    """
    _, s, vh = np.linalg.svd(m)
    n = m.shape[1]
    if count is None:
        scale = max(1.0, s[0]) if s.size else 1.0
        rank = int(np.sum(s > tol * scale))
        count = n - rank
    return vh[n - count:].conj().T


def operator_subspace_from_vectors(vecs: np.ndarray, d: int) -> OperatorSubspace:
    basis = np.array([devectorize(vecs[:, k], d) for k in range(vecs.shape[1])],
                     dtype=complex).reshape(vecs.shape[1], d, d)
    return OperatorSubspace(basis)
