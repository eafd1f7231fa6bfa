"""Dense symmetric eigensolvers and Lanczos iteration.

Everything operates on float64. The two entry points are ``jacobi_eigh``
(full spectrum of a small dense symmetric matrix, used both directly on Gram
matrices and as the oracle in tests) and ``lanczos_topk`` (top-k eigenpairs
of a symmetric operator given only matrix-vector products, used for Hessian
spectra).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidKError,
    NoConvergenceError,
    NonFiniteError,
)
from .rng import make_rng

JACOBI_MAX_SWEEPS = 100
JACOBI_OFFDIAG_TOL = 1e-12
LANCZOS_BREAKDOWN_TOL = 1e-13


@dataclass(frozen=True)
class DenseSymmetric:
    """Row-major dense symmetric matrix, symmetrized at construction."""

    entries: np.ndarray

    @classmethod
    def from_array(cls, a: np.ndarray) -> "DenseSymmetric":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DimensionMismatchError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("matrix has NaN or Inf entries")
        sym = (a + a.T) / 2.0
        return cls(entries=sym)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class LinearOperator:
    """Symmetric operator given by its dimension and a matvec closure.

    Callers are responsible for the symmetry contract
    <u, apply(v)> == <apply(u), v>; tests check it probabilistically.
    """

    dim: int
    apply: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    @classmethod
    def from_dense(cls, a: DenseSymmetric) -> "LinearOperator":
        entries = a.entries
        return cls(dim=a.dim, apply=lambda v: entries @ v)


@dataclass(frozen=True)
class EigenPairs:
    """Eigenvalues sorted descending with orthonormal eigenvectors as columns.

    Sign convention: in each eigenvector the component of largest absolute
    value is positive (ties broken by lowest index), which makes vectors
    unique up to eigenvalue degeneracy.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # shape (dim, k), column i pairs with eigenvalues[i]


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    # np.argmax picks the first occurrence of the max, i.e. the lowest index on ties
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _sorted_pairs(values: np.ndarray, vectors: np.ndarray) -> EigenPairs:
    order = np.argsort(-values, kind="stable")
    return EigenPairs(
        eigenvalues=np.ascontiguousarray(values[order]),
        eigenvectors=_canonical_signs(np.ascontiguousarray(vectors[:, order])),
    )


def _round_robin_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule covering every index pair exactly once per sweep
    in rounds of mutually disjoint pairs (odd n gets a bye slot)."""
    m = n if n % 2 == 0 else n + 1
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a: DenseSymmetric) -> EigenPairs:
    """Full eigendecomposition by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair exactly once, in the
    round-robin ordering whose rounds consist of mutually disjoint pairs;
    rotations in a round commute, so the whole round is applied as one
    batched two-sided Givens update and each one zeroes its targeted entry
    exactly. Sweeps continue until the off-diagonal Frobenius norm drops
    below ``1e-12 * ||A||_F`` (or 100 sweeps, raising NoConvergenceError).
    """
    A = a.entries.copy()
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return EigenPairs(eigenvalues=A[0].copy(), eigenvectors=V)

    fro = np.linalg.norm(A)
    tol = JACOBI_OFFDIAG_TOL * fro
    skip = tol / n  # entries this small cannot push the off-norm back above tol
    rounds = _round_robin_rounds(n)
    converged = False
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol:
            converged = True
            break
        for ps, qs in rounds:
            apq = A[ps, qs]
            active = np.abs(apq) > skip
            if not np.any(active):
                continue
            p = ps[active]
            q = qs[active]
            apq = apq[active]
            tau = (A[q, q] - A[p, p]) / (2.0 * apq)
            t = np.sign(tau)
            t[t == 0] = 1.0
            t /= np.abs(tau) + np.sqrt(1.0 + tau * tau)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            rp = A[p, :]
            rq = A[q, :]
            A[p, :] = c[:, None] * rp - s[:, None] * rq
            A[q, :] = s[:, None] * rp + c[:, None] * rq
            cp = A[:, p]
            cq = A[:, q]
            A[:, p] = c * cp - s * cq
            A[:, q] = s * cp + c * cq
            A[p, q] = 0.0
            A[q, p] = 0.0

            vp = V[:, p]
            vq = V[:, q]
            V[:, p] = c * vp - s * vq
            V[:, q] = s * vp + c * vq

    if not converged:
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off > tol:
            raise NoConvergenceError(
                f"Jacobi sweep cap hit with off-diagonal norm {off:.3e} > {tol:.3e}"
            )
    return _sorted_pairs(np.diag(A).copy(), V)


def _fresh_start_vector(rng: np.random.Generator, basis: np.ndarray, j: int) -> np.ndarray:
    """Random unit vector orthogonal to the first ``j`` columns of ``basis``."""
    n = basis.shape[0]
    for _ in range(64):
        v = rng.standard_normal(n)
        if j > 0:
            v -= basis[:, :j] @ (basis[:, :j].T @ v)
            v -= basis[:, :j] @ (basis[:, :j].T @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-10:
            return v / norm
    raise NoConvergenceError("could not draw a start vector outside the Krylov span")


def lanczos_topk(op: LinearOperator, k: int, max_iters: int, seed: int) -> EigenPairs:
    """Top-k algebraically largest eigenpairs via Lanczos with full
    reorthogonalization.

    Builds a Krylov tridiagonal from a seeded random start vector,
    reorthogonalizing each residual against all previous Lanczos vectors
    (twice, which suffices in float64). On breakdown (residual norm below
    1e-13) the iteration restarts with a fresh random vector orthogonal to
    the converged subspace, leaving a zero coupling in the tridiagonal; if
    the space is exhausted the spectrum found so far is exact. The
    tridiagonal is diagonalized with ``jacobi_eigh`` and Ritz vectors are
    mapped back to the ambient space.
    """
    n = op.dim
    if k < 1 or k > n or k > max_iters:
        raise InvalidKError(f"k={k} must satisfy 1 <= k <= min(dim={n}, max_iters={max_iters})")
    m = min(max_iters, n)

    rng = make_rng(seed)
    Q = np.zeros((n, m))
    alphas = np.zeros(m)
    betas = np.zeros(max(m - 1, 0))

    q = _fresh_start_vector(rng, Q, 0)
    j = 0
    while j < m:
        Q[:, j] = q
        u = np.asarray(op.apply(q), dtype=np.float64)
        if u.shape != (n,):
            raise DimensionMismatchError(f"operator returned shape {u.shape}, expected ({n},)")
        if not np.all(np.isfinite(u)):
            raise NonFiniteError("operator produced NaN or Inf")
        alphas[j] = q @ u
        r = u - alphas[j] * q
        if j > 0:
            r -= betas[j - 1] * Q[:, j - 1]
        r -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ r)
        r -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ r)
        beta = float(np.linalg.norm(r))
        j += 1
        if j == m:
            break
        if beta < LANCZOS_BREAKDOWN_TOL:
            betas[j - 1] = 0.0
            q = _fresh_start_vector(rng, Q, j)
        else:
            betas[j - 1] = beta
            q = r / beta

    T = np.diag(alphas[:j])
    if j > 1:
        T += np.diag(betas[: j - 1], 1) + np.diag(betas[: j - 1], -1)
    ritz = jacobi_eigh(DenseSymmetric.from_array(T))
    if k > j:  # pragma: no cover - guarded by k <= min(dim, max_iters)
        raise InvalidKError(f"only {j} Ritz pairs available, requested {k}")

    values = ritz.eigenvalues[:k]
    vectors = Q[:, :j] @ ritz.eigenvectors[:, :k]
    vectors /= np.linalg.norm(vectors, axis=0, keepdims=True)
    return EigenPairs(eigenvalues=values.copy(), eigenvectors=_canonical_signs(vectors))


def project_onto_subspace(v: np.ndarray, basis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal projection of ``v`` onto the span of the basis columns.

    Returns ``(projection, residual)`` with ``projection + residual == v``.
    The basis columns must be mutually orthonormal (within 1e-8); this is a
    caller contract, not re-checked here.
    """
    v = np.asarray(v, dtype=np.float64)
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim == 1:
        basis = basis[:, None]
    if basis.ndim != 2 or v.ndim != 1 or basis.shape[0] != v.shape[0]:
        raise DimensionMismatchError(
            f"vector of dim {v.shape} does not match basis of shape {basis.shape}"
        )
    projection = basis @ (basis.T @ v)
    return projection, v - projection
