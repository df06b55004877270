"""Dense brute-force references used by tests and the CLI --check path.

Nothing here is a production path: Kronecker systems, the explicit
derivative double sum, M-matrix classification via dense eigenvalues, and
plain functional iteration exist to cross-check the fast routes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotConvergedWarning, SingularSystem, SizeGuard
from .model import poly_eval

VEC_SIZE_LIMIT = 4096

NONSINGULAR_M = "nonsingular-M"
SINGULAR_M = "singular-M"
NOT_Z_MATRIX = "not-Z"
NOT_M_MATRIX = "not-M"

_Z_OFFDIAG_TOL = 1e-14
_SPECTRAL_TOL = 1e-10


@dataclass
class KronSystem:
    """Dense vectorization sum_j (C^j)^T kron B_j with column-stacked rhs."""

    matrix: np.ndarray  # (q p, q p)
    rhs: np.ndarray  # (q p,)
    shape: tuple[int, int]  # (q, p)


def kron_system(B, C, E) -> KronSystem:
    """Assemble the Kronecker form of sum_j B_j X C^j = E.

    Column-stacking is the package-wide vectorization convention:
    vec(B X C) = (C^T kron B) vec(X).
    """
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    E = np.asarray(E, dtype=float)
    d, q = B.shape[0], B.shape[1]
    p = C.shape[0]
    if E.shape != (q, p):
        raise DimensionMismatch(f"E must be {q}x{p}, got {E.shape}")
    if q * p > VEC_SIZE_LIMIT:
        raise SizeGuard(f"vectorized dimension {q * p} exceeds {VEC_SIZE_LIMIT}")
    M = np.zeros((q * p, q * p))
    Cj = np.eye(p)
    for j in range(d):
        M += np.kron(Cj.T, B[j])
        Cj = Cj @ C
    return KronSystem(matrix=M, rhs=E.flatten("F"), shape=(q, p))


def kron_solve(B, C, E) -> np.ndarray:
    """Reference solve of sum_j B_j X C^j = E via one dense linear system."""
    system = kron_system(B, C, E)
    try:
        x = np.linalg.solve(system.matrix, system.rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    q, p = system.shape
    return x.reshape((q, p), order="F")


def frechet_apply(model, X, Z) -> np.ndarray:
    """Directional derivative of the residual map at X applied to Z.

    Evaluates sum_v sum_{j<v} A_v X^j Z X^{v-1-j} - Z by the explicit double
    sum (no Horner shortcut) so it can serve as an independent derivative
    reference.
    """
    m = model.m
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.shape != (m, m) or Z.shape != (m, m):
        raise DimensionMismatch(f"X and Z must be {m}x{m}")
    powers = [np.eye(m)]
    for _ in range(max(model.N - 1, 0)):
        powers.append(powers[-1] @ X)
    out = -Z.copy()
    for v in range(1, model.N + 1):
        Av = model.A[v]
        for j in range(v):
            out += Av @ powers[j] @ Z @ powers[v - 1 - j]
    return out


def jacobian_kron(model, X) -> np.ndarray:
    """Vectorized negative Jacobian I - sum_v sum_{j<v} (X^{v-1-j})^T kron A_v X^j.

    Satisfies jacobian_kron(model, X) @ vec(Z) == -vec(frechet_apply(model, X, Z))
    in column-stacking order.
    """
    m = model.m
    if m * m > VEC_SIZE_LIMIT:
        raise SizeGuard(f"vectorized dimension {m * m} exceeds {VEC_SIZE_LIMIT}")
    X = np.asarray(X, dtype=float)
    if X.shape != (m, m):
        raise DimensionMismatch(f"X must be {m}x{m}, got {X.shape}")
    powers = [np.eye(m)]
    for _ in range(max(model.N - 1, 0)):
        powers.append(powers[-1] @ X)
    out = np.eye(m * m)
    for v in range(1, model.N + 1):
        Av = model.A[v]
        for j in range(v):
            out -= np.kron(powers[v - 1 - j].T, Av @ powers[j])
    return out


def m_matrix_check(A) -> str:
    """Classify a square matrix as nonsingular/singular M-matrix, non-Z, or non-M.

    Checks the off-diagonal signs first (Z property), then writes A = sI - B
    with s the largest diagonal entry and compares the spectral radius of
    B >= 0 against s. Dense eigenvalues are used on purpose: power iteration
    cannot resolve the singular boundary. Intended for m <= 64.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {A.shape}")
    off = A - np.diag(np.diag(A))
    if off.size and off.max(initial=0.0) > _Z_OFFDIAG_TOL:
        return NOT_Z_MATRIX
    s = float(np.diag(A).max())
    B = s * np.eye(A.shape[0]) - A
    radius = float(np.abs(np.linalg.eigvals(B)).max()) if A.size else 0.0
    if radius < s - _SPECTRAL_TOL:
        return NONSINGULAR_M
    if radius <= s + _SPECTRAL_TOL:
        return SINGULAR_M
    return NOT_M_MATRIX


def functional_oracle(model, iters: int = 1_000_000, tol: float = 1e-12) -> np.ndarray:
    """Fixed-point iteration G <- sum_v A_v G^v from zero.

    Monotonically increasing and slow, which is exactly what makes it a
    trustworthy reference for the minimal solution. Warns (and still returns
    the last iterate) if the step size never drops below tol.
    """
    G = np.zeros((model.m, model.m))
    for _ in range(iters):
        P = poly_eval(model, G)
        delta = float(np.linalg.norm(P - G, np.inf))
        G = P
        if delta <= tol:
            return G
    warnings.warn(
        f"functional iteration did not contract below {tol:g} in {iters} steps",
        NotConvergedWarning,
        stacklevel=2,
    )
    return G
