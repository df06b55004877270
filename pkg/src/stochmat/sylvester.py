"""Structured linear solver for B_0 X + B_1 X C + ... + B_{d-1} X C^{d-1} = E.

The right multiplier C is Schur-triangularized once (C = Q T Q*), after which
the unknown Y = X Q satisfies sum_j B_j Y T^j = E Q and its columns decouple
into q x q systems M_c = sum_j (T_cc)^j B_j that can be LU-factored up front.
The resulting factorization object is immutable and cheap to reuse: every
subsequent solve costs only triangular substitutions and rank-one updates,
which is what makes freezing the operator across several correction steps
worthwhile.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import get_lapack_funcs

from .errors import (
    DimensionMismatch,
    ImaginaryLeakage,
    SchurFailure,
    SingularColumnSystem,
)

COND_LIMIT = 1e14
SCHUR_RESIDUAL_TOL = 1e-12
IMAG_LEAK_TOL = 1e-8


def _inf_norm(M) -> float:
    return float(np.linalg.norm(M, np.inf)) if M.size else 0.0


@dataclass
class StructuredOperator:
    """Coefficients of the equation sum_j B_j X C^j = E.

    ``B`` stacks d square q x q matrices; ``C`` is the p x p right
    multiplier. The unknown X is q x p.
    """

    B: np.ndarray  # (d, q, q)
    C: np.ndarray  # (p, p)

    def __post_init__(self):
        self.B = np.array(self.B, dtype=float)
        self.C = np.array(self.C, dtype=float)
        if self.B.ndim != 3 or self.B.shape[1] != self.B.shape[2]:
            raise DimensionMismatch(f"B must stack square matrices, got {self.B.shape}")
        if self.B.shape[0] < 1:
            raise DimensionMismatch("need at least one coefficient matrix B_0")
        if self.C.ndim != 2 or self.C.shape[0] != self.C.shape[1]:
            raise DimensionMismatch(f"C must be square, got {self.C.shape}")

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class StructuredFactorization:
    """Reusable Schur-based factorization of a StructuredOperator.

    Holds the complex Schur form of C, the triangular powers T^0..T^{d-1},
    and one LU factorization per column system M_c together with its
    condition estimate. Immutable after construction; concurrent solves
    against one instance are safe.
    """

    operator: StructuredOperator
    schur_q: np.ndarray  # p x p unitary
    schur_t: np.ndarray  # p x p upper triangular
    t_powers: np.ndarray  # (d, p, p)
    column_lu: tuple  # p entries of (lu, piv)
    cond_estimates: np.ndarray  # (p,)

    @property
    def dims(self) -> tuple[int, int, int]:
        op = self.operator
        return (op.q, op.p, op.d)


def factorize(op: StructuredOperator) -> StructuredFactorization:
    """Schur-triangularize C and LU-factor the p column systems.

    Cost is one Schur decomposition of the p x p matrix C plus p
    factorizations of q x q systems; everything a later solve needs is
    materialized here. Raises SchurFailure if the eigen-iteration fails or
    the reconstruction Q T Q* drifts from C, and SingularColumnSystem when
    any column system has a condition estimate above 1e14.
    """
    C = op.C
    p, q, d = op.p, op.q, op.d
    try:
        T, Q = sla.schur(C.astype(complex), output="complex")
    except (sla.LinAlgError, ValueError) as exc:
        raise SchurFailure(f"Schur decomposition of C failed: {exc}") from exc
    recon = _inf_norm(Q @ T @ Q.conj().T - C)
    if recon > SCHUR_RESIDUAL_TOL * (1.0 + _inf_norm(C)):
        raise SchurFailure(f"Schur reconstruction residual {recon:.3e} too large")

    t_powers = np.empty((d, p, p), dtype=complex)
    t_powers[0] = np.eye(p)
    for j in range(1, d):
        t_powers[j] = t_powers[j - 1] @ T

    # M_c = sum_j (T_cc)^j B_j for every column at once
    diag_pows = np.diag(T)[:, None] ** np.arange(d)[None, :]  # (p, d)
    M = np.einsum("cj,jab->cab", diag_pows, op.B.astype(complex))

    gecon = get_lapack_funcs("gecon", (M[0],)) if p else None
    column_lu = []
    cond = np.empty(p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        for c in range(p):
            anorm = float(np.linalg.norm(M[c], 1))
            lu, piv = sla.lu_factor(M[c])
            rcond, info = gecon(lu, anorm)
            if info != 0:
                raise SchurFailure(f"condition estimate failed for column {c}")
            cond[c] = 1.0 / rcond if rcond > 0 else np.inf
            if cond[c] > COND_LIMIT:
                raise SingularColumnSystem(c, cond[c])
            column_lu.append((lu, piv))

    for arr in (Q, T, t_powers):
        arr.setflags(write=False)
    cond.setflags(write=False)
    return StructuredFactorization(
        operator=op,
        schur_q=Q,
        schur_t=T,
        t_powers=t_powers,
        column_lu=tuple(column_lu),
        cond_estimates=cond,
    )


def solve(f: StructuredFactorization, E) -> np.ndarray:
    """Solve sum_j B_j X C^j = E using a prepared factorization.

    Transforms F = E Q, sweeps columns left to right (each column seen by a
    cached LU solve followed by a rank-one update of the remaining right-hand
    sides), then maps back with X = Re(Y Q*). Raises ImaginaryLeakage if the
    imaginary part of Y Q* is not negligible.
    """
    op = f.operator
    q, p, d = f.dims
    E = np.asarray(E, dtype=float)
    if E.shape != (q, p):
        raise DimensionMismatch(f"E must be {q}x{p}, got {E.shape}")
    B = op.B
    R = E @ f.schur_q  # complex right-hand sides in Schur coordinates
    Y = np.empty((q, p), dtype=complex)
    for c in range(p):
        Y[:, c] = sla.lu_solve(f.column_lu[c], R[:, c])
        if c + 1 < p:
            for j in range(1, d):
                w = B[j] @ Y[:, c]
                R[:, c + 1:] -= np.outer(w, f.t_powers[j][c, c + 1:])
    Xc = Y @ f.schur_q.conj().T
    leak = float(np.abs(Xc.imag).max()) if Xc.size else 0.0
    if leak > IMAG_LEAK_TOL * (1.0 + _inf_norm(Y)):
        raise ImaginaryLeakage(f"imaginary part {leak:.3e} of the solution is too large")
    return np.ascontiguousarray(Xc.real)


def apply_operator(op: StructuredOperator, X) -> np.ndarray:
    """Evaluate sum_j B_j X C^j by right-Horner: acc <- B_j X + acc C."""
    X = np.asarray(X, dtype=float)
    if X.shape != (op.q, op.p):
        raise DimensionMismatch(f"X must be {op.q}x{op.p}, got {X.shape}")
    acc = op.B[-1] @ X
    for j in range(op.d - 2, -1, -1):
        acc = op.B[j] @ X + acc @ op.C
    return acc
