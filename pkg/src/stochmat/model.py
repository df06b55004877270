"""Block data for M/G/1- and GI/M/1-type Markov chains.

Defines the model containers (full and low-rank factored), entry/row-sum
validation, the matrix-polynomial residual map, and the drift classification
built on a subtraction-free stationary-vector solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ReducibleChain

POSITIVE_RECURRENT = "positive-recurrent"
NULL_RECURRENT = "null-recurrent"
TRANSIENT = "transient"

ROW_SUM_TOL_STRICT = 1e-12
ROW_SUM_TOL_PERMISSIVE = 1e-6
NULL_RECURRENT_WINDOW = 1e-10

_GTH_PIVOT_FLOOR = 1e-300


def _block_stack(A, name):
    arr = np.array(A, dtype=float)
    if arr.ndim != 3:
        raise DimensionMismatch(f"{name} must be a sequence of square matrices")
    if arr.shape[1] != arr.shape[2]:
        raise DimensionMismatch(f"{name} blocks must be square, got {arr.shape[1]}x{arr.shape[2]}")
    return arr


def _matrix(M, rows, cols, name):
    arr = np.array(M, dtype=float)
    if arr.shape != (rows, cols):
        raise DimensionMismatch(f"{name} must be {rows}x{cols}, got {arr.shape}")
    return arr


@dataclass
class MG1Model:
    """Blocks A_0..A_N of the fixed-point equation G = sum_i A_i G^i.

    ``A`` stacks the blocks as an (N+1, m, m) array: A[0] is the one-down
    block, A[i] moves i-1 levels up.
    """

    A: np.ndarray

    def __post_init__(self):
        self.A = _block_stack(self.A, "A")

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def N(self) -> int:
        return self.A.shape[0] - 1


@dataclass
class GIM1Model:
    """Blocks of the R-equation R = sum_i R^i A_i; same layout as MG1Model."""

    A: np.ndarray

    def __post_init__(self):
        self.A = _block_stack(self.A, "A")

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def N(self) -> int:
        return self.A.shape[0] - 1


@dataclass
class LowRankDownModel:
    """M/G/1 model whose down block factors as A_0 = A0_hat @ gamma (rank r).

    ``A_rest`` stacks A_1..A_N as an (N, m, m) array, so A_rest[i] is block
    A_{i+1}.
    """

    A0_hat: np.ndarray  # m x r
    gamma: np.ndarray  # r x m
    A_rest: np.ndarray  # (N, m, m)

    def __post_init__(self):
        self.A_rest = _block_stack(self.A_rest, "A_rest")
        m = self.A_rest.shape[1]
        self.A0_hat = np.array(self.A0_hat, dtype=float)
        if self.A0_hat.ndim != 2 or self.A0_hat.shape[0] != m:
            raise DimensionMismatch(f"A0_hat must have {m} rows, got {self.A0_hat.shape}")
        r = self.A0_hat.shape[1]
        self.gamma = _matrix(self.gamma, r, m, "gamma")

    @property
    def m(self) -> int:
        return self.A_rest.shape[1]

    @property
    def N(self) -> int:
        return self.A_rest.shape[0]

    @property
    def r(self) -> int:
        return self.A0_hat.shape[1]

    def to_full(self) -> MG1Model:
        A0 = self.A0_hat @ self.gamma
        return MG1Model(np.concatenate([A0[None], self.A_rest]))


@dataclass
class LowRankUpModel:
    """M/G/1 model whose local/up blocks factor as A_i = gamma @ A_hat[i-1].

    ``A_hat`` stacks the r x m factors of A_1..A_N as an (N, r, m) array;
    the down block A_0 stays full.
    """

    A0: np.ndarray  # m x m
    gamma: np.ndarray  # m x r
    A_hat: np.ndarray  # (N, r, m)

    def __post_init__(self):
        self.A0 = np.array(self.A0, dtype=float)
        if self.A0.ndim != 2 or self.A0.shape[0] != self.A0.shape[1]:
            raise DimensionMismatch(f"A0 must be square, got {self.A0.shape}")
        m = self.A0.shape[0]
        self.gamma = np.array(self.gamma, dtype=float)
        if self.gamma.ndim != 2 or self.gamma.shape[0] != m:
            raise DimensionMismatch(f"gamma must have {m} rows, got {self.gamma.shape}")
        r = self.gamma.shape[1]
        self.A_hat = np.array(self.A_hat, dtype=float)
        if self.A_hat.ndim != 3 or self.A_hat.shape[1:] != (r, m):
            raise DimensionMismatch(f"A_hat blocks must be {r}x{m}, got {self.A_hat.shape}")

    @property
    def m(self) -> int:
        return self.A0.shape[0]

    @property
    def N(self) -> int:
        return self.A_hat.shape[0]

    @property
    def r(self) -> int:
        return self.gamma.shape[1]

    def to_full(self) -> MG1Model:
        rest = np.einsum("mr,irn->imn", self.gamma, self.A_hat)
        return MG1Model(np.concatenate([self.A0[None], rest]))


@dataclass(frozen=True)
class Diagnostic:
    """One violated model invariant, localized to a block and row."""

    invariant: str  # "negative-entry" | "row-sum" | "zero-last-block" | "rank"
    block: int | None
    row: int | None
    detail: str

    def __str__(self):
        loc = []
        if self.block is not None:
            loc.append(f"block {self.block}")
        if self.row is not None:
            loc.append(f"row {self.row}")
        where = " (" + ", ".join(loc) + ")" if loc else ""
        return f"{self.invariant}{where}: {self.detail}"


@dataclass
class DriftReport:
    """Stationary vector p of sum(A_i), mean upward jump beta, and rho = p^T beta."""

    p: np.ndarray
    beta: np.ndarray
    rho: float
    chain_class: str


def validate(model, mode: str = "strict") -> list[Diagnostic]:
    """Check model invariants; returns diagnostics instead of raising.

    strict requires row sums of sum(A_i) within 1e-12 of one; permissive
    allows substochastic rows but still flags row sums above 1 + 1e-6.
    """
    if mode not in ("strict", "permissive"):
        raise ValueError(f"unknown validation mode {mode!r}")
    diags = []
    if isinstance(model, (LowRankDownModel, LowRankUpModel)):
        if model.r > model.m:
            diags.append(Diagnostic("rank", None, None,
                                    f"rank {model.r} exceeds block dimension {model.m}"))
        factors = ((0, "A0_hat", model.A0_hat), (0, "gamma", model.gamma)) \
            if isinstance(model, LowRankDownModel) else ((0, "gamma", model.gamma),)
        for blk, name, F in factors:
            for row in np.unique(np.nonzero(F < 0)[0]):
                diags.append(Diagnostic("negative-entry", blk, int(row),
                                        f"factor {name} has a negative entry"))
        if isinstance(model, LowRankUpModel):
            for i, blk in enumerate(model.A_hat):
                for row in np.unique(np.nonzero(blk < 0)[0]):
                    diags.append(Diagnostic("negative-entry", i + 1, int(row),
                                            "factor A_hat has a negative entry"))
        return diags + validate(model.to_full(), mode)

    A = model.A
    for i, blk in enumerate(A):
        for row in np.unique(np.nonzero(blk < 0)[0]):
            worst = float(blk[row].min())
            diags.append(Diagnostic("negative-entry", i, int(row),
                                    f"entry {worst:g} is negative"))
    row_sums = A.sum(axis=(0, 2))
    for row, s in enumerate(row_sums):
        if mode == "strict":
            if abs(s - 1.0) > ROW_SUM_TOL_STRICT:
                diags.append(Diagnostic("row-sum", None, row,
                                        f"sum over blocks is {s!r}, expected 1"))
        elif s > 1.0 + ROW_SUM_TOL_PERMISSIVE:
            diags.append(Diagnostic("row-sum", None, row,
                                    f"sum over blocks is {s!r}, above 1"))
    if model.N >= 1 and not A[-1].any():
        diags.append(Diagnostic("zero-last-block", model.N, None,
                                "highest block is identically zero; reduce N"))
    return diags


def stationary_vector(P) -> np.ndarray:
    """Stationary probability vector of an irreducible row-stochastic matrix.

    Uses state-reduction (GTH-style) elimination: no subtractions of
    like-signed quantities are performed, so the result is backward stable
    even for nearly reducible chains. Raises ReducibleChain when an
    elimination pivot underflows.
    """
    T = np.array(P, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {T.shape}")
    n = T.shape[0]
    for k in range(n - 1, 0, -1):
        s = T[k, :k].sum()
        if s < _GTH_PIVOT_FLOOR:
            raise ReducibleChain(f"elimination pivot underflow at state {k}")
        T[:k, k] /= s
        T[:k, :k] += np.outer(T[:k, k], T[k, :k])
    p = np.zeros(n)
    p[0] = 1.0
    for k in range(1, n):
        p[k] = p[:k] @ T[:k, k]
    return p / p.sum()


def drift(model) -> DriftReport:
    """Drift rho = p^T beta of the chain and its recurrence class.

    Requires sum(A_i) to be stochastic and irreducible. Low-rank and
    GI/M/1 models are handled through their full block sequence.
    """
    if isinstance(model, (LowRankDownModel, LowRankUpModel)):
        model = model.to_full()
    A = model.A
    p = stationary_vector(A.sum(axis=0))
    e = np.ones(model.m)
    weights = np.arange(1, model.N + 1, dtype=float)
    if model.N >= 1:
        beta = np.tensordot(weights, A[1:], axes=(0, 0)) @ e
    else:
        beta = np.zeros(model.m)
    rho = float(p @ beta)
    if abs(rho - 1.0) <= NULL_RECURRENT_WINDOW:
        cls = NULL_RECURRENT
    elif rho < 1.0:
        cls = POSITIVE_RECURRENT
    else:
        cls = TRANSIENT
    return DriftReport(p=p, beta=beta, rho=rho, chain_class=cls)


def poly_eval(model, X) -> np.ndarray:
    """Evaluate sum_v A_v X^v by the Horner recurrence P <- A_v + P X.

    The evaluation order (v = N down to 0) is fixed so repeated calls are
    bit-identical; matrix powers are never formed explicitly.
    """
    X = np.asarray(X, dtype=float)
    m = model.m
    if X.shape != (m, m):
        raise DimensionMismatch(f"X must be {m}x{m}, got {X.shape}")
    A = model.A
    P = A[-1].copy()
    for v in range(model.N - 1, -1, -1):
        P = A[v] + P @ X
    return P


def residual(model, X) -> np.ndarray:
    """Fixed-point residual sum_v A_v X^v - X; zero exactly at a solution."""
    X = np.asarray(X, dtype=float)
    return poly_eval(model, X) - X


def gim1_to_mg1(model: GIM1Model) -> MG1Model:
    """Transpose the R-equation into a G-equation with blocks A_i^T.

    R = sum_i R^i A_i iff R^T = sum_i A_i^T (R^T)^i, and elementwise
    minimality survives transposition, so R is the transpose of the
    returned model's G solution.
    """
    return MG1Model(np.transpose(model.A, (0, 2, 1)))


def mg1_to_gim1(model: MG1Model) -> GIM1Model:
    """Inverse of gim1_to_mg1; transposes every block."""
    return GIM1Model(np.transpose(model.A, (0, 2, 1)))
