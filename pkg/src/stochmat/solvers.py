"""Newton-Shamanskii iteration for the G equation and its low-rank variants.

One outer step freezes the derivative at the current iterate, factorizes the
structured operator once, and reuses it for a schedule of cheap inner
correction steps. Pure Newton is the one-inner-step special case and runs
through the same loop; functional iteration is kept as a baseline.
"""

from __future__ import annotations

import time
import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import get_lapack_funcs

from . import oracle, sylvester
from .errors import (
    DimensionMismatch,
    NearSingularIminusU,
    NotConverged,
    ReducibleChain,
)
from .model import (
    NULL_RECURRENT_WINDOW,
    LowRankDownModel,
    LowRankUpModel,
    MG1Model,
    drift,
    poly_eval,
    residual,
)
from .sylvester import StructuredOperator, factorize

COND_LIMIT = 1e14

ALGORITHMS = ("ns", "newton", "fi")


@dataclass(frozen=True)
class Fixed:
    """Run exactly n inner steps per factorization (unless converged)."""

    n: int = 3


@dataclass(frozen=True)
class Adaptive:
    """Keep the frozen factorization while each inner step still contracts
    the residual by at least the factor eta, up to cap steps."""

    eta: float = 0.2
    cap: int = 10


@dataclass
class SolverConfig:
    tol: float = 1e-12
    max_outer: int = 100
    schedule: Fixed | Adaptive = Fixed(3)
    initial: np.ndarray | None = None  # None means the zero matrix
    algorithm: str = "ns"  # "ns" | "newton" | "fi"
    check_inner: bool = False  # cross-check every inner solve against the Kronecker oracle
    record_iterates: bool = False


@dataclass
class SolveReport:
    """Trace of one solve: counts, residuals, factorizations, timings."""

    solution: np.ndarray
    converged: bool
    outer_count: int
    inner_counts: list[int]
    residual_history: list[float]
    factorization_count: int
    fact_history: list[int]  # factorizations performed when each inner step ran
    step_wall_ns: list[int]
    wall_times: dict[str, int]
    warnings: list[str] = field(default_factory=list)
    inner_unknown_shape: tuple[int, int] | None = None
    inner_check_max_rel: float | None = None
    iterates: list[np.ndarray] | None = None
    solution_factor: np.ndarray | None = None  # low-rank factor of the solution
    g_matrix: np.ndarray | None = None  # derived G for the censored-generator solver
    g_residual_inf: float | None = None

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else 0.0

    @property
    def inner_total(self) -> int:
        return sum(self.inner_counts)


def _inf_norm(M) -> float:
    return float(np.linalg.norm(M, np.inf)) if M.size else 0.0


def _now() -> int:
    return time.perf_counter_ns()


def tail_sums(model: MG1Model, Gk) -> list[np.ndarray]:
    """Frozen derivative coefficients [T_1..T_N], T_i = sum_{j>=i} A_j Gk^{j-i}.

    Built by the backward recurrence T_N = A_N, T_i = A_i + T_{i+1} Gk; the
    order is fixed so results are reproducible.
    """
    Gk = np.asarray(Gk, dtype=float)
    if Gk.shape != (model.m, model.m):
        raise DimensionMismatch(f"Gk must be {model.m}x{model.m}, got {Gk.shape}")
    return _tail_sums(model.A[1:], Gk)


def _tail_sums(blocks, X):
    n = len(blocks)
    out = [None] * n
    if n == 0:
        return out
    out[-1] = np.array(blocks[-1])
    for i in range(n - 2, -1, -1):
        out[i] = blocks[i] + out[i + 1] @ X
    return out


def _initial(cfg: SolverConfig, shape) -> np.ndarray:
    if cfg.initial is None:
        return np.zeros(shape)
    G0 = np.array(cfg.initial, dtype=float)
    if G0.shape != shape:
        raise DimensionMismatch(f"initial guess must be {shape}, got {G0.shape}")
    return G0


def _more_inner(schedule, s, rnorm, prev) -> bool:
    if isinstance(schedule, Fixed):
        return s < schedule.n
    return s < schedule.cap and rnorm <= schedule.eta * prev


def _drift_warnings(full_model: MG1Model) -> list[str]:
    row_sums = full_model.A.sum(axis=(0, 2))
    if np.abs(row_sums - 1.0).max() > 1e-6:
        return []  # substochastic input, drift undefined
    try:
        rep = drift(full_model)
    except ReducibleChain:
        return []
    if abs(rep.rho - 1.0) <= NULL_RECURRENT_WINDOW:
        return [f"null-recurrent drift (rho={rep.rho!r}); convergence is not guaranteed"]
    return []


class _Trace:
    """Accumulates per-step history while a solve runs."""

    def __init__(self, record_iterates: bool):
        self.residual_history: list[float] = []
        self.fact_history: list[int] = []
        self.step_wall_ns: list[int] = []
        self.inner_counts: list[int] = []
        self.iterates: list[np.ndarray] | None = [] if record_iterates else None
        self.factorizations = 0
        self.fact_ns = 0
        self.inner_ns = 0
        self.warnings: list[str] = []
        self.check_max_rel: float | None = None

    def start_point(self, X):
        if self.iterates is not None:
            self.iterates.append(np.array(X))

    def step(self, rnorm: float, step_ns: int, X):
        self.residual_history.append(rnorm)
        self.fact_history.append(self.factorizations)
        self.step_wall_ns.append(step_ns)
        self.inner_ns += step_ns
        if self.iterates is not None:
            self.iterates.append(np.array(X))

    def oracle_check(self, op: StructuredOperator, E, X):
        if op.q * op.p > oracle.VEC_SIZE_LIMIT:
            return
        X_ref = oracle.kron_solve(op.B, op.C, E)
        scale = _inf_norm(X_ref)
        diff = _inf_norm(X - X_ref)
        rel = diff / scale if scale > 0 else diff
        self.check_max_rel = max(self.check_max_rel or 0.0, rel)


def _finish(trace: _Trace, cfg: SolverConfig, t_start: int, converged: bool, **fields) -> SolveReport:
    report = SolveReport(
        converged=converged,
        outer_count=len(trace.inner_counts),
        inner_counts=trace.inner_counts,
        residual_history=trace.residual_history,
        factorization_count=trace.factorizations,
        fact_history=trace.fact_history,
        step_wall_ns=trace.step_wall_ns,
        wall_times={
            "factorize_ns": trace.fact_ns,
            "inner_ns": trace.inner_ns,
            "total_ns": _now() - t_start,
        },
        warnings=trace.warnings,
        inner_check_max_rel=trace.check_max_rel,
        iterates=trace.iterates,
        **fields,
    )
    if not converged:
        raise NotConverged(report)
    return report


def solve_g(model: MG1Model, cfg: SolverConfig | None = None) -> SolveReport:
    """Minimal nonnegative solution of G = sum_v A_v G^v.

    Each outer step builds the tail sums at the current iterate, factorizes
    the structured operator (B_0 = T_1 - I, B_j = T_{j+1}, C = G_k) once, and
    applies the scheduled number of inner corrections
    G <- G + solve(op, -(residual)). With the zero start the iterates grow
    monotonically toward the minimal solution. Raises NotConverged (with the
    partial report attached) at the outer cap.
    """
    cfg = cfg or SolverConfig()
    if cfg.algorithm == "fi":
        return _functional_iteration(model, cfg)
    if cfg.algorithm not in ("ns", "newton"):
        raise ValueError(f"unknown algorithm {cfg.algorithm!r}")
    t_start = _now()
    m = model.m
    trace = _Trace(cfg.record_iterates)
    trace.warnings.extend(_drift_warnings(model))
    if model.N == 0:
        # G(X) = A_0 - X: the fixed point is A_0 itself
        return _finish(trace, cfg, t_start, True,
                       solution=model.A[0].copy(), inner_unknown_shape=(m, m))
    schedule = Fixed(1) if cfg.algorithm == "newton" else cfg.schedule
    eye = np.eye(m)
    G = _initial(cfg, (m, m))
    trace.start_point(G)
    resid = residual(model, G)
    rnorm = _inf_norm(resid)
    while rnorm > cfg.tol and len(trace.inner_counts) < cfg.max_outer:
        t0 = _now()
        S = _tail_sums(model.A[1:], G)
        op = StructuredOperator(np.stack([S[0] - eye] + S[1:]), G)
        fact = factorize(op)
        trace.factorizations += 1
        trace.fact_ns += _now() - t0
        s = 0
        while True:
            t1 = _now()
            E = -resid
            X = sylvester.solve(fact, E)
            if cfg.check_inner:
                trace.oracle_check(op, E, X)
            G = G + X
            resid = residual(model, G)
            prev, rnorm = rnorm, _inf_norm(resid)
            s += 1
            trace.step(rnorm, _now() - t1, G)
            if rnorm <= cfg.tol or not _more_inner(schedule, s, rnorm, prev):
                break
        trace.inner_counts.append(s)
    return _finish(trace, cfg, t_start, bool(rnorm <= cfg.tol),
                   solution=G, inner_unknown_shape=(m, m))


def _functional_iteration(model: MG1Model, cfg: SolverConfig) -> SolveReport:
    t_start = _now()
    m = model.m
    trace = _Trace(cfg.record_iterates)
    trace.warnings.extend(_drift_warnings(model))
    G = _initial(cfg, (m, m))
    trace.start_point(G)
    P = poly_eval(model, G)
    rnorm = _inf_norm(P - G)
    while rnorm > cfg.tol and len(trace.inner_counts) < cfg.max_outer:
        t1 = _now()
        G = P
        P = poly_eval(model, G)
        rnorm = _inf_norm(P - G)
        trace.step(rnorm, _now() - t1, G)
        trace.inner_counts.append(1)
    return _finish(trace, cfg, t_start, bool(rnorm <= cfg.tol),
                   solution=G, inner_unknown_shape=(m, m))


def solve_g_lowrank_down(model: LowRankDownModel, cfg: SolverConfig | None = None) -> SolveReport:
    """Newton-Shamanskii on the m x r factor when A_0 = A0_hat @ gamma.

    Every correction lives in the factor (G = Ghat @ gamma throughout), and
    the operator's right multiplier is the r x r matrix gamma @ Ghat_k, so
    the per-outer-step Schur decomposition shrinks from m x m to r x r.
    Stopping still measures the full-space residual of the reconstructed G.
    """
    cfg = cfg or SolverConfig()
    if cfg.algorithm not in ("ns", "newton"):
        raise ValueError("the low-rank down solver supports ns/newton only")
    t_start = _now()
    m, r, N = model.m, model.r, model.N
    A0_hat, gamma, A_rest = model.A0_hat, model.gamma, model.A_rest
    trace = _Trace(cfg.record_iterates)
    trace.warnings.extend(_drift_warnings(model.to_full()))
    if N == 0:
        Ghat = A0_hat.copy()
        return _finish(trace, cfg, t_start, True, solution=Ghat @ gamma,
                       solution_factor=Ghat, inner_unknown_shape=(m, r))
    schedule = Fixed(1) if cfg.algorithm == "newton" else cfg.schedule
    eye = np.eye(m)
    Ghat = _initial(cfg, (m, r))
    G = Ghat @ gamma
    trace.start_point(G)
    S1 = _tail_sums(A_rest, G)[0]
    ghat_resid = A0_hat + (S1 - eye) @ Ghat  # full residual is ghat_resid @ gamma
    rnorm = _inf_norm(ghat_resid @ gamma)
    while rnorm > cfg.tol and len(trace.inner_counts) < cfg.max_outer:
        t0 = _now()
        S = _tail_sums(A_rest, G)
        op = StructuredOperator(np.stack([S[0] - eye] + S[1:]), gamma @ Ghat)
        fact = factorize(op)
        trace.factorizations += 1
        trace.fact_ns += _now() - t0
        s = 0
        while True:
            t1 = _now()
            E = -ghat_resid
            X = sylvester.solve(fact, E)
            if cfg.check_inner:
                trace.oracle_check(op, E, X)
            Ghat = Ghat + X
            G = Ghat @ gamma
            S1 = _tail_sums(A_rest, G)[0]
            ghat_resid = A0_hat + (S1 - eye) @ Ghat
            prev, rnorm = rnorm, _inf_norm(ghat_resid @ gamma)
            s += 1
            trace.step(rnorm, _now() - t1, G)
            if rnorm <= cfg.tol or not _more_inner(schedule, s, rnorm, prev):
                break
        trace.inner_counts.append(s)
    return _finish(trace, cfg, t_start, bool(rnorm <= cfg.tol), solution=G,
                   solution_factor=Ghat, inner_unknown_shape=(m, r))


def _lu_with_cond(M):
    anorm = float(np.linalg.norm(M, 1))
    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M)
    gecon = get_lapack_funcs("gecon", (M,))
    rcond, _ = gecon(lu, anorm)
    cond = 1.0 / rcond if rcond > 0 else np.inf
    return (lu, piv), cond


def solve_u(model: MG1Model | LowRankUpModel, cfg: SolverConfig | None = None) -> SolveReport:
    """Newton-Shamanskii on the censored generator U = sum_i A_i ((I-U)^{-1} A_0)^{i-1}.

    The report's solution is U; the G matrix it implies, (I-U)^{-1} A_0, is
    returned in g_matrix along with its fixed-point residual. When the
    local/up blocks factor as A_i = gamma @ A_hat_i the whole iteration runs
    on the r x m factor of U, so the column systems of the structured solve
    are r x r. One LU of (I-U) is computed per iterate and reused for every
    right-hand side that needs it.
    """
    cfg = cfg or SolverConfig()
    if cfg.algorithm not in ("ns", "newton"):
        raise ValueError("the censored-generator solver supports ns/newton only")
    t_start = _now()
    lowrank = isinstance(model, LowRankUpModel)
    if lowrank:
        m, r, N = model.m, model.r, model.N
        A0, gamma, hat_blocks = model.A0, model.gamma, model.A_hat
        full = model.to_full()
    elif isinstance(model, MG1Model):
        m, N = model.m, model.N
        A0, blocks = model.A[0], model.A[1:]
        full = model
    else:
        raise TypeError(f"solve_u expects MG1Model or LowRankUpModel, got {type(model).__name__}")
    trace = _Trace(cfg.record_iterates)
    trace.warnings.extend(_drift_warnings(full))
    unknown_shape = (r, m) if lowrank else (m, m)
    if N == 0:
        return _finish(trace, cfg, t_start, True, solution=np.zeros((m, m)),
                       g_matrix=A0.copy(), g_residual_inf=0.0,
                       inner_unknown_shape=unknown_shape)
    schedule = Fixed(1) if cfg.algorithm == "newton" else cfg.schedule
    eye = np.eye(m)

    def refresh(U):
        lu, cond = _lu_with_cond(eye - U)
        if cond > COND_LIMIT:
            raise NearSingularIminusU(f"condition estimate {cond:.3e} of I-U exceeds {COND_LIMIT:g}")
        W = sla.lu_solve(lu, A0)
        if lowrank:
            S1h = _tail_sums(hat_blocks, W)[0]  # sum_i A_hat_i W^{i-1}, r x m
            Ehat = S1h - Uhat
            Fres = -gamma @ Ehat
        else:
            Ehat = _tail_sums(blocks, W)[0] - U
            Fres = -Ehat
        return lu, W, Ehat, Fres

    if lowrank:
        Uhat = _initial(cfg, (r, m))
        U = gamma @ Uhat
    else:
        U = _initial(cfg, (m, m))
    trace.start_point(U)
    lu_cur, W, Ehat, Fres = refresh(U)
    rnorm = _inf_norm(Fres)
    while rnorm > cfg.tol and len(trace.inner_counts) < cfg.max_outer:
        t0 = _now()
        # lu_cur/W are already the frozen quantities at U_k
        if N >= 2:
            if lowrank:
                V = _tail_sums(hat_blocks[1:], W)  # V_j = sum_{i>j} A_hat_i W^{i-1-j}
                P = sla.lu_solve(lu_cur, gamma)
                coeff = [-(v @ P) for v in V]  # r x r
                head = np.eye(r)
            else:
                V = _tail_sums(blocks[1:], W)
                coeff = [-sla.lu_solve(lu_cur, v.T, trans=1).T for v in V]
                head = eye
        else:
            coeff, head = [], np.eye(r) if lowrank else eye
        op = StructuredOperator(np.stack([head] + coeff), W)
        fact = factorize(op)
        trace.factorizations += 1
        trace.fact_ns += _now() - t0
        s = 0
        while True:
            t1 = _now()
            E = Ehat
            Y = sylvester.solve(fact, E)
            if cfg.check_inner:
                trace.oracle_check(op, E, Y)
            if lowrank:
                Uhat = Uhat + Y
                U = gamma @ Uhat
            else:
                U = U + Y
            lu_cur, W, Ehat, Fres = refresh(U)
            prev, rnorm = rnorm, _inf_norm(Fres)
            s += 1
            trace.step(rnorm, _now() - t1, U)
            if rnorm <= cfg.tol or not _more_inner(schedule, s, rnorm, prev):
                break
        trace.inner_counts.append(s)
    g_res = _inf_norm(residual(full, W))
    return _finish(trace, cfg, t_start, bool(rnorm <= cfg.tol), solution=U,
                   solution_factor=Uhat if lowrank else None,
                   g_matrix=W, g_residual_inf=g_res,
                   inner_unknown_shape=unknown_shape)
