"""Training pipeline: Gram assembly, dual QP, primal recovery, normalization.

Observations are flattened over (subject, observation) pairs in lexicographic
dataset order.  The dual problem is a box-constrained QP over one multiplier
per observation with two equality rows: the label balance and the centered
time balance.  The primal direction is recovered as the label-weighted sum of
support observations and normalized to unit length, turning the affine
offsets into the margin-form parameters (a, b, d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSolution,
    NoSupportVectors,
    SingleClass,
    SolverFailure,
)
from .model import (
    DualArtifacts,
    LongitudinalDataset,
    TrainMeta,
    TrainedClassifier,
    feature_matrix,
    observation_labels,
    observation_times,
)
from .qp import DEFAULT_MAX_ITER, DEFAULT_TOL, QpProblem, QpStatus, solve_qp

DEGENERACY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class GramIndex:
    """Bijection between flat row index and (subject, observation) pairs."""

    pairs: tuple[tuple[int, int], ...]
    y: np.ndarray       # per-observation subject label, +-1.0
    times: np.ndarray   # per-observation time
    t_bar: float        # arithmetic mean of all observation times

    @property
    def n(self) -> int:
        return len(self.pairs)

    def flat(self, subject: int, obs: int) -> int:
        return self.pairs.index((subject, obs))


@dataclass(frozen=True, eq=False)
class DualSolution:
    alphas: np.ndarray
    support: np.ndarray       # flat indices with alpha above the support threshold
    free_support: np.ndarray  # support indices strictly inside the box
    objective: float          # value of the maximization form
    iterations: int
    eq_label_residual: float
    eq_time_residual: float


def support_threshold(C: float) -> float:
    """Interior-point solutions never sit exactly at the bounds."""
    if math.isinf(C):
        return 1e-8
    return max(1e-8, 1e-6 * C)


def build_gram(ds: LongitudinalDataset) -> tuple[GramIndex, np.ndarray]:
    """Flatten the dataset and form the matrix of pairwise inner products.

    The returned matrix is exactly symmetric (symmetrized after the BLAS
    product) with nonnegative diagonal.
    """
    pairs = tuple(
        (i, j) for i, subj in enumerate(ds.subjects) for j in range(subj.n_obs)
    )
    y = observation_labels(ds)
    times = observation_times(ds)
    gi = GramIndex(pairs=pairs, y=y, times=times, t_bar=float(times.mean()))
    X = feature_matrix(ds)
    K = X @ X.T
    K = 0.5 * (K + K.T)
    return gi, K


def assemble_dual(gi: GramIndex, K: np.ndarray, C: float) -> QpProblem:
    """Build the dual QP in minimization form.

    minimize 1/2 a'(yy' * K)a - 1'a  subject to  y'a = 0,
    (t_bar - t)'a = 0 and 0 <= a <= C.  Use C = inf for the hard margin.
    """
    if not C > 0:
        raise ValueError("C must be positive (inf allowed for hard margin)")
    n = gi.n
    Q = K * np.outer(gi.y, gi.y)
    A = np.vstack([gi.y, gi.t_bar - gi.times])
    return QpProblem(
        Q=Q,
        c=-np.ones(n),
        A=A,
        b_eq=np.zeros(2),
        lower=np.zeros(n),
        upper=np.full(n, C),
    )


def solve_dual(
    gi: GramIndex,
    K: np.ndarray,
    C: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> DualSolution:
    problem = assemble_dual(gi, K, C)
    sol = solve_qp(problem, tol=tol, max_iter=max_iter)
    if sol.status is not QpStatus.OPTIMAL:
        raise SolverFailure(
            f"dual solve ended with status {sol.status.value} "
            f"(worst KKT residual {sol.kkt.worst:.3e})"
        )
    alphas = sol.x
    thr = support_threshold(C)
    support = np.flatnonzero(alphas > thr)
    if math.isinf(C):
        free = support
    else:
        free = np.flatnonzero((alphas > thr) & (alphas < C - thr))
    return DualSolution(
        alphas=alphas,
        support=support,
        free_support=free,
        objective=-sol.objective,
        iterations=sol.iterations,
        eq_label_residual=float(abs(alphas @ gi.y)),
        eq_time_residual=float(abs(alphas @ (gi.t_bar - gi.times))),
    )


def recover_primal(
    ds: LongitudinalDataset, gi: GramIndex, alphas: np.ndarray
) -> np.ndarray:
    """Weight direction before normalization: v = sum_r alpha_r y_r x_r."""
    X = feature_matrix(ds)
    return X.T @ (np.asarray(alphas, dtype=np.float64) * gi.y)


def recover_offsets(
    ds: LongitudinalDataset,
    gi: GramIndex,
    alphas: np.ndarray,
    v: np.ndarray,
    C: float,
    tol: float = DEFAULT_TOL,
) -> tuple[float, float]:
    """Solve the tight-margin equations for (a', b') by least squares.

    Uses the free support rows (strictly inside the box); falls back to all
    support rows when no multiplier is strictly interior.  If every usable
    row sits at the mean time the slope is unidentifiable and a' = 0 is the
    minimal-norm convention.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    thr = support_threshold(C)
    support = np.flatnonzero(alphas > thr)
    if support.size == 0:
        raise NoSupportVectors("all dual multipliers are below the support threshold")
    if math.isinf(C):
        rows = support
    else:
        free = support[alphas[support] < C - thr]
        rows = free if free.size else support

    X = feature_matrix(ds)
    y_r = gi.y[rows]
    dt = gi.times[rows] - gi.t_bar
    proj = X[rows] @ v
    rhs = 1.0 - y_r * proj

    if float(np.abs(dt).max()) <= 1e-9 * (1.0 + abs(gi.t_bar)):
        # Tight rows give v.x + b' = y_r exactly; average for robustness.
        return 0.0, float(np.mean(y_r - proj))

    design = np.column_stack([-dt, y_r])
    coef, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    return float(coef[0]), float(coef[1])


def normalize_to_margin_form(
    v: np.ndarray, a_prime: float, b_prime: float, t_bar: float
) -> tuple[np.ndarray, float, float, float]:
    """Scale (v, a', b') by 1/||v|| and derive the margin intercept d."""
    v = np.asarray(v, dtype=np.float64)
    v_norm = float(np.linalg.norm(v))
    if v_norm <= DEGENERACY_TOL:
        raise DegenerateSolution(f"||v|| = {v_norm:.3e} is numerically zero")
    w = v / v_norm
    a = a_prime / v_norm
    b = b_prime / v_norm
    d = (1.0 - a_prime * t_bar) / v_norm
    return w, a, b, d


def train(
    ds: LongitudinalDataset,
    C: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int | None = None,
) -> TrainedClassifier:
    """Full training pipeline from a validated dataset to the margin form.

    Raises SingleClass when only one label is present, DegenerateSolution
    when the learned direction is numerically zero (no positive average
    margin exists) and propagates solver failures.
    """
    if not ds.has_both_classes:
        raise SingleClass("training requires at least one subject of each class")
    gi, K = build_gram(ds)
    dual = solve_dual(gi, K, C, tol=tol, max_iter=max_iter)
    v = recover_primal(ds, gi, dual.alphas)
    v_norm = float(np.linalg.norm(v))
    if v_norm <= DEGENERACY_TOL:
        raise DegenerateSolution(
            "all dual multipliers cancel; the average margin is at best zero"
        )
    a_prime, b_prime = recover_offsets(ds, gi, dual.alphas, v, C, tol=tol)
    w, a, b, d = normalize_to_margin_form(v, a_prime, b_prime, gi.t_bar)
    raw = DualArtifacts(
        v=v,
        a_prime=a_prime,
        b_prime=b_prime,
        v_norm=v_norm,
        alphas=dual.alphas,
        support=tuple(gi.pairs[r] for r in dual.support),
        t_bar=gi.t_bar,
        C=C,
    )
    meta = TrainMeta(
        seed=seed,
        tol=tol,
        iterations=dual.iterations,
        eq_label_residual=dual.eq_label_residual,
        eq_time_residual=dual.eq_time_residual,
    )
    return TrainedClassifier(w=w, a=a, b=b, d=d, raw=raw, meta=meta)


def train_primal_reference(
    ds: LongitudinalDataset,
    C: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[float, np.ndarray, float, float, np.ndarray]:
    """Solve the primal QP directly in (v, a', b', slacks); duality oracle.

    Only intended for small instances: the QP has p + 2 + N variables.
    Returns (objective, v, a_prime, b_prime, slacks).
    """
    X = feature_matrix(ds)
    y = observation_labels(ds)
    times = observation_times(ds)
    N, p = X.shape
    t_bar = float(times.mean())
    soft = math.isfinite(C)

    n_var = p + 2 + (N if soft else 0)
    Q = np.zeros((n_var, n_var))
    Q[:p, :p] = np.eye(p)
    c = np.zeros(n_var)
    if soft:
        c[p + 2:] = C

    G = np.zeros((N, n_var))
    G[:, :p] = -y[:, None] * X
    G[:, p] = times - t_bar
    G[:, p + 1] = -y
    if soft:
        G[:, p + 2:] = -np.eye(N)
    h = -np.ones(N)

    lower = np.full(n_var, -np.inf)
    if soft:
        lower[p + 2:] = 0.0

    sol = solve_qp(QpProblem(Q=Q, c=c, G=G, h=h, lower=lower), tol=tol, max_iter=max_iter)
    if sol.status is not QpStatus.OPTIMAL:
        raise SolverFailure(
            f"primal reference ended with status {sol.status.value} "
            f"(worst KKT residual {sol.kkt.worst:.3e})"
        )
    v = sol.x[:p]
    a_prime = float(sol.x[p])
    b_prime = float(sol.x[p + 1])
    slacks = sol.x[p + 2:] if soft else np.zeros(N)
    return sol.objective, v, a_prime, b_prime, slacks
