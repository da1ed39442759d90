"""Dense convex quadratic programming with KKT-certified solutions.

Solves problems of the form

    minimize    1/2 x'Qx + c'x
    subject to  A x  = b
                G x <= h
                l <= x <= u        (entries of l, u may be -inf/+inf)

with a primal-dual interior-point method using Mehrotra-style
predictor-corrector steps on the dense reduced KKT system.  Box bounds are
handled separately from general inequality rows so that box-only problems
(the common case here) cost one Cholesky factorization of an n-by-n matrix
per iteration.

Residual conventions, shared with :func:`kkt_residuals`:

* ``primal_residual``: infinity norm of equality violations together with the
  positive part of every inequality/bound violation.
* ``dual_residual``: infinity norm of the Lagrangian gradient
  ``Qx + c + A'y + G'z + beta`` where ``beta`` is the signed bound dual
  (upper-bound multiplier minus lower-bound multiplier).
* ``complementarity``: the total complementarity ``sum_i |dual_i * slack_i|``
  over all inequality rows and finite bounds.  At a stationary point this
  equals the gap between the primal objective and the Lagrangian dual value.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, NotPSD

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200

# Q may pick up tiny negative eigenvalues from rounding (Gram matrices); reject
# only below -PSD_FLOOR_REL * ||Q||.
PSD_FLOOR_REL = 1e-8

_STEP_DAMPING = 0.995
_DIVERGE_DUAL = 1e12
_DIVERGE_PRIMAL = 1e13


class QpStatus(Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class KktResiduals:
    primal_residual: float
    dual_residual: float
    complementarity: float

    @property
    def worst(self) -> float:
        return max(self.primal_residual, self.dual_residual, self.complementarity)


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Dense convex QP data.  ``A``/``G`` may be None for absent blocks."""

    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        Q = np.ascontiguousarray(self.Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DimensionMismatch(f"Q must be square, got shape {Q.shape}")
        n = Q.shape[0]
        c = np.ascontiguousarray(self.c, dtype=np.float64)
        if c.shape != (n,):
            raise DimensionMismatch(f"c must have shape ({n},), got {c.shape}")

        scale = max(1.0, float(np.abs(Q).max(initial=0.0)))
        if float(np.abs(Q - Q.T).max(initial=0.0)) > 1e-10 * scale:
            raise DimensionMismatch("Q is not symmetric within tolerance")

        A = self.A
        b_eq = self.b_eq
        if A is None:
            A = np.zeros((0, n))
            b_eq = np.zeros(0)
        else:
            A = np.ascontiguousarray(A, dtype=np.float64)
            b_eq = np.ascontiguousarray(b_eq, dtype=np.float64)
            if A.ndim != 2 or A.shape[1] != n or b_eq.shape != (A.shape[0],):
                raise DimensionMismatch("equality block shapes are inconsistent")

        G = self.G
        h = self.h
        if G is None:
            G = np.zeros((0, n))
            h = np.zeros(0)
        else:
            G = np.ascontiguousarray(G, dtype=np.float64)
            h = np.ascontiguousarray(h, dtype=np.float64)
            if G.ndim != 2 or G.shape[1] != n or h.shape != (G.shape[0],):
                raise DimensionMismatch("inequality block shapes are inconsistent")

        lower = self.lower
        upper = self.upper
        lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=np.float64).copy()
        upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=np.float64).copy()
        if lower.shape != (n,) or upper.shape != (n,):
            raise DimensionMismatch("bound vectors must have length n")
        if (lower > upper).any():
            raise ValueError("lower bound exceeds upper bound")

        for name, val in (
            ("Q", Q), ("c", c), ("A", A), ("b_eq", b_eq), ("G", G), ("h", h),
        ):
            if val.size and not np.isfinite(val).all():
                raise ValueError(f"{name} contains non-finite entries")

        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: np.ndarray
    objective: float
    eq_duals: np.ndarray
    in_duals: np.ndarray
    bound_duals: np.ndarray  # signed: upper-bound multiplier minus lower-bound
    status: QpStatus
    kkt: KktResiduals
    iterations: int


def _check_psd(Q: np.ndarray) -> None:
    n = Q.shape[0]
    if n == 0:
        return
    scale = float(np.abs(Q).max(initial=0.0))
    floor = PSD_FLOOR_REL * scale
    try:
        np.linalg.cholesky(Q + (floor + 1e-300) * np.eye(n))
        return
    except np.linalg.LinAlgError:
        pass
    lam_min = float(np.linalg.eigvalsh(Q)[0])
    if lam_min < -floor:
        raise NotPSD(
            f"Q has eigenvalue {lam_min:.3e} below the accepted floor {-floor:.3e}"
        )


def kkt_residuals(problem: QpProblem, solution: QpSolution) -> KktResiduals:
    """Recompute KKT residuals from problem data, independent of the solver."""
    x = np.asarray(solution.x, dtype=np.float64)
    if x.shape != (problem.n,):
        raise DimensionMismatch("solution x has wrong length")
    y = np.asarray(solution.eq_duals, dtype=np.float64)
    z = np.asarray(solution.in_duals, dtype=np.float64)
    beta = np.asarray(solution.bound_duals, dtype=np.float64)
    if y.shape != (problem.A.shape[0],) or z.shape != (problem.G.shape[0],):
        raise DimensionMismatch("dual vectors have wrong length")
    if beta.shape != (problem.n,):
        raise DimensionMismatch("bound duals have wrong length")

    primal = 0.0
    if problem.A.shape[0]:
        primal = float(np.abs(problem.A @ x - problem.b_eq).max())
    if problem.G.shape[0]:
        primal = max(primal, float(np.maximum(problem.G @ x - problem.h, 0.0).max()))
    finite_lo = np.isfinite(problem.lower)
    finite_up = np.isfinite(problem.upper)
    if finite_lo.any():
        primal = max(primal, float(np.maximum(problem.lower[finite_lo] - x[finite_lo], 0.0).max()))
    if finite_up.any():
        primal = max(primal, float(np.maximum(x[finite_up] - problem.upper[finite_up], 0.0).max()))

    grad = problem.Q @ x + problem.c + beta
    if problem.A.shape[0]:
        grad = grad + problem.A.T @ y
    if problem.G.shape[0]:
        grad = grad + problem.G.T @ z
    dual = float(np.abs(grad).max(initial=0.0))

    comp = 0.0
    if problem.G.shape[0]:
        comp += float(np.abs(z * (problem.h - problem.G @ x)).sum())
    up = np.maximum(beta, 0.0)
    lo = np.maximum(-beta, 0.0)
    if finite_up.any():
        comp += float(np.abs(up[finite_up] * (problem.upper[finite_up] - x[finite_up])).sum())
    if finite_lo.any():
        comp += float(np.abs(lo[finite_lo] * (x[finite_lo] - problem.lower[finite_lo])).sum())

    return KktResiduals(primal_residual=primal, dual_residual=dual, complementarity=comp)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest tau with v + tau*dv >= 0 (v > 0 assumed); +inf if unconstrained."""
    neg = dv < 0
    if not neg.any():
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _solve_equality_only(problem: QpProblem, tol: float) -> QpSolution:
    """Direct KKT solve when there are no inequalities or finite bounds."""
    n = problem.n
    k = problem.A.shape[0]
    reg = 1e-12 * max(1.0, float(np.abs(problem.Q).max(initial=0.0)))
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = problem.Q + reg * np.eye(n)
    if k:
        kkt[:n, n:] = problem.A.T
        kkt[n:, :n] = problem.A
        kkt[n:, n:] = -1e-12 * np.eye(k)
    rhs = np.concatenate([-problem.c, problem.b_eq])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    x, y = sol[:n], sol[n:]

    solution = QpSolution(
        x=x,
        objective=problem.objective(x),
        eq_duals=y,
        in_duals=np.zeros(0),
        bound_duals=np.zeros(n),
        status=QpStatus.OPTIMAL,
        kkt=KktResiduals(0.0, 0.0, 0.0),
        iterations=1,
    )
    res = kkt_residuals(problem, solution)
    status = QpStatus.OPTIMAL
    if res.worst > tol:
        # Unreducible dual residual means the objective is unbounded along a
        # feasible direction; an equality residual means inconsistency.
        status = QpStatus.UNBOUNDED if res.dual_residual > tol else QpStatus.INFEASIBLE
    return QpSolution(
        x=x, objective=problem.objective(x), eq_duals=y, in_duals=np.zeros(0),
        bound_duals=np.zeros(n), status=status, kkt=res, iterations=1,
    )


def solve_qp(
    problem: QpProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> QpSolution:
    """Solve a dense convex QP to the requested KKT tolerance.

    Returns a solution whose ``status`` is OPTIMAL when all three KKT
    residuals are at most ``tol``.  On iteration exhaustion the best iterate
    seen (by worst residual) is returned with status MAX_ITERATIONS;
    diverging duals with a stubborn primal residual yield INFEASIBLE and a
    diverging primal iterate yields UNBOUNDED.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_psd(problem.Q)

    n = problem.n
    Q, c = problem.Q, problem.c
    A, b = problem.A, problem.b_eq
    G, h = problem.G, problem.h
    k_eq, k_in = A.shape[0], G.shape[0]

    iu = np.flatnonzero(np.isfinite(problem.upper))
    il = np.flatnonzero(np.isfinite(problem.lower))
    ub = problem.upper[iu]
    lb = problem.lower[il]
    nu, nl = iu.size, il.size
    m = k_in + nu + nl

    if m == 0:
        return _solve_equality_only(problem, tol)

    hbar = np.concatenate([h, ub, -lb])

    def ineq_eval(vec: np.ndarray) -> np.ndarray:
        parts = []
        if k_in:
            parts.append(G @ vec)
        parts.append(vec[iu])
        parts.append(-vec[il])
        return np.concatenate(parts)

    def ineq_rmv(w: np.ndarray) -> np.ndarray:
        out = np.zeros(n)
        if k_in:
            out += G.T @ w[:k_in]
        out[iu] += w[k_in:k_in + nu]
        out[il] -= w[k_in + nu:]
        return out

    # Start from the box midpoint where both bounds are finite.
    x = np.zeros(n)
    both = np.isfinite(problem.lower) & np.isfinite(problem.upper)
    x[both] = 0.5 * (problem.lower[both] + problem.upper[both])
    only_lo = np.isfinite(problem.lower) & ~np.isfinite(problem.upper)
    only_up = ~np.isfinite(problem.lower) & np.isfinite(problem.upper)
    x[only_lo] = problem.lower[only_lo] + 1.0
    x[only_up] = problem.upper[only_up] - 1.0

    s = hbar - ineq_eval(x)
    s = np.where(s > 1.0, s, 1.0)
    z = np.ones(m)
    y = np.zeros(k_eq)

    eye_eq = np.eye(k_eq) if k_eq else None

    best = None
    best_worst = np.inf
    status = QpStatus.MAX_ITERATIONS
    iterations = 0

    for iterations in range(1, max_iter + 1):
        rd = Q @ x + c + ineq_rmv(z)
        if k_eq:
            rd += A.T @ y
        rp = A @ x - b if k_eq else np.zeros(0)
        gx = ineq_eval(x)
        rg = gx + s - hbar
        true_slack = hbar - gx

        primal_res = float(np.maximum(-true_slack, 0.0).max(initial=0.0))
        if k_eq:
            primal_res = max(primal_res, float(np.abs(rp).max()))
        dual_res = float(np.abs(rd).max(initial=0.0))
        comp = float(np.abs(z * true_slack).sum())
        worst = max(primal_res, dual_res, comp)

        if worst < best_worst:
            best_worst = worst
            best = (x.copy(), y.copy(), z.copy())

        if worst <= tol:
            status = QpStatus.OPTIMAL
            break
        if not (np.isfinite(worst) and np.isfinite(x).all()):
            status = QpStatus.MAX_ITERATIONS
            break
        if max(float(np.abs(z).max(initial=0.0)),
               float(np.abs(y).max(initial=0.0)) if k_eq else 0.0) > _DIVERGE_DUAL \
                and primal_res > tol:
            status = QpStatus.INFEASIBLE
            break
        if float(np.abs(x).max(initial=0.0)) > _DIVERGE_PRIMAL:
            status = QpStatus.UNBOUNDED
            break

        mu = float(z @ s) / m

        # Reduced system: (Q + G' D G + bound diagonal) dx + A' dy = f, A dx = g.
        d = z / s
        M = Q.copy()
        if k_in:
            M += G.T @ (d[:k_in, None] * G)
        M[iu, iu] += d[k_in:k_in + nu]
        M[il, il] += d[k_in + nu:]
        M = 0.5 * (M + M.T)

        ridge = 0.0
        L = None
        for attempt in range(4):
            try:
                L = np.linalg.cholesky(M if ridge == 0.0 else M + ridge * np.eye(n))
                break
            except np.linalg.LinAlgError:
                base = max(1.0, float(np.abs(M).max()))
                ridge = base * (1e-12 if attempt == 0 else ridge / base * 1e4)
        if L is None:
            status = QpStatus.MAX_ITERATIONS
            break

        def m_solve(rhs: np.ndarray) -> np.ndarray:
            t = np.linalg.solve(L, rhs)
            return np.linalg.solve(L.T, t)

        if k_eq:
            minv_at = m_solve(A.T)
            s_eq = A @ minv_at
            s_eq = 0.5 * (s_eq + s_eq.T)
            delta = 1e-13 * max(1.0, float(np.abs(s_eq).max(initial=0.0)))
            s_eq += delta * eye_eq

        def kkt_solve(f: np.ndarray, g: np.ndarray):
            t1 = m_solve(f)
            if not k_eq:
                return t1, np.zeros(0)
            dy = np.linalg.solve(s_eq, A @ t1 - g)
            return t1 - minv_at @ dy, dy

        # Predictor (affine scaling) direction.
        rc = z * s
        f = -rd + ineq_rmv((rc - z * rg) / s)
        dx, dy = kkt_solve(f, -rp)
        ds = -rg - ineq_eval(dx)
        dz = (-rc - z * ds) / s

        alpha_p = min(1.0, _max_step(s, ds))
        alpha_d = min(1.0, _max_step(z, dz))
        mu_aff = float((s + alpha_p * ds) @ (z + alpha_d * dz)) / m
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

        # Corrector with second-order term.
        rc = z * s + ds * dz - sigma * mu
        f = -rd + ineq_rmv((rc - z * rg) / s)
        dx, dy = kkt_solve(f, -rp)
        ds = -rg - ineq_eval(dx)
        dz = (-rc - z * ds) / s

        alpha_p = min(1.0, _STEP_DAMPING * _max_step(s, ds))
        alpha_d = min(1.0, _STEP_DAMPING * _max_step(z, dz))
        if max(alpha_p, alpha_d) < 1e-13:
            status = QpStatus.MAX_ITERATIONS
            break

        x += alpha_p * dx
        s += alpha_p * ds
        if k_eq:
            y += alpha_d * dy
        z += alpha_d * dz
    else:
        iterations = max_iter

    if status is not QpStatus.OPTIMAL and best is not None:
        x, y, z = best
        # Reclassify a hopeless primal residual with huge duals as infeasible.
        if status is QpStatus.MAX_ITERATIONS:
            dual_mag = max(float(np.abs(z).max(initial=0.0)),
                           float(np.abs(y).max(initial=0.0)) if k_eq else 0.0)
            gx = ineq_eval(x)
            pres = float(np.maximum(gx - hbar, 0.0).max(initial=0.0))
            if k_eq:
                pres = max(pres, float(np.abs(A @ x - b).max()))
            if pres > np.sqrt(tol) and dual_mag > 1e8:
                status = QpStatus.INFEASIBLE

    in_duals = z[:k_in]
    beta = np.zeros(n)
    beta[iu] += z[k_in:k_in + nu]
    beta[il] -= z[k_in + nu:]

    solution = QpSolution(
        x=x,
        objective=problem.objective(x),
        eq_duals=y,
        in_duals=in_duals,
        bound_duals=beta,
        status=status,
        kkt=KktResiduals(0.0, 0.0, 0.0),
        iterations=iterations,
    )
    res = kkt_residuals(problem, solution)
    return QpSolution(
        x=x,
        objective=problem.objective(x),
        eq_duals=y,
        in_duals=in_duals,
        bound_duals=beta,
        status=status,
        kkt=res,
        iterations=iterations,
    )
