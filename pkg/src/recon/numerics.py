"""Quadrature, dense linear algebra, root finding, and smooth minimizers.

Everything operates on float64 numpy arrays, is deterministic, and never
mutates its inputs. These are the only numerical kernels used by the rest of
the package; problem modules stay free of ad hoc linear algebra.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CONDITION_LIMIT = 1e14
NULLSPACE_CUTOFF = 1e-10  # singular values below cutoff * sigma_max count as null


class RankDeficiencyError(RuntimeError):
    """A linear system is singular or numerically rank-deficient.

    Carries the condition estimate and, when computed, the dimension of the
    numerical nullspace. Rank deficiency of a constrained stationarity system
    is how a non-identifiable reconstruction announces itself, so callers
    frequently catch this and report it as a diagnostic rather than a crash.
    """

    def __init__(self, message: str, condition: float | None = None,
                 nullspace_dim: int | None = None):
        super().__init__(message)
        self.condition = condition
        self.nullspace_dim = nullspace_dim


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of iterations before reaching tolerance."""

    def __init__(self, message: str, residual_norm: float | None = None,
                 iterations: int | None = None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


class DivergenceError(RuntimeError):
    """An iteration produced a non-finite objective value."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights for integration over an interval or box.

    ``nodes`` has shape (P,) in 1D and (P, 2) in 2D; ``weights`` always has
    shape (P,). Weights sum to the measure of the domain.
    """

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def dim(self) -> int:
        return 1 if self.nodes.ndim == 1 else self.nodes.shape[1]

    def integrate(self, f) -> float:
        """Integrate a callable or an array of node values."""
        values = f(self.nodes) if callable(f) else np.asarray(f, dtype=float)
        return float(self.weights @ values)


def gauss_legendre(n: int, domain) -> QuadratureRule:
    """Gauss-Legendre rule with n points per axis.

    ``domain`` is (a, b) for an interval or ((ax, bx), (ay, by)) for a
    rectangle, in which case the rule is the n-by-n tensor product. Exact for
    polynomials up to degree 2n - 1 per axis.
    """
    if n < 1:
        raise ValueError(f"need at least one quadrature point, got n={n}")
    x, w = np.polynomial.legendre.leggauss(n)
    if np.ndim(domain[0]) == 0:
        a, b = float(domain[0]), float(domain[1])
        if not b > a:
            raise ValueError(f"empty interval ({a}, {b})")
        nodes = 0.5 * (b - a) * (x + 1.0) + a
        weights = 0.5 * (b - a) * w
        return QuadratureRule(nodes=nodes, weights=weights)
    (ax, bx), (ay, by) = domain
    rx = gauss_legendre(n, (ax, bx))
    ry = gauss_legendre(n, (ay, by))
    X, Y = np.meshgrid(rx.nodes, ry.nodes, indexing="ij")
    WX, WY = np.meshgrid(rx.weights, ry.weights, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureRule(nodes=nodes, weights=(WX * WY).ravel())


def composite_gauss_legendre(n: int, breakpoints: Sequence[float]) -> QuadratureRule:
    """Piecewise Gauss-Legendre rule with n points on each subinterval.

    ``breakpoints`` are the subinterval endpoints including both ends of the
    domain. Used for integrands with kinks: split there and each piece is
    smooth again.
    """
    pts = np.asarray(sorted(set(float(b) for b in breakpoints)))
    if pts.size < 2:
        raise ValueError("need at least two breakpoints")
    nodes, weights = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        r = gauss_legendre(n, (a, b))
        nodes.append(r.nodes)
        weights.append(r.weights)
    return QuadratureRule(nodes=np.concatenate(nodes), weights=np.concatenate(weights))


def split_unit_rule(breakpoints: Sequence[float] = (), n: int = 40) -> QuadratureRule:
    """Default rule on [0, 1]: 200-point Gauss-Legendre, or a kink-split
    composite rule when interior breakpoints are supplied."""
    interior = [b for b in breakpoints if 0.0 < b < 1.0]
    if not interior:
        return gauss_legendre(200, (0.0, 1.0))
    return composite_gauss_legendre(n, [0.0, *interior, 1.0])


def unit_square_rule(n: int = 64) -> QuadratureRule:
    return gauss_legendre(n, ((0.0, 1.0), (0.0, 1.0)))


# ---------------------------------------------------------------------------
# dense linear algebra


def condition_and_nullspace(A: np.ndarray) -> tuple[float, int]:
    """2-norm condition estimate and numerical nullspace dimension via SVD."""
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    smax = s[0]
    if smax == 0.0:
        return np.inf, len(s)
    null_dim = int(np.sum(s <= NULLSPACE_CUTOFF * smax))
    cond = np.inf if s[-1] == 0.0 else float(smax / s[-1])
    return cond, null_dim


def solve_dense(A: np.ndarray, b: np.ndarray,
                condition_limit: float = CONDITION_LIMIT) -> np.ndarray:
    """Solve a square dense system by LU with partial pivoting.

    Rejects numerically singular input (condition estimate above
    ``condition_limit``) with a RankDeficiencyError carrying the estimate and
    nullspace dimension. One step of iterative refinement keeps the
    substitution residual at the level of rounding in b.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"shape mismatch: A is {A.shape}, b has {b.shape}")
    cond, null_dim = condition_and_nullspace(A)
    if not np.isfinite(cond) or cond > condition_limit:
        raise RankDeficiencyError(
            f"matrix is numerically rank-deficient "
            f"(condition estimate {cond:.3e}, nullspace dimension {null_dim})",
            condition=cond, nullspace_dim=null_dim)
    x = np.linalg.solve(A, b)
    x = x + np.linalg.solve(A, b - A @ x)
    return x


# ---------------------------------------------------------------------------
# Newton root finding


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norm: float


def newton_root(residual_fn: Callable[[np.ndarray], np.ndarray],
                jacobian_fn: Callable[[np.ndarray], np.ndarray],
                x0: np.ndarray, tol: float = 1e-10, max_iter: int = 50,
                max_halvings: int = 40) -> NewtonResult:
    """Newton's method with residual-norm line search by step halving.

    A proposed step is halved until the residual norm decreases (or drops
    below tol); non-finite residuals count as increases, which is how callers
    with restricted domains (for example a log of the stretch) push the
    iterate back inside. Terminates in exactly one iteration on linear
    systems.
    """
    x = np.array(x0, dtype=float)

    def norm(v):
        v = np.asarray(v)
        return float(np.max(np.abs(v))) if v.size else 0.0

    r = residual_fn(x)
    rnorm = norm(r)
    if not np.isfinite(rnorm):
        raise ConvergenceError(
            "Newton starting point is infeasible (non-finite residual)",
            residual_norm=rnorm, iterations=0)
    for it in range(1, max_iter + 1):
        if rnorm <= tol:
            return NewtonResult(x=x, iterations=it - 1, residual_norm=rnorm)
        J = jacobian_fn(x)
        try:
            step = solve_dense(J, -np.asarray(r, dtype=float))
        except RankDeficiencyError:
            raise
        alpha = 1.0
        for _ in range(max_halvings + 1):
            x_new = x + alpha * step
            try:
                r_new = residual_fn(x_new)
                rnorm_new = norm(r_new)
            except FloatingPointError:
                rnorm_new = np.inf
            if np.isfinite(rnorm_new) and (rnorm_new < rnorm or rnorm_new <= tol):
                break
            alpha *= 0.5
        else:
            raise ConvergenceError(
                f"Newton line search stalled at iteration {it} "
                f"(residual norm {rnorm:.3e})",
                residual_norm=rnorm, iterations=it)
        x, r, rnorm = x_new, r_new, rnorm_new
        if rnorm <= tol:
            return NewtonResult(x=x, iterations=it, residual_norm=rnorm)
    raise ConvergenceError(
        f"Newton did not reach tolerance {tol:.1e} in {max_iter} iterations "
        f"(final residual norm {rnorm:.3e})",
        residual_norm=rnorm, iterations=max_iter)


# ---------------------------------------------------------------------------
# BFGS


@dataclass
class BfgsResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    iterations: int
    converged: bool
    line_search_failed: bool
    fun_history: list = field(default_factory=list)


def bfgs_minimize(objective_fn: Callable[[np.ndarray], float],
                  gradient_fn: Callable[[np.ndarray], np.ndarray],
                  x0: np.ndarray, grad_tol: float = 1e-8,
                  max_iter: int = 500) -> BfgsResult:
    """BFGS with a backtracking Armijo line search (constant 1e-4).

    Maintains the inverse Hessian approximation. Accepted steps never
    increase the objective; a line search that cannot find a decrease returns
    the best iterate found so far with ``line_search_failed`` set instead of
    raising. Non-finite trial objective values are treated as rejections, so
    objectives may return inf to mark infeasible trial points.
    """
    c1 = 1e-4
    x = np.atleast_1d(np.array(x0, dtype=float))
    n = x.size
    f = float(objective_fn(x))
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    g = np.asarray(gradient_fn(x), dtype=float)
    H = np.eye(n)
    history = [f]
    first = True

    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= grad_tol:
            return BfgsResult(x=x, fun=f, grad_norm=gnorm, iterations=it - 1,
                              converged=True, line_search_failed=False,
                              fun_history=history)
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0.0:  # safeguard: fall back to steepest descent
            H = np.eye(n)
            p = -g
            slope = float(g @ p)
        alpha, ok = 1.0, False
        for _ in range(60):
            f_new = objective_fn(x + alpha * p)
            if np.isfinite(f_new) and f_new <= f + c1 * alpha * slope:
                ok = True
                break
            # quadratic interpolation when finite, plain halving otherwise
            if np.isfinite(f_new) and f_new > f + alpha * slope:
                denom = 2.0 * (f_new - f - alpha * slope)
                alpha_q = -slope * alpha * alpha / denom if denom > 0 else 0.5 * alpha
                alpha = min(0.5 * alpha, max(0.1 * alpha, alpha_q))
            else:
                alpha *= 0.5
        if not ok:
            return BfgsResult(x=x, fun=f, grad_norm=gnorm, iterations=it - 1,
                              converged=False, line_search_failed=True,
                              fun_history=history)
        s = alpha * p
        x_new = x + s
        f_new = float(objective_fn(x_new))
        g_new = np.asarray(gradient_fn(x_new), dtype=float)
        y = g_new - g
        sy = float(s @ y)
        if first and sy > 0.0:
            H *= sy / float(y @ y)
            first = False
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) \
                + rho * rho * float(y @ Hy) * np.outer(s, s) + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
        history.append(f)

    gnorm = float(np.max(np.abs(g)))
    return BfgsResult(x=x, fun=f, grad_norm=gnorm, iterations=max_iter,
                      converged=False, line_search_failed=False,
                      fun_history=history)


# ---------------------------------------------------------------------------
# ADAM


@dataclass
class AdamResult:
    x: np.ndarray
    fun: float
    steps: int
    stopped_early: bool
    stop_reason: str


def adam_minimize(objective_and_gradient_fn: Callable[[np.ndarray], tuple],
                  x0: np.ndarray, lr: float, steps: int,
                  beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                  stagnation_window: int = 500, stagnation_rtol: float = 1e-8,
                  callback: Callable[[int, np.ndarray, float], bool] | None = None
                  ) -> AdamResult:
    """Full-batch ADAM on a deterministic objective.

    Stops early when the objective changes by less than a relative
    ``stagnation_rtol`` over ``stagnation_window`` steps, or when the
    optional ``callback(step, x, loss)`` returns True (used for residual
    cutoffs). A non-finite loss raises DivergenceError with the step index.
    """
    x = np.array(x0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    window = []
    fun = np.nan
    for step in range(1, steps + 1):
        fun, grad = objective_and_gradient_fn(x)
        fun = float(fun)
        if not np.isfinite(fun):
            raise DivergenceError(
                f"objective became non-finite at step {step}", step=step)
        if callback is not None and callback(step, x, fun):
            return AdamResult(x=x, fun=fun, steps=step, stopped_early=True,
                              stop_reason="callback")
        window.append(fun)
        if len(window) > stagnation_window:
            ref = window.pop(0)
            if abs(fun - ref) <= stagnation_rtol * max(1.0, abs(ref)):
                return AdamResult(x=x, fun=fun, steps=step, stopped_early=True,
                                  stop_reason="stagnation")
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        mhat = m / (1.0 - beta1 ** step)
        vhat = v / (1.0 - beta2 ** step)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
    return AdamResult(x=x, fun=fun, steps=steps, stopped_early=False,
                      stop_reason="max_steps")


@dataclass
class LeastSquaresResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool


def levenberg_marquardt(residual_fn: Callable[[np.ndarray], np.ndarray],
                        jacobian_fn: Callable[[np.ndarray], np.ndarray],
                        x0: np.ndarray, weights: np.ndarray | None = None,
                        max_iter: int = 200, cost_target: float = 0.0,
                        mu0: float = 1e-2, max_rejects: int = 30
                        ) -> LeastSquaresResult:
    """Damped Gauss-Newton for weighted least squares sum_q w_q R_q(x)^2.

    jacobian_fn returns the (P, n) matrix dR/dx. The damping parameter
    grows tenfold on a rejected step and shrinks on acceptance, so the
    iteration falls back to scaled gradient descent far from a solution
    and approaches Gauss-Newton near one. Stops when the cost reaches
    ``cost_target`` (converged=True) or progress stalls (converged=False,
    best iterate returned).
    """
    x = np.array(x0, dtype=float)
    R = np.asarray(residual_fn(x), dtype=float)
    w = np.ones(R.shape[0]) if weights is None else np.asarray(weights)
    cost = float(w @ (R * R))
    mu = mu0
    it = 0
    for it in range(1, max_iter + 1):
        J = jacobian_fn(x)
        A = J.T @ (w[:, None] * J)
        g = J.T @ (w * R)
        scale = np.maximum(np.diag(A), 1e-12)
        accepted = False
        for _ in range(max_rejects):
            try:
                step = np.linalg.solve(A + mu * np.diag(scale), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            R_new = np.asarray(residual_fn(x + step), dtype=float)
            cost_new = float(w @ (R_new * R_new))
            if np.isfinite(cost_new) and cost_new < cost:
                x = x + step
                R, cost = R_new, cost_new
                mu = max(mu * 0.3, 1e-14)
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            return LeastSquaresResult(x=x, cost=cost, iterations=it,
                                      converged=cost <= cost_target)
        if cost <= cost_target:
            return LeastSquaresResult(x=x, cost=cost, iterations=it,
                                      converged=True)
    return LeastSquaresResult(x=x, cost=cost, iterations=it,
                              converged=cost <= cost_target)


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_gradient(fn: Callable[[np.ndarray], float],
                               x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite difference gradient, one coordinate at a time."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return g
