"""Outer loop: pick physics parameters that minimize the total force.

The inner solvers leave behind their final Jacobian, the explicit
parameter partials, and the rows that extract force magnitudes from the
unknown vector. Differentiating the solved system implicitly then costs
one dense solve per parameter, and the chain rule turns magnitude
sensitivities into the gradient of the total-force objective. A BFGS
loop over the parameters closes the method for every 1D path.

The network-discretized 2D path has no exact stationarity to
differentiate, so its outer gradient is a centered finite difference
over warm-started inner re-solves instead.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .constraint_force import gram_matrix, total_force
from .inner_loop import (InnerSolution, assemble_linear,
                         solve_linear_equality, solve_energy_equality,
                         solve_nonlinear_kkt, solve_penalized_network)
from .numerics import (ConvergenceError, DivergenceError, RankDeficiencyError,
                       bfgs_minimize, solve_dense)
from .problems import (Conductivity2DPhysics, HyperelasticPhysics,
                       LinearSourcePhysics, NonPhysicalDeformationError,
                       ReconstructionProblem)

INNER_FAILURE_LIMIT = 5

_INNER_ERRORS = (ConvergenceError, DivergenceError, RankDeficiencyError,
                 NonPhysicalDeformationError)


@dataclass(frozen=True)
class SensitivityBundle:
    """Derivatives of an inner solution with respect to the parameters.

    theta_derivatives: (N, n_eps) field-coefficient sensitivities.
    magnitude_derivatives: (C, n_eps) net force-magnitude sensitivities.
    explicit_rows: (n_unknowns, n_eps) partials of the solved residual at
        frozen unknowns.
    jacobian: the inner solver's final system Jacobian, shared rather
        than reassembled.
    """

    theta_derivatives: np.ndarray
    magnitude_derivatives: np.ndarray
    explicit_rows: np.ndarray
    jacobian: np.ndarray


def sensitivities(inner: InnerSolution) -> SensitivityBundle:
    """Implicit differentiation of a converged inner solve.

    Solves J X = -dR/deps for the unknown-vector sensitivities, then
    extracts coefficient and magnitude rows. A singular Jacobian
    (degenerate active set or non-identifiable system) surfaces as a
    rank-deficiency error from the dense solve.
    """
    diag = inner.diagnostics
    missing = [key for key in ("jacobian", "eps_jacobian", "magnitude_rows")
               if key not in diag]
    if missing:
        raise ValueError(
            f"inner solution lacks {missing}; iterative network solves "
            "carry no exact stationarity, use finite differences instead")
    jacobian = diag["jacobian"]
    explicit = diag["eps_jacobian"]
    n = inner.theta.size
    if explicit.shape[1] == 0:
        empty = np.zeros((0, 0))
        return SensitivityBundle(
            theta_derivatives=np.zeros((n, 0)),
            magnitude_derivatives=np.zeros((inner.magnitudes.size, 0)),
            explicit_rows=explicit, jacobian=jacobian)
    unknown_derivatives = solve_dense(jacobian, -explicit)
    return SensitivityBundle(
        theta_derivatives=unknown_derivatives[:n],
        magnitude_derivatives=diag["magnitude_rows"] @ unknown_derivatives,
        explicit_rows=explicit, jacobian=jacobian)


def force_gradient(inner: InnerSolution, gram: np.ndarray,
                   bundle: SensitivityBundle | None = None) -> np.ndarray:
    """Gradient of z = 1/2 m' H m with respect to the physics parameters."""
    if bundle is None:
        bundle = sensitivities(inner)
    return (gram @ inner.magnitudes) @ bundle.magnitude_derivatives


@dataclass
class EcfmResult:
    """Outcome of an outer minimization (or a single fixed-eps solve)."""

    method: str
    loss_form: str
    epsilon: np.ndarray
    total_force: float
    magnitudes: np.ndarray
    theta: np.ndarray
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "method": self.method,
            "loss_form": self.loss_form,
            "epsilon": [float(e) for e in np.atleast_1d(self.epsilon)],
            "total_force": float(self.total_force),
            "magnitudes": [float(m) for m in np.atleast_1d(self.magnitudes)],
            "theta": [float(t) for t in np.atleast_1d(self.theta)],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "diagnostics": jsonable(self.diagnostics),
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def jsonable(value):
    """Recursively convert numpy containers into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


class _InnerFailureAbort(RuntimeError):
    """Raised internally when too many consecutive trial solves fail."""


class _InnerDriver:
    """Caches inner solves so objective and gradient share one solve.

    Counts consecutive inner failures; the outer loop treats a failed
    trial point as a line-search rejection (objective +inf), and after
    INNER_FAILURE_LIMIT rejections in a row the whole minimization
    aborts with the best solution seen so far.
    """

    def __init__(self, solve_fn, gram):
        self.solve_fn = solve_fn
        self.gram = gram
        self._key = None
        self._solution = None
        self.failures = 0
        self.best = None  # (z, eps, solution)
        self.trace = []

    def solution(self, eps) -> InnerSolution:
        key = np.asarray(eps, dtype=float).tobytes()
        if key != self._key:
            self._solution = self.solve_fn(np.atleast_1d(eps))
            self._key = key
        return self._solution

    def objective(self, eps) -> float:
        try:
            inner = self.solution(eps)
        except _INNER_ERRORS:
            self._key = None
            self.failures += 1
            if self.failures >= INNER_FAILURE_LIMIT:
                raise _InnerFailureAbort()
            return np.inf
        self.failures = 0
        z = total_force(self.gram, inner.magnitudes)
        self.trace.append((np.atleast_1d(eps).copy(), z))
        if self.best is None or z < self.best[0]:
            self.best = (z, np.atleast_1d(eps).copy(), inner)
        return z

    def gradient(self, eps) -> np.ndarray:
        inner = self.solution(eps)
        return force_gradient(inner, self.gram)


def _result_from_driver(driver, method, loss_form, outcome,
                        extra=None) -> EcfmResult:
    z, eps, inner = driver.best
    diagnostics = {
        "inner": {k: v for k, v in inner.diagnostics.items()
                  if np.isscalar(v) or isinstance(v, (bool, int, float))},
        "trace": [(e.tolist(), float(val)) for e, val in driver.trace],
        "grad_norm": outcome.get("grad_norm"),
    }
    if extra:
        diagnostics.update(extra)
    return EcfmResult(
        method=method, loss_form=loss_form, epsilon=eps, total_force=z,
        magnitudes=inner.magnitudes, theta=inner.theta,
        iterations=outcome.get("iterations", 0),
        converged=outcome.get("converged", False),
        diagnostics=diagnostics)


def _run_outer(driver, eps0, grad_tol, max_iter, method, loss_form,
               extra=None) -> EcfmResult:
    eps0 = np.atleast_1d(np.asarray(eps0, dtype=float))
    if not np.isfinite(driver.objective(eps0)):
        raise ConvergenceError(
            "inner solve failed at the starting parameters; "
            "there is no best-so-far result to fall back on")
    try:
        res = bfgs_minimize(driver.objective, driver.gradient, eps0,
                            grad_tol=grad_tol, max_iter=max_iter)
        outcome = {"iterations": res.iterations, "converged": res.converged,
                   "grad_norm": res.grad_norm}
        if res.line_search_failed:
            outcome["aborted"] = "line-search"
    except _InnerFailureAbort:
        outcome = {"iterations": len(driver.trace), "converged": False,
                   "grad_norm": None, "aborted": "inner-failures"}
    extra = dict(extra or {})
    if "aborted" in outcome:
        extra["aborted"] = outcome["aborted"]
    return _result_from_driver(driver, method, loss_form, outcome, extra)


def _unit_norm_total_force(forces, gram, magnitudes) -> float:
    """z recomputed with every shape rescaled to unit L2 norm.

    The magnitudes rescale inversely, so this is the same number as the
    raw-convention z; recording both makes the invariance explicit in
    the output rather than a claim.
    """
    norms = forces.norms()
    scaled = norms * magnitudes
    gram_unit = gram / np.outer(norms, norms)
    return float(0.5 * scaled @ (gram_unit @ scaled))


def ecfm_minimize(problem: ReconstructionProblem, eps0=None,
                  grad_tol: float | None = None, max_iter: int | None = None,
                  **inner_options) -> EcfmResult:
    """Minimize the total constraint force over the physics parameters.

    Dispatches on the problem's physics and loss form: linear 1D
    problems re-solve one block system per trial point, the band-
    constrained bar runs the complementarity Newton solve with warm
    starts, and the 2D network path uses finite-difference gradients
    over warm-started re-solves. eps0 defaults to zero (no prior
    source).
    """
    physics = problem.physics
    if isinstance(physics, Conductivity2DPhysics) \
            or problem.loss_form == "network":
        network_args = dict(inner_options)
        if grad_tol is not None:
            network_args["grad_tol"] = grad_tol
        if max_iter is not None:
            network_args["max_iter"] = max_iter
        return _network_minimize(problem, eps0, **network_args)

    n_eps = physics.n_params
    eps0 = np.zeros(n_eps) if eps0 is None else \
        np.atleast_1d(np.asarray(eps0, dtype=float))
    max_iter = 200 if max_iter is None else max_iter

    if problem.data is None:
        # nothing to reconcile: the objective is identically zero
        blocks = assemble_linear(physics, problem.discretization,
                                 None, None, loss_form=problem.loss_form)
        inner = solve_linear_equality(blocks, eps0)
        return EcfmResult(
            method="ecfm", loss_form=problem.loss_form, epsilon=eps0,
            total_force=0.0, magnitudes=inner.magnitudes, theta=inner.theta,
            iterations=0, converged=True,
            diagnostics={"note": "no measurements, objective identically 0"})

    if problem.forces is None:
        raise ValueError(
            "measurements but no force shapes: there are no magnitudes to "
            "solve for; give the problem a ConstraintForceSet matching the "
            "measurement count")

    gram = gram_matrix(problem.forces)

    if isinstance(physics, HyperelasticPhysics):
        state = {"warm": None}

        def solve_fn(eps):
            inner = solve_nonlinear_kkt(physics, problem.discretization,
                                        problem.forces, problem.data, eps,
                                        warm_start=state["warm"],
                                        **inner_options)
            state["warm"] = inner
            return inner

        driver = _InnerDriver(solve_fn, gram)
        tol = 1e-6 if grad_tol is None else grad_tol
    else:
        if not isinstance(physics, LinearSourcePhysics):
            raise TypeError(
                f"no outer path for physics {type(physics).__name__}")
        blocks = assemble_linear(physics, problem.discretization,
                                 problem.forces, problem.data,
                                 loss_form=problem.loss_form)
        driver = _InnerDriver(lambda eps: solve_linear_equality(blocks, eps),
                              gram)
        tol = 1e-7 if grad_tol is None else grad_tol

    result = _run_outer(driver, eps0, tol, max_iter, "ecfm",
                        problem.loss_form)
    result.diagnostics["z_unit_norm_shapes"] = _unit_norm_total_force(
        problem.forces, gram, result.magnitudes)
    return result


def energy_mcf_minimize(problem: ReconstructionProblem, eps0=None,
                        grad_tol: float = 1e-8,
                        max_iter: int = 200) -> EcfmResult:
    """Minimum-constraint-force outer loop on the energy inner solve.

    The inner problem makes the quadratic potential energy stationary
    subject to exact point matching, so the multipliers are point
    forces; the outer loop minimizes half their squared norm. With zero
    constraints the objective vanishes identically and eps0 is returned
    unchanged.
    """
    physics = problem.physics
    if not isinstance(physics, LinearSourcePhysics):
        raise TypeError("the energy path needs a linear source family")
    eps0 = np.zeros(physics.n_params) if eps0 is None else \
        np.atleast_1d(np.asarray(eps0, dtype=float))
    blocks = assemble_linear(physics, problem.discretization,
                             problem.forces, problem.data,
                             loss_form="energy")
    if problem.data is None:
        inner = solve_energy_equality(blocks, eps0)
        return EcfmResult(
            method="energy-mcf", loss_form="energy", epsilon=eps0,
            total_force=0.0, magnitudes=inner.magnitudes, theta=inner.theta,
            iterations=0, converged=True,
            diagnostics={"note": "no constraints, objective identically 0"})
    gram = np.eye(problem.data.count)
    driver = _InnerDriver(lambda eps: solve_energy_equality(blocks, eps),
                          gram)
    return _run_outer(driver, eps0, grad_tol, max_iter, "energy-mcf",
                      "energy")


# ---------------------------------------------------------------------------
# network path: finite-difference outer loop


def _network_minimize(problem: ReconstructionProblem, eps0,
                      fd_step: float = 1e-2, grad_tol: float = 1.0,
                      max_iter: int = 12, seed: int = 0,
                      penalty_weight: float = 1000.0,
                      probe_refine: int = 300,
                      final_refine: int = 6000,
                      final_cost_target: float = 4.5e-3,
                      **inner_options) -> EcfmResult:
    """Scalar outer minimization for the network-discretized problem.

    A cold solve at eps0 anchors everything; each trial parameter gets a
    short warm-started re-solve, and the outer gradient is a centered
    difference whose two legs share the anchor, so warm-start bias
    largely cancels. The accepted iterate's solution becomes the new
    anchor. A final long re-solve at the minimizer drives the combined
    objective down to reporting quality.
    """
    physics = problem.physics
    eps0 = np.atleast_1d(np.asarray(
        0.5 if eps0 is None else eps0, dtype=float))
    if eps0.size != 1:
        raise ValueError("the network outer loop is scalar")
    gram = gram_matrix(problem.forces)
    embedding = problem.discretization
    base_refine = inner_options.pop("base_refine", 800)

    anchor = solve_penalized_network(
        physics, embedding, problem.forces, problem.data, eps0,
        penalty_weight=penalty_weight, seed=seed,
        max_refine=base_refine, **inner_options)
    state = {"anchor": anchor}
    cache: dict[bytes, InnerSolution] = {}
    trace = []

    def warm_solve(eps, refine=probe_refine) -> InnerSolution:
        key = np.asarray(eps, dtype=float).tobytes()
        if key not in cache:
            cache[key] = solve_penalized_network(
                physics, embedding, problem.forces, problem.data, eps,
                penalty_weight=penalty_weight, warm_start=state["anchor"],
                max_refine=refine, **inner_options)
        return cache[key]

    def z_of(inner: InnerSolution) -> float:
        return total_force(gram, inner.magnitudes)

    def objective(eps) -> float:
        z = z_of(warm_solve(eps))
        trace.append((float(eps[0]), z))
        return z

    def gradient(eps) -> np.ndarray:
        # re-anchor at the accepted iterate, then difference two legs that
        # share it
        state["anchor"] = warm_solve(eps)
        cache.clear()
        cache[np.asarray(eps, dtype=float).tobytes()] = state["anchor"]
        up = z_of(warm_solve(eps + fd_step))
        down = z_of(warm_solve(eps - fd_step))
        return np.array([(up - down) / (2.0 * fd_step)])

    res = bfgs_minimize(objective, gradient, eps0, grad_tol=grad_tol,
                        max_iter=max_iter)
    final = solve_penalized_network(
        physics, embedding, problem.forces, problem.data, res.x,
        penalty_weight=penalty_weight, warm_start=state["anchor"],
        max_refine=final_refine, cost_target=final_cost_target,
        **inner_options)
    z_final = z_of(final)
    return EcfmResult(
        method="ecfm", loss_form="network", epsilon=np.atleast_1d(res.x),
        total_force=z_final, magnitudes=final.magnitudes, theta=final.theta,
        iterations=res.iterations, converged=res.converged,
        diagnostics={
            "inner": {k: v for k, v in final.diagnostics.items()
                      if np.isscalar(v)},
            "trace": trace,
            "grad_norm": res.grad_norm,
            "seed": seed,
            "penalty_weight": penalty_weight,
            "z_unit_norm_shapes": _unit_norm_total_force(
                problem.forces, gram, final.magnitudes),
        })
