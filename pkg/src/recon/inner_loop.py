"""Inner solves: make the assumed physics honor the measurements.

For fixed physics parameters, the field coefficients and the localized
force magnitudes must together satisfy the discretized governing
equations and the measurement constraints. Linear problems reduce to one
square block solve; the inequality-constrained nonlinear bar runs Newton
on a complementarity system with slack variables; the network-discretized
2D problem minimizes a penalized squared residual.

Every solver returns an InnerSolution that carries, besides the solution
itself, the linear algebra needed later for parameter sensitivities: the
final Jacobian, the partial of the residual with respect to the physics
parameters, and the rows extracting force magnitudes from the unknowns.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraint_force import ConstraintForceSet, gram_matrix
from .discretization import DirichletEmbedding, SineBasis, init_network
from .numerics import (ConvergenceError, adam_minimize, levenberg_marquardt,
                       newton_root, solve_dense, split_unit_rule,
                       unit_square_rule)
from .problems import (Conductivity2DPhysics, HyperelasticPhysics,
                       LinearSourcePhysics, MeasurementSet)

SMOOTH_ABS_EPS = 1e-10


def _smooth_abs(m: np.ndarray) -> np.ndarray:
    """sqrt(m^2 + eps^2): differentiable magnitude used for sign-free
    nonnegative force variables."""
    return np.sqrt(m * m + SMOOTH_ABS_EPS ** 2)


@dataclass
class InnerSolution:
    """Field coefficients plus the forces that reconcile them with data.

    magnitudes holds the net force magnitude per measurement. For
    inequality-constrained solves, bound_magnitudes stacks the
    nonnegative magnitudes on the upper then lower measurement bounds
    and slacks the corresponding slack variables; both are empty for
    equality-constrained solves.
    """

    theta: np.ndarray
    magnitudes: np.ndarray
    bound_magnitudes: np.ndarray = field(
        default_factory=lambda: np.empty(0))
    slacks: np.ndarray = field(default_factory=lambda: np.empty(0))
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AssembledBlocks:
    """Quadrature-assembled matrices for the linear 1D problem.

    The stiffness block is stored positive definite; operator_sign
    records how it enters the governing equations (+1 when residuals are
    tested against second derivatives of the basis, -1 after integration
    by parts against the basis itself). source_matrix columns are the
    projections of each source component, force_matrix columns the
    projections of each localized force shape, and point_rows samples the
    basis at the measurement positions.
    """

    stiffness: np.ndarray
    operator_sign: float
    source_matrix: np.ndarray
    force_matrix: np.ndarray
    point_rows: np.ndarray
    point_values: np.ndarray
    loss_form: str

    @property
    def n_modes(self) -> int:
        return self.stiffness.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.point_rows.shape[0]


def assemble_linear(physics: LinearSourcePhysics, basis: SineBasis,
                    forces: ConstraintForceSet | None,
                    data: MeasurementSet | None,
                    loss_form: str | None = None) -> AssembledBlocks:
    """Assemble the linear-bar blocks for the requested loss form.

    Strong form tests the pointwise residual against basis second
    derivatives; weak and energy forms test against the basis after one
    integration by parts. Quadrature splits at the force-shape kinks so
    piecewise-polynomial entries are exact to rounding. data=None (the
    unconstrained limit) assembles empty point rows; forces=None means
    no force shapes.
    """
    form = loss_form if loss_form is not None else physics.loss_form
    if form not in ("strong", "weak", "energy"):
        raise ValueError(f"unknown loss form '{form}'")
    if forces is None:
        forces = ConstraintForceSet(np.empty(0))
    positions = np.empty(0) if data is None else data.positions
    values = np.empty(0) if data is None else np.asarray(data.values, float)
    rule = split_unit_rule(forces.quadrature_breakpoints())
    x, w = rule.nodes, rule.weights
    shape_values = forces.design(x)
    source_values = physics.source_design(x)
    if form == "strong":
        test = basis.design(x, deriv=2)
        stiffness = test.T @ (w[:, None] * test)
        sign = 1.0
    else:
        dphi = basis.design(x, deriv=1)
        stiffness = dphi.T @ (w[:, None] * dphi)
        test = basis.design(x, deriv=0)
        sign = -1.0
    source_matrix = test.T @ (w[:, None] * source_values)
    force_matrix = test.T @ (w[:, None] * shape_values)
    point_rows = basis.design(positions, deriv=0)
    return AssembledBlocks(stiffness=stiffness, operator_sign=sign,
                           source_matrix=source_matrix,
                           force_matrix=force_matrix, point_rows=point_rows,
                           point_values=values, loss_form=form)


def solve_linear_equality(blocks: AssembledBlocks, eps) -> InnerSolution:
    """One square solve: governing equations plus exact point matching.

    With no measurements this degenerates to the plain Galerkin solve.
    A singular block matrix signals non-identifiability and raises a
    rank-deficiency error rather than returning garbage.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    n, c = blocks.n_modes, blocks.n_constraints
    A = np.zeros((n + c, n + c))
    A[:n, :n] = blocks.operator_sign * blocks.stiffness
    if c:
        A[:n, n:] = blocks.force_matrix
        A[n:, :n] = blocks.point_rows
    load = blocks.source_matrix @ eps
    rhs = np.concatenate([-load, blocks.point_values])
    eps_jacobian = np.vstack([blocks.source_matrix, np.zeros((c, eps.size))])
    unknowns = solve_dense(A, rhs)
    residual = float(np.max(np.abs(A @ unknowns - rhs)))
    extraction = np.zeros((c, n + c))
    extraction[:, n:] = np.eye(c)
    return InnerSolution(
        theta=unknowns[:n], magnitudes=unknowns[n:],
        diagnostics={"iterations": 1, "residual_norm": residual,
                     "jacobian": A, "eps_jacobian": eps_jacobian,
                     "magnitude_rows": extraction,
                     "rhs_values": rhs})


def solve_energy_equality(blocks: AssembledBlocks, eps) -> InnerSolution:
    """Constrained minimum of the quadratic potential energy.

    Stationarity of 1/2 theta' K theta - eps' F' theta subject to exact
    point matching produces classical point-force multipliers; the
    magnitudes field holds those multipliers directly.
    """
    if blocks.loss_form == "strong":
        raise ValueError("the energy solve needs weak/energy assembly")
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    n, c = blocks.n_modes, blocks.n_constraints
    A = np.zeros((n + c, n + c))
    A[:n, :n] = blocks.stiffness
    A[:n, n:] = blocks.point_rows.T
    A[n:, :n] = blocks.point_rows
    rhs = np.concatenate([blocks.source_matrix @ eps, blocks.point_values])
    unknowns = solve_dense(A, rhs)
    residual = float(np.max(np.abs(A @ unknowns - rhs)))
    eps_jacobian = np.vstack([-blocks.source_matrix,
                              np.zeros((c, eps.size))])
    extraction = np.zeros((c, n + c))
    extraction[:, n:] = np.eye(c)
    return InnerSolution(
        theta=unknowns[:n], magnitudes=unknowns[n:],
        diagnostics={"iterations": 1, "residual_norm": residual,
                     "jacobian": A, "eps_jacobian": eps_jacobian,
                     "magnitude_rows": extraction,
                     "rhs_values": rhs})


# ---------------------------------------------------------------------------
# inequality-constrained Newton solve


@dataclass(frozen=True)
class _WeakPieces:
    """Shared weak-form quadrature assembly for the 1D Newton solves."""

    phi: np.ndarray
    dphi: np.ndarray
    weights: np.ndarray
    load_matrix: np.ndarray      # N x P, columns = source components
    force_weak: np.ndarray       # N x C, columns = force shapes
    point_rows: np.ndarray       # C x N


def _weak_pieces(physics, basis: SineBasis, forces: ConstraintForceSet,
                 data: MeasurementSet) -> _WeakPieces:
    rule = split_unit_rule(forces.quadrature_breakpoints())
    x, w = rule.nodes, rule.weights
    phi = basis.design(x, deriv=0)
    dphi = basis.design(x, deriv=1)
    load_matrix = phi.T @ (w[:, None] * physics.source_design(x))
    force_weak = phi.T @ (w[:, None] * forces.design(x))
    point_rows = basis.design(data.positions, deriv=0)
    return _WeakPieces(phi=phi, dphi=dphi, weights=w,
                       load_matrix=load_matrix, force_weak=force_weak,
                       point_rows=point_rows)


def _physics_rows(physics, pieces: _WeakPieces, theta, net_magnitudes, eps):
    """Weak residual of the governing equations, one row per basis mode.

    Returns None when a hyperelastic state leaves the trust region of
    the material law (stretch at or below 0.05), so Newton's line search
    backs off instead of evaluating the stress there.
    """
    forced_load = (pieces.load_matrix @ eps
                   + pieces.force_weak @ net_magnitudes)
    if isinstance(physics, HyperelasticPhysics):
        strain = pieces.dphi @ theta
        if np.min(1.0 + strain) <= 0.05:
            return None
        stress = physics.stress(strain)
        return -pieces.dphi.T @ (pieces.weights * stress) + forced_load
    strain = pieces.dphi @ theta
    return -pieces.dphi.T @ (pieces.weights * strain) + forced_load


def _physics_jacobian_theta(physics, pieces: _WeakPieces, theta):
    if isinstance(physics, HyperelasticPhysics):
        slope = physics.stress_slope(pieces.dphi @ theta)
    else:
        slope = np.ones(pieces.weights.shape[0])
    return -pieces.dphi.T @ ((pieces.weights * slope)[:, None] * pieces.dphi)


def _equality_warm_start(physics, pieces: _WeakPieces, data: MeasurementSet,
                         eps, theta0=None) -> tuple[np.ndarray, np.ndarray]:
    """Newton solve with the measurements as exact equalities.

    Gives the inequality solve a starting point whose constraint forces
    already have the right scale and sign pattern.
    """
    n = pieces.phi.shape[1]
    c = pieces.point_rows.shape[0]

    def residual_fn(unknowns):
        theta, net = unknowns[:n], unknowns[n:]
        rows = _physics_rows(physics, pieces, theta, net, eps)
        if rows is None:
            return np.full(unknowns.shape, np.inf)
        return np.concatenate([rows, pieces.point_rows @ theta - data.values])

    def jacobian_fn(unknowns):
        theta = unknowns[:n]
        J = np.zeros((n + c, n + c))
        J[:n, :n] = _physics_jacobian_theta(physics, pieces, theta)
        J[:n, n:] = pieces.force_weak
        J[n:, :n] = pieces.point_rows
        return J

    start = np.zeros(n + c)
    if theta0 is not None:
        start[:n] = theta0
    result = newton_root(residual_fn, jacobian_fn, start)
    return result.x[:n], result.x[n:]


def solve_nonlinear_kkt(physics, basis: SineBasis,
                        forces: ConstraintForceSet, data: MeasurementSet,
                        eps, warm_start: InnerSolution | None = None,
                        tol: float = 1e-9, max_retries: int = 3
                        ) -> InnerSolution:
    """Newton on the optimality system of band-constrained reconstruction.

    Measurements enter as two one-sided bounds per point (within
    confidence * noise half-width of the measured value). Each bound
    carries a nonnegative force magnitude, kept sign-free through a
    smoothed absolute value, and a slack variable squaring away the
    inequality. Rows: weak physics residual with the net force applied,
    bound feasibility h + s*s, and complementarity |mu| * s.

    Unknown layout: [theta (N), mu_upper (C), mu_lower (C),
    s_upper (C), s_lower (C)].
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    pieces = _weak_pieces(physics, basis, forces, data)
    n = pieces.phi.shape[1]
    c = data.count
    band = data.band_half_width
    G, v = pieces.point_rows, data.values

    def unpack(u):
        return (u[:n], u[n:n + c], u[n + c:n + 2 * c],
                u[n + 2 * c:n + 3 * c], u[n + 3 * c:])

    def residual_fn(u):
        theta, mu_up, mu_lo, s_up, s_lo = unpack(u)
        net = _smooth_abs(mu_lo) - _smooth_abs(mu_up)
        rows = _physics_rows(physics, pieces, theta, net, eps)
        if rows is None:
            return np.full(u.shape, np.inf)
        values = G @ theta
        h_up = values - v - band
        h_lo = v - band - values
        return np.concatenate([
            rows,
            h_up + s_up * s_up,
            h_lo + s_lo * s_lo,
            _smooth_abs(mu_up) * s_up,
            _smooth_abs(mu_lo) * s_lo,
        ])

    def jacobian_fn(u):
        theta, mu_up, mu_lo, s_up, s_lo = unpack(u)
        abs_up, abs_lo = _smooth_abs(mu_up), _smooth_abs(mu_lo)
        sign_up, sign_lo = mu_up / abs_up, mu_lo / abs_lo
        J = np.zeros((n + 4 * c, n + 4 * c))
        J[:n, :n] = _physics_jacobian_theta(physics, pieces, theta)
        J[:n, n:n + c] = -pieces.force_weak * sign_up[None, :]
        J[:n, n + c:n + 2 * c] = pieces.force_weak * sign_lo[None, :]
        r = n
        J[r:r + c, :n] = G
        J[r:r + c, n + 2 * c:n + 3 * c] = np.diag(2.0 * s_up)
        r += c
        J[r:r + c, :n] = -G
        J[r:r + c, n + 3 * c:] = np.diag(2.0 * s_lo)
        r += c
        J[r:r + c, n:n + c] = np.diag(sign_up * s_up)
        J[r:r + c, n + 2 * c:n + 3 * c] = np.diag(abs_up)
        r += c
        J[r:r + c, n + c:n + 2 * c] = np.diag(sign_lo * s_lo)
        J[r:r + c, n + 3 * c:] = np.diag(abs_lo)
        return J

    theta0 = warm_start.theta if warm_start is not None else None
    theta_eq, net_eq = _equality_warm_start(physics, pieces, data, eps,
                                            theta0)
    floor = 1e-6
    mu_up0 = np.where(net_eq < 0.0, np.maximum(-net_eq, floor), floor)
    mu_lo0 = np.where(net_eq > 0.0, np.maximum(net_eq, floor), floor)
    s0 = np.full(c, np.sqrt(max(band, 1e-6)))
    start = np.concatenate([theta_eq, mu_up0, mu_lo0, s0, s0])

    rng = np.random.default_rng(0)
    attempt_start = start
    last_error: Exception | None = None
    for attempt in range(max_retries + 1):
        try:
            result = newton_root(residual_fn, jacobian_fn, attempt_start,
                                 tol=tol, max_iter=200)
            break
        except ConvergenceError as err:
            last_error = err
            # perturb only forces and slacks: mode-coefficient noise gets
            # amplified into strain and can leave the material's domain
            attempt_start = start.copy()
            tail = start[n:]
            attempt_start[n:] = tail + 1e-2 * (1.0 + np.abs(tail)) \
                * rng.standard_normal(tail.shape)
    else:
        raise ConvergenceError(
            f"inequality Newton failed after {max_retries + 1} attempts: "
            f"{last_error}")

    theta, mu_up, mu_lo, s_up, s_lo = unpack(result.x)
    abs_up, abs_lo = _smooth_abs(mu_up), _smooth_abs(mu_lo)
    net = abs_lo - abs_up
    bound = np.concatenate([abs_up, abs_lo])
    slacks = np.concatenate([s_up, s_lo])
    active = bound > 1e-6

    # rows extracting d(net)/d(unknowns) for the sensitivity chain
    extraction = np.zeros((c, n + 4 * c))
    extraction[:, n:n + c] = np.diag(-mu_up / abs_up)
    extraction[:, n + c:n + 2 * c] = np.diag(mu_lo / abs_lo)
    eps_jacobian = np.zeros((n + 4 * c, eps.size))
    eps_jacobian[:n, :] = pieces.load_matrix

    return InnerSolution(
        theta=theta, magnitudes=net, bound_magnitudes=bound, slacks=slacks,
        diagnostics={"iterations": result.iterations,
                     "residual_norm": result.residual_norm,
                     "active_set": active,
                     "retries": attempt,
                     "jacobian": jacobian_fn(result.x),
                     "eps_jacobian": eps_jacobian,
                     "magnitude_rows": extraction})


# ---------------------------------------------------------------------------
# penalized network solve (2D)


def solve_penalized_network(physics: Conductivity2DPhysics,
                            embedding: DirichletEmbedding,
                            forces: ConstraintForceSet | None,
                            data: MeasurementSet, eps,
                            penalty_weight: float = 1000.0,
                            quad=None, seed: int = 0,
                            warm_start: InnerSolution | None = None,
                            warmup_steps: int = 2000,
                            warmup_lr: float = 1e-2,
                            max_refine: int = 300,
                            cost_target: float = 0.0) -> InnerSolution:
    """Minimize the squared physics residual plus a data-mismatch penalty.

    The decision variables are the network parameters and the force
    magnitudes jointly. The force magnitudes get a closed-form start from
    the current residual (a small least-squares fit), a gradient warmup
    moves the network into a reasonable basin, and damped Gauss-Newton
    refinement finishes; warm starts skip the warmup entirely.
    """
    if penalty_weight <= 0.0:
        raise ValueError("penalty weight must be positive")
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    rule = quad if quad is not None else unit_square_rule()
    X, w = rule.nodes, rule.weights
    c = forces.n_shapes if forces is not None else 0
    shape_values = forces.design(X) if c else np.zeros((X.shape[0], 0))
    n = embedding.n_params
    positions = np.atleast_2d(data.positions)

    def fields(theta):
        return (embedding.value_grad_lap(X, theta),
                embedding.value_grad_lap(positions, theta))

    def residual_vector(u):
        ev, ev_pts = fields(u[:n])
        combined = physics.residual(ev, eps) + shape_values @ u[n:]
        mismatch = ev_pts.w - data.values
        return np.concatenate([combined, np.sqrt(penalty_weight) * mismatch])

    stacked_weights = np.concatenate([w, np.ones(data.count)])

    def jacobian(u):
        theta = u[:n]
        ev, ev_pts = fields(theta)
        alpha = physics.conductivity(X, eps)
        grad_alpha = physics.conductivity_grad(X, eps)
        top_theta = embedding.backprop_per_point(theta, ev, bgrad=grad_alpha,
                                                 blap=alpha)
        bottom_theta = np.sqrt(penalty_weight) * embedding.backprop_per_point(
            theta, ev_pts, bw=np.ones(data.count))
        top = np.hstack([top_theta, shape_values])
        bottom = np.hstack([bottom_theta, np.zeros((data.count, c))])
        return np.vstack([top, bottom])

    if warm_start is not None:
        theta = np.array(warm_start.theta, dtype=float)
        magnitudes = np.array(warm_start.magnitudes, dtype=float) \
            if warm_start.magnitudes.size == c else np.zeros(c)
        start = np.concatenate([theta, magnitudes])
    else:
        theta = init_network(embedding.network.widths, seed=seed)
        start = np.concatenate([theta, np.zeros(c)])

    if c:
        # closed-form magnitude start: fit the shapes to the current
        # physics residual in the quadrature inner product
        ev = embedding.value_grad_lap(X, start[:n])
        r0 = physics.residual(ev, eps)
        overlap = shape_values.T @ (w[:, None] * shape_values)
        target = -shape_values.T @ (w * r0)
        start[n:] = np.linalg.solve(
            overlap + 1e-12 * np.eye(c), target)

    if warm_start is None and warmup_steps > 0:
        # cold starts ramp the data weight a decade at a time: the full
        # penalty on a fresh network saturates the tanh units within a few
        # steps and gradient descent never recovers from the dead net
        def stage_objective(stage_weight):
            def loss_and_grad(u):
                ev, ev_pts = fields(u[:n])
                combined = physics.residual(ev, eps) + shape_values @ u[n:]
                mismatch = ev_pts.w - data.values
                loss = 0.5 * float(w @ (combined * combined)) \
                    + 0.5 * stage_weight * float(mismatch @ mismatch)
                weighted = w * combined
                alpha = physics.conductivity(X, eps)
                grad_alpha = physics.conductivity_grad(X, eps)
                grad_theta = embedding.backprop(
                    u[:n], ev, bgrad=grad_alpha * weighted[:, None],
                    blap=alpha * weighted)
                grad_theta += stage_weight * embedding.backprop(
                    u[:n], ev_pts, bw=mismatch)
                grad_mag = shape_values.T @ weighted
                return loss, np.concatenate([grad_theta, grad_mag])
            return loss_and_grad

        decades = int(np.ceil(np.log10(max(penalty_weight, 1.0))))
        stages = sorted({min(penalty_weight, 10.0 ** k)
                         for k in range(decades + 1)})
        for stage_weight in stages:
            start = adam_minimize(stage_objective(stage_weight), start,
                                  lr=warmup_lr, steps=warmup_steps).x

    refined = levenberg_marquardt(residual_vector, jacobian, start,
                                  weights=stacked_weights,
                                  max_iter=max_refine,
                                  cost_target=cost_target)

    theta, magnitudes = refined.x[:n], refined.x[n:]
    ev, ev_pts = fields(theta)
    combined = physics.residual(ev, eps) + shape_values @ magnitudes
    residual_loss = float(w @ (combined * combined))
    violations = np.abs(ev_pts.w - data.values)
    return InnerSolution(
        theta=theta, magnitudes=magnitudes,
        diagnostics={"iterations": refined.iterations,
                     "residual_loss": residual_loss,
                     "max_violation": float(np.max(violations)),
                     "penalty_term": float(np.sum(
                         (ev_pts.w - data.values) ** 2)),
                     "combined_loss": 0.5 * residual_loss
                     + penalty_weight * float(np.sum(violations ** 2)),
                     "cost": refined.cost})
