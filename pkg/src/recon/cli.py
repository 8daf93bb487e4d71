"""Configuration-driven experiment runner.

Three operations on JSON configs:

    recon run <config>       one reconstruction into one output directory
    recon sweep <config>     one entry per value of a single list-valued axis
    recon compare <a> <b>..  pairwise field distances between finished runs

Outputs are plain files. ``run`` writes result.json (the solver outcome),
reconstruction.csv (the field on a fixed plotting grid) and metrics.csv
(one summary row). ``sweep`` writes a run-shaped subdirectory per entry
plus an aggregated top-level metrics.csv. ``compare`` writes
comparison.csv. Identical configs produce bit-identical outputs; every
random draw is seeded explicitly. docs/config.md documents the schema
key by key.

Exit codes: 0 on success, 2 when a solver fails, 3 on a config error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .baselines import (PenaltyConfig, constrained_loss_scan,
                        ecfm_residual_field, lagrange_strongform_solve,
                        pinn_penalty_solve, pinn_residual_field,
                        recover_advection)
from .constraint_force import FAMILIES, gram_matrix, total_force
from .discretization import DirichletEmbedding, SineBasis, TanhNetwork
from .inner_loop import (assemble_linear, solve_energy_equality,
                         solve_penalized_network)
from .numerics import (ConvergenceError, DivergenceError,
                       RankDeficiencyError, split_unit_rule,
                       unit_square_rule)
from .problems import (Conductivity2DPhysics, HyperelasticPhysics,
                       LinearSourcePhysics, MeasurementSet,
                       NonPhysicalDeformationError, ReconstructionProblem,
                       advection_diffusion_2d, hyperelastic_bar, linear_bar,
                       reference_solution, sample_measurements,
                       uniform_interior_grid)
from .sensitivity_outer import (EcfmResult, ecfm_minimize,
                                energy_mcf_minimize, jsonable)


class ConfigError(ValueError):
    """The config file cannot be turned into a well-posed experiment."""


PROBLEMS = ("bar-linear", "bar-hyperelastic", "heat-2d", "custom")
METHODS = ("ecfm", "pinn-penalty", "lagrange", "energy-mcf", "loss-scan")

TOP_KEYS = {"description", "problem", "method", "loss_form", "truth",
            "basis", "forces", "measurements", "physics", "solver",
            "epsilon_values", "method_overrides", "output_dir"}
SOLVER_KEYS = {"seed", "eps0", "fixed_epsilon", "grad_tol", "max_iter",
               "lambda_d", "fit_epsilon", "warmup_steps", "warmup_lr",
               "max_refine", "penalty_weight", "fd_step", "probe_refine",
               "final_refine", "base_refine", "final_cost_target"}
# keys consumed only by the 2D network solvers; rejected for 1D problems
NETWORK_ONLY_KEYS = {"warmup_steps", "warmup_lr", "max_refine",
                     "penalty_weight", "fd_step", "probe_refine",
                     "final_refine", "base_refine", "final_cost_target"}

SOLVER_FAILURES = (ConvergenceError, DivergenceError, RankDeficiencyError,
                   NonPhysicalDeformationError)


def _check_keys(mapping, allowed, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must be a JSON object")
    for key in mapping:
        if key not in allowed:
            raise ConfigError(
                f"unknown key '{key}' in {where}; "
                f"allowed keys: {', '.join(sorted(allowed))}")


def _require(mapping, key, where):
    if key not in mapping:
        raise ConfigError(f"missing key '{key}' in {where}")
    return mapping[key]


# ---------------------------------------------------------------------------
# config -> library objects


def _source_term(spec, where):
    """One source component from its JSON description, as a callable."""
    if not isinstance(spec, dict):
        raise ConfigError(f"{where} must be a JSON object")
    kind = _require(spec, "kind", where)
    if kind == "sine":
        _check_keys(spec, {"kind", "mode", "amplitude"}, where)
        mode = int(_require(spec, "mode", where))
        amp = float(spec.get("amplitude", 1.0))
        return lambda x: amp * np.sin(mode * np.pi * np.asarray(x))
    if kind == "sine-times-poly":
        _check_keys(spec, {"kind", "mode", "amplitude", "poly"}, where)
        mode = int(_require(spec, "mode", where))
        amp = float(spec.get("amplitude", 1.0))
        coeffs = [float(c) for c in _require(spec, "poly", where)]
        return lambda x: (amp * np.sin(mode * np.pi * np.asarray(x))
                          * np.polynomial.polynomial.polyval(
                              np.asarray(x), coeffs))
    if kind == "linear-ramp":
        _check_keys(spec, {"kind", "slope"}, where)
        slope = float(spec.get("slope", 1.0))
        return lambda x: slope * np.asarray(x, dtype=float)
    if kind == "gaussian-bump":
        _check_keys(spec, {"kind", "center", "width"}, where)
        center = float(_require(spec, "center", where))
        width = float(_require(spec, "width", where))
        return lambda x: np.exp(-0.5 * width
                                * (np.asarray(x, dtype=float) - center) ** 2)
    if kind == "clipped-hat-bump":
        _check_keys(spec, {"kind", "center", "width"}, where)
        center = float(_require(spec, "center", where))
        width = float(_require(spec, "width", where))
        return lambda x: np.maximum(
            0.0, width * (1.0 - width
                          * np.abs(np.asarray(x, dtype=float) - center)))
    raise ConfigError(f"unknown source kind '{kind}' in {where}")


def _build_truth(problem_id, spec):
    """TrueSystem for the data-generating reference, or None for custom
    problems that read measurements straight from a CSV."""
    spec = {} if spec is None else spec
    if problem_id in ("bar-linear", "custom"):
        _check_keys(spec, {"source"}, "truth")
        if "source" not in spec:
            if problem_id == "custom":
                return None
            raise ConfigError("bar-linear needs truth.source to sample from")
        return linear_bar(_source_term(spec["source"], "truth.source"))
    if problem_id == "bar-hyperelastic":
        _check_keys(spec, {"source", "moduli", "support_position"}, "truth")
        source = _source_term(spec["source"], "truth.source") \
            if "source" in spec else None
        moduli = tuple(float(m) for m in spec.get("moduli", (1.0, 1.0)))
        return hyperelastic_bar(source=source, moduli=moduli,
                                constraint_point=float(
                                    spec.get("support_position", 0.5)))
    if problem_id == "heat-2d":
        _check_keys(spec, {"advection"}, "truth")
        return advection_diffusion_2d(
            advection=tuple(float(a) for a in spec.get("advection", (5, 5))))
    raise ConfigError(f"unknown problem '{problem_id}'; "
                      f"expected one of {PROBLEMS}")


_REFERENCE_CACHE: dict = {}


def _reference(problem_id, truth_spec, system):
    """Reference solve for the truth, cached per process (the 2D one
    trains a network and is worth reusing across sweep entries)."""
    if system is None:
        return None
    key = json.dumps([problem_id, truth_spec], sort_keys=True)
    if key not in _REFERENCE_CACHE:
        _REFERENCE_CACHE[key] = reference_solution(system)
    return _REFERENCE_CACHE[key]


def _build_measurements(spec, reference, dim, seed_override):
    _check_keys(spec, {"count", "noise", "confidence", "seed", "csv"},
                "measurements")
    confidence = float(spec.get("confidence", 1.0))
    if "csv" in spec:
        extra = sorted(set(spec) - {"csv", "confidence"})
        if extra:
            raise ConfigError(
                f"measurements.csv excludes key '{extra[0]}'")
        return MeasurementSet.from_csv(spec["csv"], confidence=confidence)
    if reference is None:
        raise ConfigError(
            "no truth to sample from; give measurements.csv instead")
    count = int(_require(spec, "count", "measurements"))
    seed = int(spec.get("seed", 0)) if seed_override is None \
        else int(seed_override)
    positions = uniform_interior_grid(count, dim=dim)
    return sample_measurements(reference.evaluate, positions,
                               float(spec.get("noise", 0.0)), seed,
                               confidence=confidence)


def _build_physics(problem_id, spec, loss_form):
    if problem_id in ("bar-linear", "custom"):
        spec = spec if spec is not None else {}
        _check_keys(spec, {"family", "modes", "components"}, "physics")
        family = spec.get("family", "bar-sources")
        if family != "bar-sources":
            raise ConfigError(
                f"problem '{problem_id}' needs physics family "
                f"'bar-sources', got '{family}'")
        if ("modes" in spec) == ("components" in spec):
            raise ConfigError(
                "physics takes exactly one of 'modes' or 'components'")
        if "modes" in spec:
            components = tuple(
                (lambda x, j=int(j): np.sin(j * np.pi * np.asarray(x)))
                for j in spec["modes"])
        else:
            components = tuple(
                _source_term(c, f"physics.components[{i}]")
                for i, c in enumerate(spec["components"]))
        form = loss_form if loss_form in ("strong", "weak", "energy") \
            else "strong"
        return LinearSourcePhysics(components, loss_form=form)
    if problem_id == "bar-hyperelastic":
        spec = spec if spec is not None else {}
        _check_keys(spec, {"family", "moduli", "components"}, "physics")
        family = spec.get("family", "bar-nonlinear")
        if family != "bar-nonlinear":
            raise ConfigError(
                "problem 'bar-hyperelastic' needs physics family "
                f"'bar-nonlinear', got '{family}'")
        moduli = tuple(float(m) for m in spec.get("moduli", (1.0, 1.0)))
        if "components" in spec:
            components = tuple(
                _source_term(c, f"physics.components[{i}]")
                for i, c in enumerate(spec["components"]))
        else:
            components = (lambda x: np.asarray(x, dtype=float),)
        form = loss_form if loss_form in ("strong", "weak", "energy") \
            else "weak"
        return HyperelasticPhysics(moduli=moduli,
                                   source_components=components,
                                   loss_form=form)
    if problem_id == "heat-2d":
        spec = spec if spec is not None else {}
        _check_keys(spec, {"family"}, "physics")
        family = spec.get("family", "modulated-conductivity")
        if family != "modulated-conductivity":
            raise ConfigError(
                "problem 'heat-2d' needs physics family "
                f"'modulated-conductivity', got '{family}'")
        return Conductivity2DPhysics()
    raise ConfigError(f"unknown problem '{problem_id}'")


def _build_discretization(problem_id, spec):
    if spec is None:
        spec = {"kind": "network"} if problem_id == "heat-2d" \
            else {"kind": "sine"}
    _check_keys(spec, {"kind", "n_modes", "widths"}, "basis")
    kind = _require(spec, "kind", "basis")
    if kind == "sine":
        _check_keys(spec, {"kind", "n_modes"}, "basis")
        return SineBasis(int(spec.get("n_modes", 50)))
    if kind == "network":
        _check_keys(spec, {"kind", "widths"}, "basis")
        widths = tuple(int(w) for w in spec.get("widths", (2, 15, 15, 1)))
        return DirichletEmbedding(TanhNetwork(widths))
    raise ConfigError(f"unknown basis kind '{kind}'")


def _build_forces(spec, data):
    if spec is None:
        return None
    _check_keys(spec, {"family", "width", "normalized"}, "forces")
    family = spec.get("family", "hat")
    if family not in FAMILIES:
        raise ConfigError(f"unknown force family '{family}'; "
                          f"expected one of {FAMILIES}")
    width = spec.get("width")
    return data.constraint_shapes(
        family=family, width=None if width is None else float(width),
        normalized=bool(spec.get("normalized", False)))


def _default_loss_form(problem_id, method):
    if problem_id == "heat-2d":
        return "network"
    if method == "energy-mcf":
        return "energy"
    if method == "loss-scan":
        return "energy"
    return "strong"


# ---------------------------------------------------------------------------
# solving


def _solver_options(solver, problem_id):
    _check_keys(solver, SOLVER_KEYS, "solver")
    if problem_id != "heat-2d":
        for key in solver:
            if key in NETWORK_ONLY_KEYS:
                raise ConfigError(
                    f"solver key '{key}' applies only to heat-2d runs")
    return solver


def _eps0(solver, physics):
    if "eps0" in solver:
        return np.atleast_1d(np.asarray(solver["eps0"], dtype=float))
    return None


def _fixed_eps_ecfm(problem, solver, seed):
    """Inner solve at pinned parameters; the outer loop is skipped."""
    physics = problem.physics
    if not isinstance(physics, Conductivity2DPhysics):
        raise ConfigError(
            "solver.fixed_epsilon with method 'ecfm' is supported for "
            "heat-2d only; 1D problems run the full outer loop")
    if problem.forces is None:
        raise ConfigError("method 'ecfm' needs a forces spec")
    eps = np.atleast_1d(np.asarray(solver["fixed_epsilon"], dtype=float))
    kwargs = {k: solver[k] for k in ("penalty_weight", "warmup_steps",
                                     "warmup_lr", "max_refine")
              if k in solver}
    inner = solve_penalized_network(
        physics, problem.discretization, problem.forces, problem.data,
        eps, seed=seed, **kwargs)
    z = total_force(gram_matrix(problem.forces), inner.magnitudes)
    scalars = {k: v for k, v in inner.diagnostics.items() if np.isscalar(v)}
    scalars["seed"] = seed
    return EcfmResult(
        method="ecfm", loss_form="network", epsilon=eps, total_force=z,
        magnitudes=inner.magnitudes, theta=inner.theta,
        iterations=int(inner.diagnostics["iterations"]), converged=True,
        diagnostics={"inner": scalars, "fixed_epsilon": True})


def _run_method(method, problem, solver, epsilon_values):
    physics = problem.physics
    seed = int(solver.get("seed", 0))
    eps0 = _eps0(solver, physics)
    is_2d = isinstance(physics, Conductivity2DPhysics)

    if method == "ecfm":
        if "fixed_epsilon" in solver:
            return _fixed_eps_ecfm(problem, solver, seed)
        kwargs = {}
        if "grad_tol" in solver:
            kwargs["grad_tol"] = float(solver["grad_tol"])
        if "max_iter" in solver:
            kwargs["max_iter"] = int(solver["max_iter"])
        if is_2d:
            kwargs["seed"] = seed
            for key in ("penalty_weight", "fd_step", "probe_refine",
                        "final_refine", "base_refine", "final_cost_target",
                        "warmup_steps", "warmup_lr"):
                if key in solver:
                    kwargs[key] = solver[key]
        return ecfm_minimize(problem, eps0=eps0, **kwargs)

    if method == "pinn-penalty":
        if "lambda_d" not in solver:
            raise ConfigError(
                "method 'pinn-penalty' needs solver.lambda_d (the data "
                "mismatch weight)")
        cfg = PenaltyConfig(data_weight=float(solver["lambda_d"]),
                            loss_form="network" if is_2d else "strong")
        fit_epsilon = bool(solver.get("fit_epsilon", True))
        if "fixed_epsilon" in solver:
            eps0 = np.atleast_1d(np.asarray(solver["fixed_epsilon"],
                                            dtype=float))
            fit_epsilon = False
        kwargs = {}
        if is_2d:
            for key in ("warmup_steps", "warmup_lr", "max_refine"):
                if key in solver:
                    kwargs[key] = solver[key]
        else:
            if "grad_tol" in solver:
                kwargs["grad_tol"] = float(solver["grad_tol"])
            if "max_iter" in solver:
                kwargs["max_iter"] = int(solver["max_iter"])
        return pinn_penalty_solve(problem, cfg, seed=seed, eps0=eps0,
                                  fit_epsilon=fit_epsilon, **kwargs)

    if method == "lagrange":
        return lagrange_strongform_solve(problem)

    if method == "energy-mcf":
        kwargs = {}
        if "grad_tol" in solver:
            kwargs["grad_tol"] = float(solver["grad_tol"])
        if "max_iter" in solver:
            kwargs["max_iter"] = int(solver["max_iter"])
        return energy_mcf_minimize(problem, eps0=eps0, **kwargs)

    if method == "loss-scan":
        if not epsilon_values:
            raise ConfigError(
                "method 'loss-scan' needs a nonempty top-level "
                "'epsilon_values' list")
        rows = constrained_loss_scan(physics, problem.discretization,
                                     problem.data, epsilon_values)
        blocks = assemble_linear(physics, problem.discretization, None,
                                 problem.data, loss_form="energy")
        last = np.atleast_1d(np.asarray(epsilon_values[-1], dtype=float))
        inner = solve_energy_equality(blocks, last)
        z = 0.5 * float(inner.magnitudes @ inner.magnitudes)
        return EcfmResult(
            method="loss-scan", loss_form="energy", epsilon=last,
            total_force=z, magnitudes=inner.magnitudes, theta=inner.theta,
            iterations=len(rows), converged=True,
            diagnostics={"scan": rows})

    raise ConfigError(f"unknown method '{method}'; "
                      f"expected one of {METHODS}")


# ---------------------------------------------------------------------------
# metrics and file outputs


def _field_evaluator(discretization, theta):
    if isinstance(discretization, SineBasis):
        return lambda x: discretization.eval(np.atleast_1d(x), theta)
    return lambda X: discretization.value_grad_lap(
        np.atleast_2d(X), theta).w


def _error_rule(problem_id, truth):
    if problem_id == "heat-2d":
        return unit_square_rule()
    breaks = ()
    if truth is not None and truth.interior_constraint is not None:
        breaks = (truth.interior_constraint[0],)
    return split_unit_rule(breakpoints=breaks)


def _field_error(evaluate, reference, rule):
    if reference is None:
        return None
    diff = evaluate(rule.nodes) - reference.evaluate(rule.nodes)
    return float(np.sqrt(rule.weights @ (diff * diff)))


def _max_violation(evaluate, data):
    if data is None:
        return None
    mismatch = np.abs(np.atleast_1d(evaluate(data.positions)) - data.values)
    return float(np.max(np.maximum(0.0, mismatch - data.band_half_width)))


def _epsilon_cell(epsilon):
    values = np.atleast_1d(np.asarray(epsilon, dtype=float))
    return repr(float(values[0])) if values.size == 1 \
        else ";".join(repr(float(v)) for v in values)


def _metrics_columns(problem_id, method):
    columns = ["entry", "method", "loss_form", "field_error", "total_force",
               "max_violation", "epsilon"]
    if problem_id == "bar-hyperelastic":
        columns.append("strain_jump")
    if problem_id == "heat-2d":
        columns.extend(["a1", "a2", "a_bar"])
    if method == "loss-scan":
        columns.extend(["energy_objective", "strong_objective"])
    return columns


def _strain_jump(discretization, theta, position, half_width=0.05):
    points = np.array([position + half_width, position - half_width])
    slopes = discretization.eval_dx(points, theta)
    return float(slopes[0] - slopes[1])


def _advection_estimate(problem, result):
    if result.method not in ("ecfm", "pinn-penalty"):
        return None
    embedding, theta = problem.discretization, result.theta
    if result.method == "ecfm":
        residual = ecfm_residual_field(problem.forces, result.magnitudes)
    else:
        residual = pinn_residual_field(problem.physics, embedding, theta,
                                       result.epsilon)
    drift = recover_advection(
        lambda X: embedding.value_grad_lap(X, theta).grad_w, residual)
    return drift


def _metrics_rows(entry, problem_id, problem, truth, reference, result):
    """Summary rows for one finished solve (several for a loss scan)."""
    evaluate = _field_evaluator(problem.discretization, result.theta)
    rule = _error_rule(problem_id, truth)

    def base_row(method, loss_form, epsilon, z, evaluate):
        return {
            "entry": entry,
            "method": method,
            "loss_form": loss_form,
            "field_error": _field_error(evaluate, reference, rule),
            "total_force": float(z),
            "max_violation": _max_violation(evaluate, problem.data),
            "epsilon": _epsilon_cell(epsilon),
        }

    if result.method == "loss-scan":
        blocks = assemble_linear(problem.physics, problem.discretization,
                                 None, problem.data, loss_form="energy")
        rows = []
        for scan in result.diagnostics["scan"]:
            eps = np.atleast_1d(np.asarray(scan["epsilon"], dtype=float))
            inner = solve_energy_equality(blocks, eps)
            eps_eval = _field_evaluator(problem.discretization, inner.theta)
            mults = np.asarray(scan["energy_multipliers"], dtype=float)
            row = base_row("loss-scan", "energy", eps,
                           0.5 * float(mults @ mults), eps_eval)
            row["energy_objective"] = float(scan["energy_objective"])
            row["strong_objective"] = float(scan["strong_objective"])
            rows.append(row)
        return rows

    row = base_row(result.method, result.loss_form, result.epsilon,
                   result.total_force, evaluate)
    if problem_id == "bar-hyperelastic":
        position = truth.interior_constraint[0] if truth is not None else 0.5
        row["strain_jump"] = _strain_jump(problem.discretization,
                                          result.theta, position)
    if problem_id == "heat-2d":
        drift = _advection_estimate(problem, result)
        row["a1"] = None if drift is None else float(drift[0])
        row["a2"] = None if drift is None else float(drift[1])
        row["a_bar"] = None if drift is None else float(np.mean(drift))
    return [row]


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_csv_cell(row.get(c)) for c in columns))
    _write_atomic(path, "\n".join(lines) + "\n")


def _write_reconstruction(path: Path, problem, reference, result) -> None:
    evaluate = _field_evaluator(problem.discretization, result.theta)
    two_d = isinstance(problem.physics, Conductivity2DPhysics)
    if two_d:
        line = np.linspace(0.0, 1.0, 101)
        g1, g2 = np.meshgrid(line, line, indexing="ij")
        grid = np.column_stack([g1.ravel(), g2.ravel()])
        coords = [("x1", grid[:, 0]), ("x2", grid[:, 1])]
    else:
        grid = np.linspace(0.0, 1.0, 1001)
        coords = [("x1", grid)]
    w_hat = np.atleast_1d(evaluate(grid))
    carries_force = (result.method == "ecfm" and problem.forces is not None
                     and result.magnitudes.size
                     == problem.forces.n_shapes)
    force = problem.forces.force_field(result.magnitudes, grid) \
        if carries_force else np.zeros(w_hat.shape)
    columns = coords + [("w_hat", w_hat)]
    if reference is not None:
        columns.append(("u_true", np.atleast_1d(reference.evaluate(grid))))
    columns.append(("constraint_force", force))
    names = [name for name, _ in columns]
    table = np.column_stack([values for _, values in columns])
    lines = [",".join(names)]
    for point in table:
        lines.append(",".join(repr(float(v)) for v in point))
    _write_atomic(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# the three operations


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(cfg, TOP_KEYS, "config")
    return cfg


def _run_entry(cfg, out_dir: Path, seed_override, entry="0"):
    """Build the problem a config describes, solve it, write the outputs.

    Returns the metrics rows so sweeps can aggregate them.
    """
    problem_id = _require(cfg, "problem", "config")
    if problem_id not in PROBLEMS:
        raise ConfigError(f"unknown problem '{problem_id}'; "
                          f"expected one of {PROBLEMS}")
    method = _require(cfg, "method", "config")
    if method not in METHODS:
        raise ConfigError(f"unknown method '{method}'; "
                          f"expected one of {METHODS}")
    loss_form = cfg.get("loss_form", _default_loss_form(problem_id, method))
    solver = _solver_options(dict(cfg.get("solver", {})), problem_id)
    if seed_override is not None:
        solver["seed"] = int(seed_override)

    truth = _build_truth(problem_id, cfg.get("truth"))
    reference = _reference(problem_id, cfg.get("truth"), truth)
    dim = 2 if problem_id == "heat-2d" else 1
    data = _build_measurements(dict(_require(cfg, "measurements", "config")),
                               reference, dim, seed_override)
    physics = _build_physics(problem_id, cfg.get("physics"), loss_form)
    discretization = _build_discretization(problem_id, cfg.get("basis"))
    forces = _build_forces(cfg.get("forces"), data)
    try:
        problem = ReconstructionProblem(
            physics=physics, discretization=discretization, forces=forces,
            data=data, loss_form=loss_form)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    result = _run_method(method, problem, solver,
                         cfg.get("epsilon_values"))

    rows = _metrics_rows(entry, problem_id, problem, truth, reference,
                         result)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = result.to_json()
    payload["config"] = jsonable(cfg)
    payload["metrics"] = jsonable(rows)
    _write_atomic(out_dir / "result.json",
                  json.dumps(payload, indent=2) + "\n")
    _write_reconstruction(out_dir / "reconstruction.csv", problem,
                          reference, result)
    _write_csv(out_dir / "metrics.csv",
               _metrics_columns(problem_id, method), rows)
    return rows


SWEEP_AXES = (("method",), ("loss_form",), ("measurements", "count"),
              ("measurements", "seed"), ("solver", "lambda_d"),
              ("solver", "seed"))


def _axis_value(cfg, axis):
    node = cfg
    for key in axis:
        if not isinstance(node, dict) or key not in node:
            return None
        node = node[key]
    return node


def _set_axis(cfg, axis, value):
    node = cfg
    for key in axis[:-1]:
        node = node[key]
    node[axis[-1]] = value


def _merge(base, patch):
    merged = dict(base)
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            merged[key] = _merge(base[key], value)
        else:
            merged[key] = value
    return merged


def _cmd_run(cfg, out_dir, seed_override) -> int:
    if "method_overrides" in cfg:
        raise ConfigError("method_overrides is only for method sweeps")
    _run_entry(cfg, out_dir, seed_override)
    return 0


def _cmd_sweep(cfg, out_dir, seed_override) -> int:
    axes = [axis for axis in SWEEP_AXES
            if isinstance(_axis_value(cfg, axis), list)]
    if len(axes) != 1:
        named = [".".join(axis) for axis in SWEEP_AXES]
        raise ConfigError(
            f"a sweep needs exactly one list-valued axis among {named}; "
            f"found {len(axes)}")
    axis = axes[0]
    values = _axis_value(cfg, axis)
    if not values:
        raise ConfigError(f"sweep axis {'.'.join(axis)} is an empty list")
    overrides = cfg.get("method_overrides", {})
    if overrides:
        if axis != ("method",):
            raise ConfigError("method_overrides is only for method sweeps")
        _check_keys(overrides, set(METHODS), "method_overrides")

    problem_id = _require(cfg, "problem", "config")
    all_rows = []
    columns = None
    for index, value in enumerate(values):
        entry_cfg = copy.deepcopy(cfg)
        entry_cfg.pop("method_overrides", None)
        _set_axis(entry_cfg, axis, value)
        if axis == ("method",):
            entry_cfg = _merge(entry_cfg, overrides.get(value, {}))
        entry_dir = out_dir / f"entry_{index:02d}"
        rows = _run_entry(entry_cfg, entry_dir, seed_override,
                          entry=str(value))
        if columns is None:
            columns = _metrics_columns(problem_id, entry_cfg["method"])
        all_rows.extend(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "metrics.csv", columns, all_rows)
    return 0


def _read_run_dir(path: Path):
    table_path = path / "reconstruction.csv"
    if not table_path.exists():
        raise ConfigError(f"{path} has no reconstruction.csv; "
                          "point compare at finished run directories")
    with open(table_path) as fh:
        lines = [line.strip() for line in fh if line.strip()]
    header = lines[0].split(",")
    body = np.array([[float(cell) for cell in line.split(",")]
                     for line in lines[1:]])
    coords = body[:, :2] if header[:2] == ["x1", "x2"] else body[:, :1]
    w_hat = body[:, header.index("w_hat")]
    error = None
    metrics_path = path / "metrics.csv"
    if metrics_path.exists():
        with open(metrics_path) as fh:
            rows = [line.strip().split(",") for line in fh if line.strip()]
        try:
            cell = rows[1][rows[0].index("field_error")]
            error = float(cell) if cell else None
        except (IndexError, ValueError):
            error = None
    return coords, w_hat, error


def _trapezoid_weights(x):
    w = np.zeros_like(x)
    w[1:] += 0.5 * np.diff(x)
    w[:-1] += 0.5 * np.diff(x)
    return w


def _compare_weights(coords):
    if coords.shape[1] == 1:
        return _trapezoid_weights(coords[:, 0])
    side1 = np.unique(coords[:, 0])
    side2 = np.unique(coords[:, 1])
    if side1.size * side2.size != coords.shape[0]:
        raise ConfigError("compare needs reconstructions on full grids")
    return np.outer(_trapezoid_weights(side1),
                    _trapezoid_weights(side2)).ravel()


def _cmd_compare(paths, out_dir) -> int:
    if len(paths) < 2:
        raise ConfigError("compare needs at least two run directories")
    loaded = []
    for raw in paths:
        path = Path(raw)
        coords, w_hat, error = _read_run_dir(path)
        loaded.append((path.name or str(path), coords, w_hat, error))
    first = loaded[0][1]
    for name, coords, _, _ in loaded[1:]:
        if coords.shape != first.shape \
                or not np.allclose(coords, first, atol=1e-12):
            raise ConfigError(
                f"domain mismatch: '{name}' is sampled on a different "
                "grid than the first run")
    weights = _compare_weights(first)
    rows = []
    for i in range(len(loaded)):
        for j in range(i + 1, len(loaded)):
            name_a, _, w_a, err_a = loaded[i]
            name_b, _, w_b, err_b = loaded[j]
            diff = w_a - w_b
            rows.append({
                "a": name_a,
                "b": name_b,
                "l2_distance": float(np.sqrt(weights @ (diff * diff))),
                "field_error_a": err_a,
                "field_error_b": err_b,
            })
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "comparison.csv",
               ["a", "b", "l2_distance", "field_error_a", "field_error_b"],
               rows)
    return 0


# ---------------------------------------------------------------------------
# argument handling


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recon",
        description="Reconstruction experiments from JSON configs.")
    sub = parser.add_subparsers(dest="op", required=True)
    for op in ("run", "sweep"):
        p = sub.add_parser(op)
        p.add_argument("config_path", nargs="?", default=None)
        p.add_argument("--config", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--seed-override", type=int, default=None)
    p = sub.add_parser("compare")
    p.add_argument("paths", nargs="+")
    p.add_argument("--out", default=None)
    return parser


def _config_path(args) -> str:
    given = [p for p in (args.config_path, args.config) if p is not None]
    if len(given) != 1:
        raise ConfigError(
            "give the config exactly once (positionally or via --config)")
    return given[0]


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.op == "compare":
            out_dir = Path(args.out) if args.out else Path(".")
            return _cmd_compare(args.paths, out_dir)
        path = _config_path(args)
        cfg = _load_config(path)
        if args.out:
            out_dir = Path(args.out)
        elif "output_dir" in cfg:
            out_dir = Path(cfg["output_dir"])
        else:
            out_dir = Path("out") / Path(path).stem
        if args.op == "run":
            return _cmd_run(cfg, out_dir, args.seed_override)
        return _cmd_sweep(cfg, out_dir, args.seed_override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except SOLVER_FAILURES as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except (TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
