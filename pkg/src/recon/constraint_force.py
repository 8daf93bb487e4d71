"""Localized force shapes placed at measurement points.

The reconstruction represents whatever the assumed physics cannot explain
as a combination of simple shape functions, one per measurement. Their
magnitudes are the quantities the outer minimization shrinks, and the
quadratic form built from the shapes' overlap integrals turns those
magnitudes into a single scalar measure of unexplained force.

Three families are provided:

* ``hat``: piecewise-linear bump with unit apex at the center. The
  support on each side is the distance to the nearest neighboring center,
  shortened at the domain boundary so the shape vanishes there. On a
  uniform measurement grid this reproduces the classic finite-element
  hat, and each shape is zero at every other measurement point.
* ``clipped_hat``: max(0, p (1 - p |x - c|)), apex value p, support
  width 2/p. Sharper p concentrates the force near its center.
* ``gaussian``: exp(-p ||x - c||^2 / 2), smooth and usable in one or two
  dimensions; the only family offered on the unit square.

Shapes are evaluated raw by default. ``normalized=True`` rescales each
shape to unit L2 norm, which makes the overlap matrix have unit diagonal
and keeps reported magnitudes comparable across families and widths.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import QuadratureRule, split_unit_rule, unit_square_rule

FAMILIES = ("hat", "clipped_hat", "gaussian")


@dataclass(frozen=True)
class ConstraintForceSet:
    """A family of force shapes, one per constraint center.

    centers: (C,) points in (0, 1), or (C, 2) points in the open unit
        square (gaussian family only).
    family: one of "hat", "clipped_hat", "gaussian".
    width: sharpness parameter p for clipped_hat and gaussian; a scalar
        applies to every shape, a length-C sequence sets each shape's p
        individually (e.g. one concentrated shape over a known point
        force, gentler ones elsewhere). Unused for hats, whose widths
        come from the center spacing.
    normalized: rescale every shape to unit L2 norm.
    """

    centers: np.ndarray
    family: str = "hat"
    width: float | np.ndarray | None = None
    normalized: bool = False
    _scales: np.ndarray = field(init=False, repr=False, compare=False)
    _raw_norms: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        centers = np.atleast_1d(np.asarray(self.centers, dtype=float))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown shape family '{self.family}'")
        if centers.ndim == 1:
            if not np.all(np.diff(centers) > 0):
                raise ValueError("centers must be strictly increasing")
            if centers.size and (centers[0] <= 0.0 or centers[-1] >= 1.0):
                raise ValueError("centers must lie strictly inside (0, 1)")
        elif centers.ndim == 2 and centers.shape[1] == 2:
            if self.family != "gaussian":
                raise ValueError(
                    "two-dimensional centers require the gaussian family")
            if np.any(centers <= 0.0) or np.any(centers >= 1.0):
                raise ValueError("centers must lie inside the unit square")
        else:
            raise ValueError("centers must be (C,) or (C, 2)")
        if self.family in ("clipped_hat", "gaussian"):
            if self.width is None:
                raise ValueError(f"family '{self.family}' needs width > 0")
            width = np.broadcast_to(
                np.asarray(self.width, dtype=float), (len(centers),)).copy()
            if np.any(width <= 0.0):
                raise ValueError(f"family '{self.family}' needs width > 0")
            object.__setattr__(self, "width", width)
        object.__setattr__(self, "centers", centers)
        raw = self._raw_norms_by_quadrature()
        object.__setattr__(self, "_raw_norms", raw)
        scales = 1.0 / raw if self.normalized else np.ones(len(centers))
        object.__setattr__(self, "_scales", scales)

    # -- geometry ----------------------------------------------------------

    @property
    def n_shapes(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return 1 if self.centers.ndim == 1 else 2

    def _hat_widths(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-shape (left, right) support widths for the hat family."""
        c = self.centers
        if c.size == 0:
            empty = np.empty(0)
            return empty, empty
        if c.size == 1:
            h = np.array([min(c[0], 1.0 - c[0])])
        else:
            gaps = np.diff(c)
            h = np.minimum(np.concatenate([[gaps[0]], gaps]),
                           np.concatenate([gaps, [gaps[-1]]]))
        left = np.minimum(h, c)
        right = np.minimum(h, 1.0 - c)
        return left, right

    def quadrature_breakpoints(self) -> tuple[float, ...]:
        """Interior points where some shape has a kink; () when smooth.

        Feed these to a split quadrature rule so piecewise-polynomial
        overlap integrals come out exact to rounding.
        """
        if self.family == "gaussian":
            return ()
        c = self.centers
        if self.family == "hat":
            left, right = self._hat_widths()
            points = np.concatenate([c, c - left, c + right])
        else:
            half = 1.0 / np.asarray(self.width, dtype=float)
            points = np.concatenate([c, c - half, c + half])
        points = points[(points > 0.0) & (points < 1.0)]
        return tuple(np.unique(np.round(points, 14)))

    def _default_rule(self) -> QuadratureRule:
        if self.dim == 1:
            return split_unit_rule(self.quadrature_breakpoints())
        return unit_square_rule()

    # -- evaluation --------------------------------------------------------

    def _design_raw(self, x: np.ndarray) -> np.ndarray:
        c = self.centers
        if self.dim == 1:
            x = np.atleast_1d(np.asarray(x, dtype=float))
            dx = x[:, None] - c[None, :]
            if self.family == "hat":
                left, right = self._hat_widths()
                val = np.where(dx <= 0.0, 1.0 + dx / left[None, :],
                               1.0 - dx / right[None, :])
                return np.maximum(val, 0.0)
            if self.family == "clipped_hat":
                p = self.width
                return np.maximum(p * (1.0 - p * np.abs(dx)), 0.0)
            return np.exp(-0.5 * self.width * dx * dx)
        X = np.atleast_2d(np.asarray(x, dtype=float))
        sq = np.sum((X[:, None, :] - c[None, :, :]) ** 2, axis=2)
        return np.exp(-0.5 * self.width * sq)

    def design(self, x) -> np.ndarray:
        """Shape values at the given points, one column per shape."""
        return self._design_raw(x) * self._scales[None, :]

    def force_field(self, magnitudes, x) -> np.ndarray:
        """Combined force sum_i magnitudes_i * shape_i at the points x."""
        magnitudes = np.asarray(magnitudes, dtype=float)
        if magnitudes.shape != (self.n_shapes,):
            raise ValueError(
                f"expected {self.n_shapes} magnitudes, got {magnitudes.shape}")
        return self.design(x) @ magnitudes

    def norms(self) -> np.ndarray:
        """L2 norm of each shape as currently scaled."""
        return self._raw_norms * self._scales

    def _raw_norms_by_quadrature(self) -> np.ndarray:
        rule = self._default_rule()
        phi = self._design_raw(rule.nodes)
        return np.sqrt((rule.weights[:, None] * phi * phi).sum(axis=0))


def shape_value(shape_set: ConstraintForceSet, i: int, x) -> float:
    """Value of a single shape at a single point."""
    if not 0 <= i < shape_set.n_shapes:
        raise IndexError(
            f"shape index {i} out of range [0, {shape_set.n_shapes})")
    point = np.atleast_2d(x) if shape_set.dim == 2 else np.atleast_1d(x)
    return float(shape_set.design(point)[0, i])


def gram_matrix(shape_set: ConstraintForceSet,
                quad: QuadratureRule | None = None) -> np.ndarray:
    """Overlap matrix H_ij = integral of shape_i * shape_j over the domain.

    Symmetric positive semidefinite; computed from the upper triangle and
    mirrored. Kinked families get a split rule by default so entries match
    closed-form piecewise integration to rounding.
    """
    rule = quad if quad is not None else shape_set._default_rule()
    phi = shape_set.design(rule.nodes)
    H = phi.T @ (rule.weights[:, None] * phi)
    upper = np.triu(H)
    return upper + upper.T - np.diag(np.diag(H))


def total_force(H: np.ndarray, magnitudes) -> float:
    """Scalar unexplained-force measure z = 1/2 m^T H m.

    magnitudes may be (C,) for a scalar field or (C, d) with one column
    per field component; columns contribute independently.
    """
    m = np.asarray(magnitudes, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2 or m.shape[0] != H.shape[0]:
        raise ValueError(
            f"magnitudes shape {np.shape(magnitudes)} does not match "
            f"{H.shape[0]} shapes")
    return 0.5 * float(np.sum(m * (H @ m)))
