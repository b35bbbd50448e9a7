"""Template functions with a prescribed number of stationary points.

Templates are parameterized by heights ``lam`` at nodes ``b_0 = 0 < ... <
b_{M+1} = 1``. Both families here are *linear* in the heights, so every
template exposes a basis matrix ``H(x)`` with ``g(x) = H(x) @ lam`` and the
same for ``g'``. The model module relies on that to differentiate with
respect to the heights.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError, InvalidArgumentError, TemplateError


class Sign(str, Enum):
    """Which alternating height set: PLUS starts with an increase."""

    PLUS = "plus"
    MINUS = "minus"

    @property
    def first_step(self) -> float:
        return 1.0 if self is Sign.PLUS else -1.0


def _step_signs(sign: Sign, count: int) -> np.ndarray:
    return sign.first_step * (-1.0) ** np.arange(count)


@dataclass(frozen=True)
class HeightVector:
    lam: np.ndarray
    sign: Sign

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        object.__setattr__(self, "lam", lam)
        if lam.ndim != 1 or lam.size < 2:
            raise InvalidArgumentError("need at least two heights")
        steps = np.diff(lam) * _step_signs(self.sign, lam.size - 1)
        if not np.all(steps > 0):
            raise InvalidArgumentError(
                f"heights {lam.tolist()} do not alternate as {self.sign.value}"
            )

    @property
    def M(self) -> int:
        return self.lam.size - 2


@dataclass(frozen=True)
class UnconstrainedHeights:
    """``lambda0`` plus log absolute increments ``l``."""

    lambda0: float
    l: np.ndarray
    sign: Sign

    @property
    def M(self) -> int:
        return np.size(self.l) - 1


def heights_reconstruct(u: UnconstrainedHeights) -> HeightVector:
    l = np.asarray(u.l, dtype=float)
    if not np.all(np.isfinite(l)) or not np.isfinite(u.lambda0):
        raise InvalidArgumentError("unconstrained heights must be finite")
    steps = _step_signs(u.sign, l.size) * np.exp(l)
    lam = u.lambda0 + np.concatenate([[0.0], np.cumsum(steps)])
    return HeightVector(lam, u.sign)


def heights_unconstrain(h: HeightVector) -> UnconstrainedHeights:
    """Inverse of :func:`heights_reconstruct`."""
    return UnconstrainedHeights(
        float(h.lam[0]), np.log(np.abs(np.diff(h.lam))), h.sign
    )


def heights_jacobian(u: UnconstrainedHeights) -> np.ndarray:
    """d lam / d (lambda0, l_1..l_{M+1}); lower triangular, shape (M+2, M+2)."""
    l = np.asarray(u.l, dtype=float)
    steps = _step_signs(u.sign, l.size) * np.exp(l)
    jac = np.zeros((l.size + 1, l.size + 1))
    jac[:, 0] = 1.0
    for k in range(1, l.size + 1):
        jac[k:, k] = steps[k - 1]
    return jac


def default_nodes(M: int) -> np.ndarray:
    return np.arange(M + 2) / (M + 1)


class Family(str, Enum):
    HERMITE = "hermite"
    BSPLINE = "bspline"


DEFAULT_FILL = tuple(np.round(np.arange(1, 20) * 0.05, 10))


@dataclass(frozen=True, eq=False)
class TemplateSpec:
    """Nodes plus template family; heights are supplied at evaluation time.

    For the B-spline family ``knots`` are the interior knots (default: 100
    equally spaced), ``alpha`` the second-difference penalty weight and
    ``fill`` the fractions used to generate linear fill targets per segment.
    """

    M: int
    nodes: Optional[np.ndarray] = None
    family: Family = Family.HERMITE
    degree: int = 3
    knots: Optional[np.ndarray] = None
    alpha: float = 1e6
    fill: Sequence[float] = DEFAULT_FILL

    def __post_init__(self):
        if self.M < 0:
            raise InvalidArgumentError("M must be nonnegative")
        nodes = default_nodes(self.M) if self.nodes is None else self.nodes
        nodes = np.asarray(nodes, dtype=float)
        if nodes.shape != (self.M + 2,):
            raise InvalidArgumentError(f"expected {self.M + 2} nodes")
        if nodes[0] != 0.0 or nodes[-1] != 1.0 or np.any(np.diff(nodes) <= 0):
            raise InvalidArgumentError(
                "nodes must increase strictly from 0 to 1"
            )
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.BSPLINE:
            knots = self.knots
            if knots is None:
                knots = np.linspace(0.0, 1.0, 102)[1:-1]
            knots = np.asarray(knots, dtype=float)
            if (
                knots.ndim != 1
                or np.any(np.diff(knots) <= 0)
                or knots[0] <= 0
                or knots[-1] >= 1
            ):
                raise InvalidArgumentError(
                    "knots must be strictly increasing inside (0, 1)"
                )
            object.__setattr__(self, "knots", knots)

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[1:-1]

    # -- linear-in-heights bases ------------------------------------------
    def basis(self, x) -> np.ndarray:
        x = _check_unit(x)
        if self.family is Family.HERMITE:
            return _hermite_basis(self.nodes, x)[0]
        return self._bspline.basis(x)

    def basis_deriv(self, x) -> np.ndarray:
        x = _check_unit(x)
        if self.family is Family.HERMITE:
            return _hermite_basis(self.nodes, x)[1]
        return self._bspline.basis_deriv(x)

    def evaluate(self, lam, x):
        lam = np.asarray(lam, dtype=float)
        if self.family is Family.HERMITE:
            out = _hermite_direct(self.nodes, lam, _check_unit(x))[0]
        else:
            out = self.basis(x) @ lam
        return float(out) if np.ndim(x) == 0 else out

    def derivative(self, lam, x):
        lam = np.asarray(lam, dtype=float)
        if self.family is Family.HERMITE:
            out = _hermite_direct(self.nodes, lam, _check_unit(x))[1]
        else:
            out = self.basis_deriv(x) @ lam
        return float(out) if np.ndim(x) == 0 else out

    def evaluate_both(self, lam, x):
        """Template value and derivative at ``x`` in one pass."""
        lam = np.asarray(lam, dtype=float)
        x = _check_unit(x)
        if self.family is Family.HERMITE:
            return _hermite_direct(self.nodes, lam, x)
        return self.basis(x) @ lam, self.basis_deriv(x) @ lam

    @cached_property
    def _bspline(self) -> "_BSplineMap":
        return _BSplineMap(self)

    def to_dict(self) -> dict:
        out = {"M": self.M, "nodes": self.nodes.tolist(), "family": self.family.value}
        if self.family is Family.BSPLINE:
            out.update(
                degree=self.degree,
                knots=self.knots.tolist(),
                alpha=self.alpha,
                fill=list(self.fill),
            )
        return out


def _check_unit(x):
    arr = np.asarray(x, dtype=float)
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise DomainError("x must lie in [0, 1]")
    return arr


def _hermite_basis(nodes: np.ndarray, x: np.ndarray):
    """Value and derivative weights of the zero-slope cubic Hermite interpolant."""
    M1 = nodes.size - 1
    k = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, M1 - 1)
    width = nodes[k + 1] - nodes[k]
    t = (x - nodes[k]) / width
    t2 = t * t
    h_left = 2.0 * t2 * t - 3.0 * t2 + 1.0
    d_left = 6.0 * (t2 - t) / width

    shape = x.shape + (nodes.size,)
    val = np.zeros(shape)
    der = np.zeros(shape)
    np.put_along_axis(val, k[..., None], h_left[..., None], axis=-1)
    np.put_along_axis(val, k[..., None] + 1, (1.0 - h_left)[..., None], axis=-1)
    np.put_along_axis(der, k[..., None], d_left[..., None], axis=-1)
    np.put_along_axis(der, k[..., None] + 1, -d_left[..., None], axis=-1)
    return val, der


def _hermite_direct(nodes: np.ndarray, lam: np.ndarray, x: np.ndarray):
    k = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
    left = nodes[k]
    width = nodes[k + 1] - left
    t = (x - left) / width
    h = (2.0 * t - 3.0) * t * t + 1.0
    jump = lam[k] - lam[k + 1]
    # weighted form keeps g(b_k) == lam_k exactly
    return lam[k] * h + lam[k + 1] * (1.0 - h), 6.0 * (t * t - t) / width * jump


def hermite_eval(spec: TemplateSpec, lam, x):
    """Cubic Hermite template through ``(b_k, lam_k)`` with zero node slopes."""
    return spec.evaluate(lam, x)


def hermite_deriv(spec: TemplateSpec, lam, x):
    """Derivative of :func:`hermite_eval`; uses the right segment at nodes."""
    return spec.derivative(lam, x)


class _BSplineMap:
    """Linear map from heights to B-spline coefficients.

    The constrained penalized least-squares problem is linear in its targets,
    so its solution is ``theta = W @ lam`` for a matrix ``W`` that depends only
    on the nodes, knots, penalty and fill grid. ``W`` is obtained from one
    KKT solve with ``M + 2`` right-hand sides.
    """

    def __init__(self, spec: TemplateSpec):
        m = spec.degree
        self.tck = np.concatenate([np.zeros(m + 1), spec.knots, np.ones(m + 1)])
        self.m = m
        self.nbasis = spec.knots.size + m + 1
        self.W = _solve_kkt(spec, self.tck, self.m, self.nbasis)
        self._value = BSpline(self.tck, self.W, m, extrapolate=False)
        self._deriv = self._value.derivative()

    def basis(self, x):
        return np.nan_to_num(self._value(x))

    def basis_deriv(self, x):
        return np.nan_to_num(self._deriv(x))


def _design(tck, m, nbasis, x, nu=0):
    spl = BSpline(tck, np.eye(nbasis), m, extrapolate=False)
    if nu:
        spl = spl.derivative(nu)
    return np.nan_to_num(spl(np.asarray(x, dtype=float)))


def _solve_kkt(spec: TemplateSpec, tck, m, nbasis) -> np.ndarray:
    nodes = spec.nodes
    M2 = nodes.size
    fill = np.asarray(spec.fill, dtype=float)

    # fill targets: lam_{k,l} = (1 - d) lam_k + d lam_{k+1}
    xs, rows = [], []
    for k in range(M2 - 1):
        xs.append(nodes[k] + fill * (nodes[k + 1] - nodes[k]))
        r = np.zeros((fill.size, M2))
        r[:, k] = 1.0 - fill
        r[:, k + 1] = fill
        rows.append(r)
    x_fill = np.concatenate(xs)
    F = np.vstack(rows)
    B = _design(tck, m, nbasis, x_fill)

    D = np.diff(np.eye(nbasis), n=2, axis=0)
    Q = 2.0 * (B.T @ B + spec.alpha * D.T @ D)

    C_val = _design(tck, m, nbasis, nodes)
    C_der = _design(tck, m, nbasis, nodes[1:-1], nu=1)
    C = np.vstack([C_val, C_der])
    rhs_c = np.vstack([np.eye(M2), np.zeros((M2 - 2, M2))])

    if np.linalg.matrix_rank(C_val) < C_val.shape[0]:
        raise TemplateError(
            "value-constraint block is rank deficient; knots too sparse near nodes"
        )
    if np.linalg.matrix_rank(C) < C.shape[0]:
        raise TemplateError(
            "derivative-constraint block is rank deficient; knots too sparse near nodes"
        )
    kkt = np.block([[Q, C.T], [C, np.zeros((C.shape[0], C.shape[0]))]])
    if np.linalg.matrix_rank(kkt) < kkt.shape[0]:
        raise TemplateError(
            "objective block is singular on the constraint null space; "
            "add fill points or increase the penalty"
        )
    rhs = np.vstack([2.0 * B.T @ F, rhs_c])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:nbasis]


def bspline_template_fit(spec: TemplateSpec, lam, check: bool = True) -> np.ndarray:
    """Coefficients of the constrained penalized B-spline template.

    With ``check`` the fitted template must have exactly ``M`` derivative
    sign changes, otherwise :class:`TemplateError` is raised.
    """
    if spec.family is not Family.BSPLINE:
        raise InvalidArgumentError("spec is not a B-spline template")
    lam = np.asarray(lam, dtype=float)
    theta = spec._bspline.W @ lam
    if check:
        found = count_stationary(lambda x: spec.evaluate(lam, x), 2001)
        if found != spec.M:
            raise TemplateError(
                f"B-spline template has {found} stationary points, expected {spec.M}"
            )
    return theta


def count_stationary(g_eval: Callable, grid_size: int = 2001) -> int:
    """Count strict sign changes of the forward-difference derivative of ``g``."""
    if grid_size < 101:
        raise InvalidArgumentError("grid_size must be at least 101")
    x = np.linspace(0.0, 1.0, grid_size)
    d = np.sign(np.diff(np.asarray(g_eval(x), dtype=float)))
    d = d[d != 0]
    return int(np.count_nonzero(d[1:] != d[:-1]))
