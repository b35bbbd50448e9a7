"""The composed regression function ``f = g o gamma`` and its likelihood.

Parameters live in an unconstrained vector laid out as::

    [lambda0, l_1 .. l_{M+1}, y_1 .. y_p, (log_sigma)]

``log_sigma`` is only present in the full (Bayesian) layout; the
maximum-likelihood objective profiles the noise variance out.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .diffeo import BasisCoefficients, SineTable, Warp, squash, squash_jacobian
from .errors import DataError, InvalidArgumentError
from .template import (
    HeightVector,
    Sign,
    TemplateSpec,
    UnconstrainedHeights,
    heights_jacobian,
    heights_reconstruct,
)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Dataset:
    """Paired samples plus the affine map ``x = (x_raw - shift) / scale``."""

    x_raw: np.ndarray
    y_obs: np.ndarray
    shift: float = 0.0
    scale: float = 1.0

    @classmethod
    def from_arrays(cls, x_raw, y_obs, margin: float = 1e-3, domain=None) -> "Dataset":
        """Build a dataset, mapping ``x_raw`` into [0, 1].

        Without ``domain`` the observed range is mapped onto
        ``[margin, 1 - margin]``. With ``domain=(lo, hi)`` the window is
        mapped exactly onto [0, 1] and every sample must lie inside it.
        """
        x_raw = np.asarray(x_raw, dtype=float).reshape(-1)
        y_obs = np.asarray(y_obs, dtype=float).reshape(-1)
        if x_raw.size != y_obs.size:
            raise DataError("x and y differ in length")
        if x_raw.size < 1:
            raise DataError("dataset is empty")
        if not (np.all(np.isfinite(x_raw)) and np.all(np.isfinite(y_obs))):
            raise DataError("dataset contains non-finite values")
        if domain is not None:
            lo, hi = map(float, domain)
            if not hi > lo:
                raise DataError("domain upper end must exceed lower end")
            if x_raw.min() < lo or x_raw.max() > hi:
                raise DataError("samples fall outside the declared domain")
            shift, scale = lo, hi - lo
        else:
            lo, hi = float(x_raw.min()), float(x_raw.max())
            if hi == lo:
                raise DataError("x is constant; the affine map is degenerate")
            scale = (hi - lo) / (1.0 - 2.0 * margin)
            shift = lo - margin * scale
        return cls(x_raw, y_obs, shift, scale)

    @cached_property
    def x(self) -> np.ndarray:
        return np.clip((self.x_raw - self.shift) / self.scale, 0.0, 1.0)

    @property
    def n(self) -> int:
        return self.y_obs.size

    def sine_table(self, p: int) -> SineTable:
        tables = self.__dict__.setdefault("_tables", {})
        if p not in tables:
            tables[p] = SineTable(self.x, p)
        return tables[p]

    def to_user(self, x):
        return self.shift + self.scale * np.asarray(x, dtype=float)

    def to_internal(self, x_user, clamp: bool = True):
        x = (np.asarray(x_user, dtype=float) - self.shift) / self.scale
        if clamp:
            if np.any((x < 0.0) | (x > 1.0)):
                warnings.warn("x outside the fitted domain was clamped", stacklevel=2)
            x = np.clip(x, 0.0, 1.0)
        return x


@dataclass(frozen=True)
class Layout:
    """Index bookkeeping for the unconstrained parameter vector."""

    M: int
    p: int
    sign: Sign

    @property
    def n_heights(self) -> int:
        return self.M + 2

    @property
    def d_mle(self) -> int:
        return self.M + 2 + self.p

    @property
    def d_full(self) -> int:
        return self.d_mle + 1

    @property
    def warp_slice(self) -> slice:
        return slice(self.n_heights, self.d_mle)

    def names(self, full: bool = True) -> list:
        out = ["lambda0"] + [f"l{k}" for k in range(1, self.M + 2)]
        out += [f"y{j}" for j in range(1, self.p + 1)]
        return out + ["log_sigma"] if full else out


@dataclass(frozen=True, eq=False)
class ModelParams:
    heights: UnconstrainedHeights
    y_warp: np.ndarray
    log_sigma: float = 0.0

    @classmethod
    def from_vector(cls, z, layout: Layout) -> "ModelParams":
        z = np.asarray(z, dtype=float)
        if z.size not in (layout.d_mle, layout.d_full):
            raise InvalidArgumentError(
                f"expected {layout.d_mle} or {layout.d_full} entries, got {z.size}"
            )
        heights = UnconstrainedHeights(
            float(z[0]), z[1 : layout.n_heights].copy(), layout.sign
        )
        log_sigma = float(z[layout.d_mle]) if z.size == layout.d_full else 0.0
        return cls(heights, z[layout.warp_slice].copy(), log_sigma)

    def to_vector(self, full: bool = True) -> np.ndarray:
        parts = [[self.heights.lambda0], self.heights.l, self.y_warp]
        if full:
            parts.append([self.log_sigma])
        return np.concatenate([np.asarray(v, dtype=float) for v in parts])

    @property
    def layout(self) -> Layout:
        return Layout(self.heights.M, np.size(self.y_warp), self.heights.sign)

    @cached_property
    def beta(self) -> BasisCoefficients:
        return squash(self.y_warp)

    @cached_property
    def lam(self) -> HeightVector:
        return heights_reconstruct(self.heights)

    @cached_property
    def warp(self) -> Warp:
        return Warp(self.beta)

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    def with_log_sigma(self, log_sigma: float) -> "ModelParams":
        return ModelParams(self.heights, self.y_warp, float(log_sigma))


def _check_spec(params: ModelParams, spec: TemplateSpec):
    if params.heights.M != spec.M:
        raise InvalidArgumentError(
            f"params carry M={params.heights.M}, template expects M={spec.M}"
        )


def heights_from_vector(z: np.ndarray, layout: Layout) -> np.ndarray:
    """Heights ``lam`` from the leading coordinates, without validation."""
    l = z[1 : layout.n_heights]
    steps = layout.sign.first_step * (-1.0) ** np.arange(l.size) * np.exp(l)
    return z[0] + np.concatenate([[0.0], np.cumsum(steps)])


def _aligned(a, align: int = 64):
    """Copy of ``a`` whose buffer starts on an ``align``-byte boundary."""
    if a is None:
        return None
    a = np.asarray(a)
    buf = np.empty(a.nbytes + align, dtype=np.uint8)
    off = (-buf.ctypes.data) % align
    out = buf[off : off + a.nbytes].view(a.dtype).reshape(a.shape)
    out[...] = a
    return out


class Evaluator:
    """Vector-level model evaluation for a fixed template and dataset.

    Accepts parameter vectors in either layout; the sine table of the
    covariates is built once and shared by every evaluation. Arrays are kept
    64-byte aligned, also after unpickling, because numpy's SIMD reductions
    group terms by alignment and results would otherwise differ in the last
    bit between worker processes.
    """

    def __init__(self, spec: TemplateSpec, layout: Layout, data: Dataset, weights=None):
        if layout.M != spec.M:
            raise InvalidArgumentError("layout and template disagree on M")
        self.spec = spec
        self.layout = layout
        self.data = data
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        self.table = data.sine_table(layout.p)
        self.y = data.y_obs
        self.n = data.n
        self._align()

    def _align(self):
        self.weights = _aligned(self.weights)
        self.y = _aligned(self.y)
        for name in ("t", "S", "K"):
            setattr(self.table, name, _aligned(getattr(self.table, name)))

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._align()

    def warp(self, z) -> Warp:
        return Warp(squash(z[self.layout.warp_slice]))

    def fitted(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lam = heights_from_vector(z, self.layout)
        return self.spec.evaluate(lam, self.warp(z)(self.table))

    def _wss(self, r):
        return float(r @ r) if self.weights is None else float(self.weights @ (r * r))

    def sse(self, z) -> float:
        return self._wss(self.y - self.fitted(z))

    def sse_grad(self, z):
        """(sse, d sse / d z) over the shape coordinates."""
        z = np.asarray(z, dtype=float)
        layout = self.layout
        params = ModelParams.from_vector(z, layout)
        warp = params.warp
        gx = warp(self.table)
        lam = heights_from_vector(z, layout)
        f, dg = self.spec.evaluate_both(lam, gx)
        H = self.spec.basis(gx)
        j_heights = H @ heights_jacobian(params.heights)
        j_warp = (dg[:, None] * warp.grad(self.table)) @ squash_jacobian(
            z[layout.warp_slice]
        )
        r = self.y - f
        wr = r if self.weights is None else self.weights * r
        grad = -2.0 * np.concatenate([j_heights.T @ wr, j_warp.T @ wr])
        return float(wr @ r), grad

    def neg_log_lik(self, z) -> float:
        log_sigma = z[self.layout.d_mle]
        return 0.5 * self.n * (LOG_2PI + 2.0 * log_sigma) + self.sse(z) * np.exp(
            -2.0 * log_sigma
        ) / 2.0

    def neg_log_lik_grad(self, z):
        log_sigma = z[self.layout.d_mle]
        s, g = self.sse_grad(z[: self.layout.d_mle])
        inv = np.exp(-2.0 * log_sigma)
        value = 0.5 * self.n * (LOG_2PI + 2.0 * log_sigma) + 0.5 * s * inv
        return value, np.concatenate([0.5 * inv * g, [self.n - s * inv]])


def _evaluator(params: ModelParams, spec: TemplateSpec, data: Dataset, weights=None):
    _check_spec(params, spec)
    return Evaluator(spec, params.layout, data, weights)


def predict(params: ModelParams, spec: TemplateSpec, x):
    """``g_lam(gamma_beta(x))``."""
    _check_spec(params, spec)
    return spec.evaluate(params.lam.lam, params.warp(np.asarray(x, dtype=float)))


def residuals(params: ModelParams, spec: TemplateSpec, data: Dataset) -> np.ndarray:
    return data.y_obs - _evaluator(params, spec, data).fitted(params.to_vector())


def sse(params: ModelParams, spec: TemplateSpec, data: Dataset, weights=None) -> float:
    return _evaluator(params, spec, data, weights).sse(params.to_vector())


def neg_log_lik(params: ModelParams, spec: TemplateSpec, data: Dataset) -> float:
    return _evaluator(params, spec, data).neg_log_lik(params.to_vector())


def profiled_log_sigma(params: ModelParams, spec: TemplateSpec, data: Dataset) -> float:
    """log of sqrt(sse / n), the noise MLE for fixed shape parameters."""
    return 0.5 * np.log(sse(params, spec, data) / data.n)


def sse_and_grad(params: ModelParams, spec: TemplateSpec, data: Dataset, weights=None):
    """Sum of squared residuals and its gradient over the shape coordinates."""
    return _evaluator(params, spec, data, weights).sse_grad(params.to_vector(full=False))


def loss_grad(params: ModelParams, spec: TemplateSpec, data: Dataset) -> np.ndarray:
    """Gradient of :func:`neg_log_lik` over every unconstrained coordinate.

    At interior template nodes the Hermite family is not differentiable; the
    right-hand segment's derivative is used there.
    """
    return _evaluator(params, spec, data).neg_log_lik_grad(params.to_vector())[1]


def stationary_points(params: ModelParams, spec: TemplateSpec, tol: float = 1e-10):
    """Stationary points of ``f`` on the internal scale, ascending."""
    _check_spec(params, spec)
    return warp_stationary_points(params.warp, spec, tol)


def warp_stationary_points(warp: Warp, spec: TemplateSpec, tol: float = 1e-10):
    if spec.M == 0:
        return np.zeros(0)
    return np.atleast_1d(warp.inverse(spec.interior_nodes, tol))


def initial_heights(y_obs, M: int, sign: Sign) -> UnconstrainedHeights:
    """Heights spanning the response range with equal increments."""
    y_obs = np.asarray(y_obs, dtype=float)
    lo, hi = float(np.min(y_obs)), float(np.max(y_obs))
    span = max(hi - lo, 1e-8 * max(1.0, abs(hi)))
    lambda0 = lo if sign is Sign.PLUS else hi
    return UnconstrainedHeights(
        lambda0, np.full(M + 1, np.log(span / (M + 1))), sign
    )
