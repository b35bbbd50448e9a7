"""Warping diffeomorphisms of [0, 1] built from a truncated cosine basis.

A coefficient vector ``beta`` (with ``||beta|| < pi``) defines

    v(t)     = sum_j beta_j sqrt(2) cos(j pi t)
    q(t)     = cos(||beta||) + sin(||beta||) / ||beta|| * v(t)
    gamma(t) = int_0^t q(s)^2 ds

Expanding the square gives a finite sine series in ``t``::

    gamma(t) = t + sum_{m=1}^{2p} c_m sin(m pi t) / (m pi)

which is what :class:`Warp` evaluates. All public functions accept a scalar
or an array of ``t`` and return the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import DomainError, InvalidArgumentError, NumericalError

#: Below this norm the trigonometric ratios switch to Taylor expansions.
EPS0 = 1e-6

SQRT2 = np.sqrt(2.0)


def _sinc(r):
    """sin(r)/r, continuous at 0."""
    if r < EPS0:
        r2 = r * r
        return 1.0 - r2 / 6.0 + r2 * r2 / 120.0
    return np.sin(r) / r


def _dsinc_over_r(r):
    """(d/dr sinc(r)) / r = (r cos r - sin r) / r**3, continuous at 0."""
    if r < 1e-2:
        r2 = r * r
        return -1.0 / 3.0 + r2 / 30.0 - r2 * r2 / 840.0 + r2 * r2 * r2 / 45360.0
    return (r * np.cos(r) - np.sin(r)) / r**3


@dataclass(frozen=True)
class BasisCoefficients:
    """Warp coefficients ``beta`` with cached Euclidean norm."""

    beta: np.ndarray
    norm: float

    @classmethod
    def from_array(cls, beta) -> "BasisCoefficients":
        arr = np.array(beta, dtype=float).reshape(-1)
        if arr.size < 1:
            raise InvalidArgumentError("beta must have at least one entry")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("beta must be finite")
        norm = float(np.linalg.norm(arr))
        if norm >= np.pi:
            raise InvalidArgumentError(f"||beta|| = {norm} must be < pi")
        arr.setflags(write=False)
        return cls(arr, norm)

    @property
    def p(self) -> int:
        return self.beta.size


def _coerce(beta) -> BasisCoefficients:
    if isinstance(beta, BasisCoefficients):
        return beta
    return BasisCoefficients.from_array(beta)


def _check_unit(t, name="t"):
    arr = np.asarray(t, dtype=float)
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise DomainError(f"{name} must lie in [0, 1]")
    return arr


def squash(y) -> BasisCoefficients:
    """Map an unconstrained vector onto the open ball of radius pi.

    ``beta = pi * y / sqrt(1 + ||y||^2)``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size < 1:
        raise InvalidArgumentError("y must have at least one entry")
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("y must be finite")
    big = float(np.max(np.abs(y)))
    if big == 0.0:
        beta = np.zeros_like(y)
        beta.setflags(write=False)
        return BasisCoefficients(beta, 0.0)
    unit = y / big
    size = big * float(np.linalg.norm(unit))  # ||y|| without overflow
    beta = unit / np.linalg.norm(unit) * (np.pi * size / np.hypot(1.0, size))
    norm = float(np.linalg.norm(beta))
    while norm >= np.pi:
        # ||y|| ~ 1e8 and beyond rounds to the boundary
        beta = beta * (np.nextafter(np.pi, 0.0) / norm) * (1.0 - 2.0**-52)
        norm = float(np.linalg.norm(beta))
    beta.setflags(write=False)
    return BasisCoefficients(beta, norm)


def squash_jacobian(y) -> np.ndarray:
    """d beta / d y for :func:`squash`, shape (p, p)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    s2 = 1.0 + y @ y
    s = np.sqrt(s2)
    return np.pi * (np.eye(y.size) / s - np.outer(y, y) / (s2 * s))


def _sine_table(t: np.ndarray, mmax: int) -> np.ndarray:
    """S[..., m] = sin(m pi t) / (m pi) for m >= 1 and S[..., 0] = t.

    ``S[..., m]`` is forced to 0 at t == 1 so the warp pins 1 exactly.
    """
    m = np.arange(1, mmax + 1)
    arg = np.pi * t[..., None] * m
    s = np.sin(arg) / (np.pi * m)
    s[t == 1.0] = 0.0
    return np.concatenate([t[..., None], s], axis=-1)


def _square_coefficients(b: np.ndarray) -> np.ndarray:
    """w with sum_m w_m S_m(t) = int_0^t v(s)^2 ds.

    Collects beta_j beta_k over j + k = m and |j - k| = m.
    """
    p = b.size
    w = np.zeros(2 * p + 1)
    w[2:] = np.convolve(b, b)
    corr = np.correlate(b, b, "full")[p - 1 :]
    w[0] += corr[0]
    w[1:p] += 2.0 * corr[1:]
    return w


class SineTable:
    """Sine table for fixed evaluation points, reusable across warps of size p."""

    def __init__(self, t, p: int):
        self.t = _check_unit(t)
        self.p = p
        self.S = _sine_table(self.t, 2 * p)
        plus, minus = _pair_indices(p)
        self.K = self.S[..., plus] + self.S[..., minus]


@lru_cache(maxsize=64)
def _pair_indices(p: int):
    j = np.arange(1, p + 1)
    plus = j[:, None] + j[None, :]
    minus = np.abs(j[:, None] - j[None, :])
    return plus, minus


class Warp:
    """Precomputed, immutable evaluator for one coefficient vector.

    Building a ``Warp`` costs O(p^2); each evaluation afterwards costs O(p)
    per point.
    """

    def __init__(self, beta):
        self.coef = _coerce(beta)
        b = self.coef.beta
        p = b.size
        r = self.coef.norm
        self.p = p
        sinc = _sinc(r)
        self.cos_r = np.cos(r)
        self.sinc = sinc
        # gamma = A t + B int_v + C int_v2
        self.A = self.cos_r**2
        self.B = 2.0 * self.cos_r * sinc
        self.C = sinc * sinc

        self.w = _square_coefficients(b)  # int_v2(t) = sum_m w_m S_m(t)
        c = self.C * self.w
        c[1 : p + 1] += self.B * SQRT2 * b
        # A + C ||beta||^2 = cos^2 + sin^2
        c[0] = 1.0
        self._c = c

    # -- building blocks -------------------------------------------------
    def v(self, t):
        t = _check_unit(t)
        j = np.arange(1, self.p + 1)
        return SQRT2 * np.cos(np.pi * t[..., None] * j) @ self.coef.beta

    def int_v(self, t):
        t = _check_unit(t)
        s = _sine_table(t, self.p)
        return SQRT2 * s[..., 1:] @ self.coef.beta

    def int_v2(self, t):
        t = _check_unit(t)
        s = _sine_table(t, 2 * self.p)
        return s @ self.w

    # -- the warp --------------------------------------------------------
    def __call__(self, t):
        if isinstance(t, SineTable):
            s = t.S
        else:
            s = _sine_table(_check_unit(t), 2 * self.p)
        return np.clip(s @ self._c, 0.0, 1.0)

    def deriv(self, t):
        t = _check_unit(t)
        q = self.cos_r + self.sinc * self.v(t)
        return q * q

    def grad(self, t):
        """Gradient with respect to ``beta``; shape ``t.shape + (p,)``.

        ``t`` may be a :class:`SineTable` built for the same ``p``.
        """
        table = t if isinstance(t, SineTable) else SineTable(t, self.p)
        t = table.t
        b = self.coef.beta
        p = self.p
        r = self.coef.norm
        s = table.S
        int_v = SQRT2 * s[..., 1 : p + 1] @ b
        int_v2 = s @ self.w
        k_beta = table.K @ b

        # d/dr f(r) * beta / r for each radial coefficient
        dA = -2.0 * _sinc(2.0 * r)
        dB = 8.0 * _dsinc_over_r(2.0 * r)
        dC = 2.0 * self.sinc * _dsinc_over_r(r)
        radial = dA * t + dB * int_v + dC * int_v2
        return (
            radial[..., None] * b
            + self.B * SQRT2 * s[..., 1 : p + 1]
            + self.C * 2.0 * k_beta
        )

    def inverse(self, y, tol: float = 1e-10):
        """Solve ``gamma(t) = y`` elementwise.

        Bisection narrows the bracket to width 1e-3, then Newton steps take
        over; any Newton step leaving the bracket is replaced by bisection.
        """
        if not tol > 0:
            raise InvalidArgumentError("tol must be positive")
        y = _check_unit(y, "y")
        if not np.all(np.isfinite(self._c)):
            raise NumericalError("warp coefficients are not finite")
        t = _kernels.warp_inverse(self._c, np.atleast_1d(y).astype(float).ravel(), tol)
        if not np.all(np.isfinite(t)):
            raise NumericalError("warp inversion failed")
        return t[0] if y.ndim == 0 else t.reshape(y.shape)


def _scalarize(out, t):
    return float(out) if np.ndim(t) == 0 else out


def v_eval(beta, t):
    """v(t) = sum_j beta_j sqrt(2) cos(j pi t)."""
    return _scalarize(Warp(beta).v(t), t)


def int_v(beta, t):
    """Closed-form integral of v over [0, t]."""
    return _scalarize(Warp(beta).int_v(t), t)


def int_v2(beta, t):
    """Closed-form integral of v**2 over [0, t]."""
    return _scalarize(Warp(beta).int_v2(t), t)


def gamma_eval(beta, t):
    return _scalarize(Warp(beta)(t), t)


def gamma_deriv(beta, t):
    return _scalarize(Warp(beta).deriv(t), t)


def gamma_grad(beta, t):
    return Warp(beta).grad(t)


def gamma_inverse(beta, y, tol: float = 1e-10):
    return _scalarize(Warp(beta).inverse(y, tol), y)
