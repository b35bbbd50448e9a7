"""Maximum-likelihood fitting by multi-start BFGS, plus residual bootstrap."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidArgumentError, NumericalError, OptimizationError
from .model import (
    Dataset,
    Evaluator,
    Layout,
    ModelParams,
    initial_heights,
    loss_grad,
    predict,
    profiled_log_sigma,
    stationary_points,
)
from .template import Sign, TemplateSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    p: int = 5
    M: int = 1
    sign: str = "plus"  # "plus", "minus" or "auto" (fit both, keep the better)
    n_starts: int = 20
    max_iter: int = 500
    grad_tol: float = 1e-6
    ftol: float = 1e-10
    seed: int = 0
    start_dispersion: float = 0.3
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_starts < 1:
            raise InvalidArgumentError("n_starts must be >= 1")
        if self.p < 1:
            raise InvalidArgumentError("p must be >= 1")
        if self.M < 0:
            raise InvalidArgumentError("M must be >= 0")
        if not (self.grad_tol > 0 and self.ftol > 0):
            raise InvalidArgumentError("tolerances must be positive")
        if self.sign not in ("plus", "minus", "auto"):
            raise InvalidArgumentError("sign must be plus, minus or auto")


@dataclass
class StartRecord:
    z: np.ndarray
    loss: float
    converged: bool
    n_iter: int
    message: str


@dataclass
class FitResult:
    best: ModelParams
    loss: float
    starts: List[StartRecord]
    hessian: np.ndarray
    stationary: np.ndarray
    layout: Layout

    @property
    def sigma(self) -> float:
        return self.best.sigma


class _RelativeChange:
    """BFGS callback stopping once the objective stalls."""

    def __init__(self, ftol: float):
        self.ftol = ftol
        self.prev = None

    def __call__(self, intermediate_result):
        f = intermediate_result.fun
        prev, self.prev = self.prev, f
        if prev is not None and abs(prev - f) <= self.ftol * max(abs(prev), 1e-300):
            raise StopIteration


def minimize_from(
    objective: Callable, z0: np.ndarray, max_iter: int, grad_tol: float, ftol: float
) -> StartRecord:
    """Run BFGS from ``z0``. ``objective`` returns ``(value, gradient)``.

    A start counts as converged when the final gradient norm is at most
    ``grad_tol``, or when the objective stalled (relative change <= ``ftol``)
    with the gradient norm within ``1e3 * grad_tol``.
    """
    stop = _RelativeChange(ftol)
    try:
        with np.errstate(all="ignore"):
            res = minimize(
                objective,
                z0,
                jac=True,
                method="BFGS",
                callback=stop,
                options={"gtol": grad_tol, "maxiter": max_iter},
            )
    except (FloatingPointError, ValueError, ArithmeticError) as exc:
        return StartRecord(np.asarray(z0, float), np.inf, False, 0, str(exc))
    z = np.asarray(res.x, dtype=float)
    if not (np.isfinite(res.fun) and np.all(np.isfinite(z))):
        return StartRecord(z, np.inf, False, int(res.nit), "non-finite objective")
    gnorm = float(np.max(np.abs(res.jac)))
    stalled = stop.prev is not None and res.status != 1
    converged = gnorm <= grad_tol or (stalled and gnorm <= 1e3 * grad_tol)
    return StartRecord(z, float(res.fun), bool(converged), int(res.nit), str(res.message))


class MLEObjective:
    """Mean squared residual and gradient; picklable for worker processes."""

    def __init__(self, spec: TemplateSpec, layout: Layout, data: Dataset, weights=None):
        self.evaluator = Evaluator(spec, layout, data, weights)

    def __call__(self, z):
        try:
            s, g = self.evaluator.sse_grad(z)
        except (ValueError, ArithmeticError):
            return np.inf, np.zeros_like(z)
        n = self.evaluator.n
        return s / n, g / n


def start_points(data: Dataset, layout: Layout, n: int, seed, dispersion: float):
    """Deterministic start vectors; stream ``i`` depends only on ``(seed, i)``."""
    seed = list(np.atleast_1d(seed))
    h = initial_heights(data.y_obs, layout.M, layout.sign)
    head = np.concatenate([[h.lambda0], h.l])
    out = []
    for i in range(n):
        rng = np.random.default_rng(seed + [i])
        out.append(np.concatenate([head, dispersion * rng.standard_normal(layout.p)]))
    return out


def _run_one(args):
    objective, z0, cfg = args
    return minimize_from(objective, z0, cfg.max_iter, cfg.grad_tol, cfg.ftol)


def _run_starts(objective, z0s, cfg: FitConfig) -> List[StartRecord]:
    jobs = [(objective, z0, cfg) for z0 in z0s]
    if cfg.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.n_jobs) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def _best(records: List[StartRecord]) -> int:
    """Lowest converged loss, ties broken by start index."""
    ok = [i for i, r in enumerate(records) if r.converged]
    if not ok:
        ok = [i for i, r in enumerate(records) if np.isfinite(r.loss)]
    if not ok:
        raise OptimizationError(
            "all optimizer starts failed",
            [{"start": i, "message": r.message} for i, r in enumerate(records)],
        )
    return min(ok, key=lambda i: (records[i].loss, i))


def _fit_sign(data, spec, cfg: FitConfig, sign: Sign, weights=None, extra_starts=()):
    layout = Layout(cfg.M, cfg.p, sign)
    objective = MLEObjective(spec, layout, data, weights)
    z0s = list(extra_starts) + start_points(
        data, layout, cfg.n_starts, [cfg.seed], cfg.start_dispersion
    )
    records = _run_starts(objective, z0s, cfg)
    return layout, records


def fit_mle(
    data: Dataset,
    spec: TemplateSpec,
    cfg: FitConfig,
    weights=None,
    extra_starts=(),
    with_hessian: bool = True,
) -> FitResult:
    """Least-squares fit of ``g o gamma`` from ``cfg.n_starts`` random starts.

    ``extra_starts`` are tried before the random ones (used for warm starts).
    The returned parameters carry the profiled noise level.
    """
    if spec.M != cfg.M:
        raise InvalidArgumentError("template and config disagree on M")
    if data.n <= cfg.M + 2 + cfg.p:
        log.warning("n=%d does not exceed the parameter count %d", data.n, cfg.M + 2 + cfg.p)
    signs = [Sign.PLUS, Sign.MINUS] if cfg.sign == "auto" else [Sign(cfg.sign)]
    candidates = []
    for sign in signs:
        layout, records = _fit_sign(data, spec, cfg, sign, weights, extra_starts)
        i = _best(records)
        candidates.append((records[i].loss, layout, records, i))
    loss, layout, records, i = min(candidates, key=lambda c: c[0])

    best = ModelParams.from_vector(records[i].z, layout)
    best = best.with_log_sigma(profiled_log_sigma(best, spec, data))
    hessian = hessian_at(best, spec, data) if with_hessian else np.zeros((0, 0))
    sp = data.to_user(stationary_points(best, spec))
    return FitResult(best, loss * data.n, records, hessian, sp, layout)


def numerical_hessian(grad: Callable, z, step: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of ``grad``, symmetrized.

    Default steps are ``1e-5 * (1 + |z_i|)``.
    """
    z = np.asarray(z, dtype=float)
    h = 1e-5 * (1.0 + np.abs(z)) if step is None else np.broadcast_to(step, z.shape)
    H = np.empty((z.size, z.size))
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h[i]
        H[:, i] = (np.asarray(grad(z + e)) - np.asarray(grad(z - e))) / (2.0 * h[i])
    if not np.all(np.isfinite(H)):
        raise NumericalError("Hessian has non-finite entries")
    return 0.5 * (H + H.T)


def hessian_at(params: ModelParams, spec: TemplateSpec, data: Dataset, prior=None):
    """Hessian of the negative log-likelihood (or log-posterior, given ``prior``)
    over all unconstrained coordinates including ``log_sigma``."""
    layout = params.layout

    def grad(z):
        p = ModelParams.from_vector(z, layout)
        g = loss_grad(p, spec, data)
        if prior is not None:
            g = g + prior.neg_log_density_grad(z, layout)
        return g

    return numerical_hessian(grad, params.to_vector(full=True))


@dataclass
class BootstrapResult:
    draws: np.ndarray  # (kept replicates, M), user scale
    dropped: int
    params: List[ModelParams] = field(default_factory=list)
    warm_loss: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cold_loss: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def percentile_interval(self, level: float = 0.9) -> np.ndarray:
        a = 0.5 * (1.0 - level)
        return np.quantile(self.draws, [a, 1.0 - a], axis=0).T


def residual_bootstrap(
    fit: FitResult,
    data: Dataset,
    spec: TemplateSpec,
    cfg: FitConfig,
    B: int,
    fresh_starts: int = 3,
) -> BootstrapResult:
    """Refit ``B`` response vectors ``f_hat(x) + e*`` with resampled residuals.

    Each refit starts from the MLE plus ``fresh_starts`` random points. The
    noise level is re-profiled per replicate.
    """
    if B < 1:
        raise InvalidArgumentError("B must be >= 1")
    fitted = predict(fit.best, spec, data.x)
    resid = data.y_obs - fitted
    resid = resid - resid.mean()
    warm = fit.best.to_vector(full=False)
    layout = fit.layout
    draws, kept, warm_loss, cold_loss = [], [], [], []
    dropped = 0
    for b in range(B):
        rng = np.random.default_rng([cfg.seed, 1, b])
        y_star = fitted + rng.choice(resid, size=data.n, replace=True)
        boot = Dataset(data.x_raw, y_star, data.shift, data.scale)
        objective = MLEObjective(spec, layout, boot)
        z0s = [warm] + start_points(boot, layout, fresh_starts, [cfg.seed, 2, b], cfg.start_dispersion)
        records = _run_starts(objective, z0s, replace(cfg, n_jobs=1))
        try:
            i = _best(records)
        except OptimizationError:
            dropped += 1
            continue
        params = ModelParams.from_vector(records[i].z, layout)
        params = params.with_log_sigma(profiled_log_sigma(params, spec, boot))
        kept.append(params)
        draws.append(data.to_user(stationary_points(params, spec)))
        warm_loss.append(records[0].loss)
        cold_loss.append(min(r.loss for r in records[1:]) if len(records) > 1 else np.inf)
    draws = np.array(draws).reshape(len(draws), spec.M)
    return BootstrapResult(
        draws, dropped, kept, np.array(warm_loss), np.array(cold_loss)
    )
