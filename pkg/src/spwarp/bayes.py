"""Posterior sampling and interval estimates for stationary points.

The posterior over the unconstrained parameters is explored in two stages:
BFGS probes locate local modes of the log-posterior, then random-walk
Metropolis-Hastings chains use scaled inverse Hessians at those modes as
proposal covariances. Each chain picks its mode with probability
proportional to the posterior density there.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError, OptimizationError
from .estimate import FitConfig, fit_mle, minimize_from, numerical_hessian, start_points
from .model import (
    Dataset,
    Evaluator,
    Layout,
    ModelParams,
    neg_log_lik,
)
from .template import Family, Sign, TemplateSpec


@dataclass(frozen=True)
class PriorSpec:
    """Independent zero-mean normal priors on the unconstrained coordinates."""

    sd_warp: float = 2.0
    sd_heights: float = 10.0
    sd_log_sigma: float = 3.0

    def __post_init__(self):
        if min(self.sd_warp, self.sd_heights, self.sd_log_sigma) <= 0:
            raise InvalidArgumentError("prior standard deviations must be positive")

    def sds(self, layout: Layout) -> np.ndarray:
        return np.concatenate(
            [
                np.full(layout.n_heights, self.sd_heights),
                np.full(layout.p, self.sd_warp),
                [self.sd_log_sigma],
            ]
        )

    def log_density(self, z, layout: Layout) -> float:
        sd = self.sds(layout)
        u = np.asarray(z) / sd
        return float(-0.5 * (u @ u) - np.sum(np.log(sd)) - 0.5 * sd.size * np.log(2 * np.pi))

    def neg_log_density_grad(self, z, layout: Layout) -> np.ndarray:
        return np.asarray(z) / self.sds(layout) ** 2


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 4
    n_iter: int = 4000
    burn_in: Optional[int] = None  # default n_iter // 2
    target_accept: float = 0.23
    c_init: float = 1.0
    scale_constant: float = 2.4
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 1 or self.n_iter < 1 or self.thin < 1:
            raise InvalidArgumentError("n_chains, n_iter and thin must be >= 1")
        if not self.burn_in_steps < self.n_iter:
            raise InvalidArgumentError("burn_in must be smaller than n_iter")
        if not 0.0 < self.target_accept < 1.0:
            raise InvalidArgumentError("target_accept must lie in (0, 1)")
        if self.c_init <= 0 or self.scale_constant <= 0:
            raise InvalidArgumentError("proposal scales must be positive")

    @property
    def burn_in_steps(self) -> int:
        return self.n_iter // 2 if self.burn_in is None else self.burn_in


@dataclass
class Mode:
    z: np.ndarray
    log_post: float
    hessian: np.ndarray
    cov: np.ndarray
    layout: Layout


@dataclass
class PosteriorChains:
    layout: Layout
    draws: np.ndarray  # (n_chains, kept, d)
    log_post: np.ndarray  # (n_chains, kept)
    sp_chains: np.ndarray  # (n_chains, kept, M), user scale
    accept_rates: np.ndarray
    accepted: np.ndarray
    proposed: np.ndarray
    modes: List[Mode]
    chain_modes: np.ndarray
    log_c: np.ndarray
    warnings: List[str] = field(default_factory=list)

    @property
    def sp_draws(self) -> np.ndarray:
        """Pooled stationary-point draws, concatenated in chain order."""
        return self.sp_chains.reshape(-1, self.sp_chains.shape[-1])

    @property
    def map_params(self) -> ModelParams:
        if self.modes:
            return ModelParams.from_vector(self.modes[0].z, self.layout)
        c, i = np.unravel_index(np.argmax(self.log_post), self.log_post.shape)
        return ModelParams.from_vector(self.draws[c, i], self.layout)


class LogPosterior:
    """Log-posterior over the full unconstrained vector."""

    def __init__(self, spec: TemplateSpec, layout: Layout, data: Dataset, prior: PriorSpec):
        self.spec = spec
        self.layout = layout
        self.prior = prior
        self.evaluator = Evaluator(spec, layout, data)
        self.inv_var = 1.0 / prior.sds(layout) ** 2
        self.log_norm = -float(np.sum(np.log(prior.sds(layout)))) - 0.5 * layout.d_full * np.log(
            2 * np.pi
        )
        self.n = data.n
        self._hermite = spec.family is Family.HERMITE

    def sse(self, z) -> float:
        if self._hermite:
            ev = self.evaluator
            return _kernels.hermite_sse(
                z, self.layout.n_heights, self.layout.sign.first_step,
                self.spec.nodes, ev.table.S, ev.y,
            )
        return self.evaluator.sse(z)

    def __call__(self, z) -> float:
        log_sigma = z[-1]
        s = self.sse(z)
        ll = -0.5 * self.n * (math.log(2 * math.pi) + 2.0 * log_sigma) - 0.5 * s * math.exp(
            -2.0 * log_sigma
        )
        val = ll - 0.5 * float(z @ (z * self.inv_var)) + self.log_norm
        return val if math.isfinite(val) else -math.inf

    def neg_and_grad(self, z):
        value, grad = self.evaluator.neg_log_lik_grad(z)
        value += 0.5 * float(z @ (z * self.inv_var)) - self.log_norm
        return value, grad + z * self.inv_var


def log_posterior(params: ModelParams, spec: TemplateSpec, data: Dataset, prior: PriorSpec) -> float:
    """Gaussian log-likelihood plus independent normal log-priors."""
    return -neg_log_lik(params, spec, data) + prior.log_density(params.to_vector(), params.layout)


class _ScaledNegPosterior:
    def __init__(self, target: LogPosterior):
        self.target = target

    def __call__(self, z):
        try:
            v, g = self.target.neg_and_grad(z)
        except (ValueError, ArithmeticError):
            return np.inf, np.zeros_like(z)
        n = self.target.n
        return v / n, g / n


def regularized_inverse(H: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Inverse of ``H`` with eigenvalues floored at ``floor * max eigenvalue``."""
    vals, vecs = np.linalg.eigh(0.5 * (H + H.T))
    top = max(float(vals.max()), 1e-300)
    vals = np.maximum(vals, floor * top)
    return (vecs / vals) @ vecs.T


def find_modes(
    data: Dataset,
    spec: TemplateSpec,
    cfg: FitConfig,
    prior: PriorSpec,
    n_probes: int = 10,
    merge_tol: float = 1e-3,
    target=None,
) -> List[Mode]:
    """Local maxima of the log-posterior from ``n_probes`` BFGS runs.

    Returned modes are sorted by log-posterior (highest first), with modes
    closer than ``merge_tol`` in the unconstrained space merged. ``target``
    replaces the log-posterior (testing hook); it must offer ``__call__``,
    ``neg_and_grad`` and ``n`` like :class:`LogPosterior`.
    """
    if n_probes < 1:
        raise InvalidArgumentError("n_probes must be >= 1")
    signs = [Sign.PLUS, Sign.MINUS] if cfg.sign == "auto" else [Sign(cfg.sign)]
    best_modes, best_lp = None, -np.inf
    for sign in signs:
        layout = Layout(cfg.M, cfg.p, sign)
        if target is None:
            lp = LogPosterior(spec, layout, data, prior)
        else:
            lp = target
        modes = _probe_sign(data, cfg, lp, n_probes, layout, merge_tol)
        if modes and modes[0].log_post > best_lp:
            best_modes, best_lp = modes, modes[0].log_post
    if not best_modes:
        raise OptimizationError("no posterior probe converged")
    return best_modes


def _probe_sign(data, cfg, target, n_probes, layout, merge_tol):
    objective = _ScaledNegPosterior(target)
    log_sigma0 = np.log(max(np.std(data.y_obs), 1e-8) / 2.0)
    found = []
    for z0 in start_points(data, layout, n_probes, [cfg.seed, 5], cfg.start_dispersion):
        rec = minimize_from(
            objective, np.append(z0, log_sigma0), cfg.max_iter, cfg.grad_tol, cfg.ftol
        )
        if rec.converged:
            found.append((target(rec.z), rec.z))
    found.sort(key=lambda item: -item[0])
    kept = []
    for lp, z in found:
        if all(np.linalg.norm(z - k[1]) >= merge_tol for k in kept):
            kept.append((lp, z))
    modes = []
    for lp, z in kept:
        H = numerical_hessian(lambda v: target.neg_and_grad(v)[1], z)
        modes.append(Mode(z, float(lp), H, regularized_inverse(H), layout))
    return modes


def mode_weights(modes: Sequence[Mode]) -> np.ndarray:
    lp = np.array([m.log_post for m in modes])
    w = np.exp(lp - lp.max())
    return w / w.sum()


def run_chains(
    data: Dataset,
    spec: TemplateSpec,
    modes: Sequence[Mode],
    chain_cfg: ChainConfig,
    prior: PriorSpec,
    layout: Optional[Layout] = None,
    target=None,
) -> PosteriorChains:
    """Random-walk Metropolis-Hastings seeded at posterior modes.

    Chain ``i`` draws its mode from :func:`mode_weights`, starts there and
    proposes ``N(0, c * (scale_constant / d**2) * H^-1)``. ``log c`` follows a
    Robbins-Monro recursion toward ``target_accept`` during burn-in and is
    frozen afterwards. ``target`` overrides the log-density (testing hook).
    """
    if not modes:
        raise InvalidArgumentError("at least one mode is required")
    if layout is None:
        layout = modes[0].layout
    if target is None:
        target = LogPosterior(spec, layout, data, prior)
    d = modes[0].z.size
    weights = mode_weights(modes)
    cfg = chain_cfg
    burn = cfg.burn_in_steps
    kept_idx = np.arange(burn, cfg.n_iter)[:: cfg.thin]
    n_kept = kept_idx.size
    M = spec.M

    draws = np.empty((cfg.n_chains, n_kept, d))
    lps = np.empty((cfg.n_chains, n_kept))
    sps = np.empty((cfg.n_chains, n_kept, M))
    accepted = np.zeros(cfg.n_chains, dtype=int)
    chain_modes = np.empty(cfg.n_chains, dtype=int)
    log_cs = np.empty(cfg.n_chains)
    notes = []
    base = cfg.scale_constant / d**2
    nodes = spec.interior_nodes
    ws = layout.warp_slice

    for ci in range(cfg.n_chains):
        rng = np.random.default_rng([cfg.seed, 3, ci])
        m = int(rng.choice(len(modes), p=weights))
        chain_modes[ci] = m
        chol = np.linalg.cholesky(base * modes[m].cov + 1e-300 * np.eye(d))
        eps = rng.standard_normal((cfg.n_iter, d)) @ chol.T
        log_u = np.log(rng.random(cfg.n_iter))
        log_c = math.log(cfg.c_init)
        z = modes[m].z.copy()
        lp = target(z)
        sp = None
        burn_accepts = 0
        out = 0
        for t in range(cfg.n_iter):
            prop = z + math.exp(0.5 * log_c) * eps[t]
            lp_prop = target(prop)
            log_alpha = lp_prop - lp
            if log_u[t] < log_alpha:
                z, lp = prop, lp_prop
                sp = None
                if t < burn:
                    burn_accepts += 1
                else:
                    accepted[ci] += 1
            if t < burn:
                alpha = 1.0 if log_alpha >= 0 else math.exp(log_alpha)
                log_c += (t + 1.0) ** -0.6 * (alpha - cfg.target_accept)
            elif out < n_kept and t == kept_idx[out]:
                if sp is None:
                    if M:
                        c = _kernels.warp_series(z[ws])
                        sp = data.to_user(_kernels.warp_inverse(c, nodes, 1e-10))
                    else:
                        sp = np.zeros(0)
                draws[ci, out] = z
                lps[ci, out] = lp
                sps[ci, out] = sp
                out += 1
        log_cs[ci] = log_c
        if burn > 0 and burn_accepts == 0:
            notes.append(f"chain {ci}: no proposal accepted during burn-in")

    proposed = np.full(cfg.n_chains, cfg.n_iter - burn)
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    return PosteriorChains(
        layout=layout,
        draws=draws,
        log_post=lps,
        sp_chains=sps,
        accept_rates=accepted / proposed,
        accepted=accepted,
        proposed=proposed,
        modes=list(modes),
        chain_modes=chain_modes,
        log_c=log_cs,
        warnings=notes,
    )


def sample_posterior(
    data: Dataset,
    spec: TemplateSpec,
    cfg: FitConfig,
    chain_cfg: ChainConfig,
    prior: PriorSpec = PriorSpec(),
    n_probes: int = 10,
) -> PosteriorChains:
    """Mode search followed by mode-seeded Metropolis-Hastings."""
    modes = find_modes(data, spec, cfg, prior, n_probes)
    return run_chains(data, spec, modes, chain_cfg, prior)


def weighted_likelihood_bootstrap(
    data: Dataset,
    spec: TemplateSpec,
    cfg: FitConfig,
    B: int,
    fit=None,
    fresh_starts: int = 3,
) -> PosteriorChains:
    """Approximate posterior draws by refitting under Exp(1) observation weights.

    Each replicate is warm-started at the unweighted MLE. The result is
    packaged as a single pseudo-chain with every draw counted as accepted.
    """
    if B < 1:
        raise InvalidArgumentError("B must be >= 1")
    if fit is None:
        fit = fit_mle(data, spec, cfg, with_hessian=False)
    layout = fit.layout
    warm = fit.best.to_vector(full=False)
    sub = replace(cfg, n_starts=fresh_starts, n_jobs=1)
    draws, sps = [], []
    for b in range(B):
        rng = np.random.default_rng([cfg.seed, 4, b])
        w = rng.exponential(size=data.n)
        w *= data.n / w.sum()
        res = fit_mle(
            data, spec, replace(sub, seed=cfg.seed * 1000003 + b, sign=layout.sign.value),
            weights=w, extra_starts=[warm], with_hessian=False,
        )
        draws.append(res.best.to_vector())
        sps.append(res.stationary)
    draws = np.array(draws)[None]
    sps = np.array(sps).reshape(1, B, spec.M)
    return PosteriorChains(
        layout=layout,
        draws=draws,
        log_post=np.full((1, B), np.nan),
        sp_chains=sps,
        accept_rates=np.ones(1),
        accepted=np.array([B]),
        proposed=np.array([B]),
        modes=[],
        chain_modes=np.zeros(1, dtype=int),
        log_c=np.zeros(1),
    )


def hpd_interval(samples, level: float):
    """Shortest contiguous interval holding ``ceil(level * N)`` sorted samples.

    Ties go to the window with the smallest lower endpoint.
    """
    if not 0.0 < level < 1.0:
        raise InvalidArgumentError("level must lie in (0, 1)")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise InvalidArgumentError("need at least two samples for an interval")
    k = max(1, min(n, math.ceil(level * n - 1e-9)))
    widths = x[k - 1 :] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def bonferroni_joint(sp_draws, level: float, M: Optional[int] = None) -> np.ndarray:
    """Per-coordinate HPD intervals at level ``1 - (1 - level) / M``; shape (M, 2)."""
    sp_draws = np.asarray(sp_draws, dtype=float)
    if sp_draws.ndim == 1:
        sp_draws = sp_draws[:, None]
    M = sp_draws.shape[1] if M is None else M
    adjusted = 1.0 - (1.0 - level) / M
    return np.array([hpd_interval(sp_draws[:, k], adjusted) for k in range(M)])


def split_dispersion(x) -> np.ndarray:
    """Split-chain dispersion ratio per coordinate for ``x`` of shape (chains, draws, k).

    Each chain is cut in half; the ratio compares the pooled variance estimate
    (within-half plus between-half) with the within-half variance, so values
    near 1 indicate agreement between halves. NaN marks zero within-half
    variance or fewer than two draws per half.
    """
    x = np.asarray(x, dtype=float)
    half = x.shape[1] // 2
    if half < 2:
        return np.full(x.shape[2], np.nan)
    seqs = np.concatenate([x[:, :half], x[:, half : 2 * half]], axis=0)
    within = seqs.var(axis=1, ddof=1).mean(axis=0)
    between = half * seqs.mean(axis=1).var(axis=0, ddof=1)
    # variances at rounding level count as zero (a constant chain's mean is inexact)
    floor = (64.0 * np.finfo(float).eps * np.abs(x).max(axis=(0, 1))) ** 2
    zero = within <= floor
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.sqrt(((half - 1) / half * within + between / half) / within)
    return np.where(zero, np.nan, ratio)


def chain_diagnostics(chains: PosteriorChains) -> dict:
    """Acceptance, pooled moments and split-chain dispersion ratios per stationary point."""
    sp = chains.sp_chains
    M = sp.shape[2]
    ratios = split_dispersion(sp)
    half = sp.shape[1] // 2
    flags = [
        "too few draws" if half < 2 else "zero within-chain variance" if np.isnan(r) else ""
        for r in ratios
    ]
    pooled = chains.sp_draws
    return {
        "accept_rates": chains.accept_rates.tolist(),
        "accepted": chains.accepted.tolist(),
        "proposed": chains.proposed.tolist(),
        "overall_accept": float(chains.accepted.sum() / chains.proposed.sum()),
        "sp_mean": pooled.mean(axis=0).tolist() if M else [],
        "sp_sd": pooled.std(axis=0, ddof=1).tolist() if M and pooled.shape[0] > 1 else [],
        "dispersion_ratio": [None if np.isnan(r) else float(r) for r in ratios],
        "dispersion_flags": flags,
        "warnings": list(chains.warnings),
    }
