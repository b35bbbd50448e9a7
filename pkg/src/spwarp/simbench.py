"""Simulation studies: data generators, replicate loops and metric tables."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .bayes import (
    ChainConfig,
    PriorSpec,
    bonferroni_joint,
    find_modes,
    hpd_interval,
    run_chains,
)
from .errors import InvalidArgumentError, SpwarpError
from .estimate import FitConfig, fit_mle, residual_bootstrap
from .model import Dataset
from .template import Family, TemplateSpec, default_nodes

LEVELS = (0.90, 0.95, 0.99)


def sim1_mean(x):
    x = np.asarray(x, dtype=float)
    return 1.0 + np.sin(2 * x) + np.cos(3 * x) + 3 * x - 2 * x**2


def sim1_deriv(x):
    x = np.asarray(x, dtype=float)
    return 2 * np.cos(2 * x) - 3 * np.sin(3 * x) + 3 - 4 * x


# Frequency 2.2 in the sine term puts the stationary points at 0.24204 and
# 0.68735; with 3.3 they would sit at 0.26668 and 0.90651.
SIM2_FREQ = 2.2


def sim2_mean(x):
    x = np.asarray(x, dtype=float)
    return 1.4 * x + np.sin(SIM2_FREQ * x) + np.cos(4 * x)


def sim2_deriv(x):
    x = np.asarray(x, dtype=float)
    return 1.4 + SIM2_FREQ * np.cos(SIM2_FREQ * x) - 4 * np.sin(4 * x)


# Published stationary points; re-derived by root finding in the test suite.
SIM1_TRUTH = (0.39973,)
SIM2_TRUTH = (0.24204, 0.68735)

P_SCHEDULE = {
    "sim1": {50: 4, 100: 5, 200: 6, 300: 7},
    "sim2": {50: 7, 100: 8, 200: 9, 300: 10},
}


class DesignId(str, Enum):
    SIM1 = "sim1"
    SIM2 = "sim2"
    CUSTOM = "custom"


class Method(str, Enum):
    BAYES = "bayes"
    BOOTSTRAP = "bootstrap"


@dataclass(frozen=True)
class SimDesign:
    """One simulation setting.

    ``p_basis=None`` picks the basis size from :data:`P_SCHEDULE` using the
    largest scheduled ``n`` not exceeding ``self.n``. Custom designs must
    supply ``mean``, ``sigma``, ``truths`` and ``sign``.
    """

    id: DesignId = DesignId.SIM1
    n: int = 100
    reps: int = 50
    seed: int = 0
    method: Method = Method.BAYES
    p_basis: Optional[int] = None
    sigma: Optional[float] = None
    mean: Optional[Callable] = None
    deriv: Optional[Callable] = None
    truths: Optional[Tuple[float, ...]] = None
    sign: str = "plus"
    n_chains: int = 16
    n_iter: int = 4000
    n_probes: int = 10
    n_boot: int = 200
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "id", DesignId(self.id))
        object.__setattr__(self, "method", Method(self.method))
        if self.reps < 1:
            raise InvalidArgumentError("reps must be >= 1")
        if self.n < 10:
            raise InvalidArgumentError("n must be >= 10")
        if self.id is DesignId.CUSTOM:
            if self.mean is None or self.sigma is None or self.truths is None:
                raise InvalidArgumentError("custom designs need mean, sigma and truths")
        if self.sigma is not None and self.sigma < 0:
            raise InvalidArgumentError("sigma must be non-negative")
        if self.p_basis is not None and self.p_basis < 1:
            raise InvalidArgumentError("p_basis must be >= 1")

    @property
    def mean_fn(self) -> Callable:
        return {DesignId.SIM1: sim1_mean, DesignId.SIM2: sim2_mean}.get(self.id, self.mean)

    @property
    def noise_sd(self) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return {DesignId.SIM1: 0.25, DesignId.SIM2: 0.15}[self.id]

    @property
    def true_points(self) -> np.ndarray:
        if self.truths is not None:
            return np.asarray(self.truths, dtype=float)
        return np.asarray({DesignId.SIM1: SIM1_TRUTH, DesignId.SIM2: SIM2_TRUTH}[self.id])

    @property
    def M(self) -> int:
        return self.true_points.size

    @property
    def p(self) -> int:
        if self.p_basis is not None:
            return self.p_basis
        schedule = P_SCHEDULE.get(self.id.value, P_SCHEDULE["sim1"])
        eligible = [k for k in schedule if k <= self.n]
        return schedule[max(eligible)] if eligible else schedule[min(schedule)]

    def describe(self) -> dict:
        return {
            "id": self.id.value,
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "method": self.method.value,
            "p": self.p,
            "M": self.M,
            "sigma": self.noise_sd,
            "sign": self.sign,
            "n_chains": self.n_chains,
            "n_iter": self.n_iter,
            "n_probes": self.n_probes,
            "n_boot": self.n_boot,
            "truths": self.true_points.tolist(),
        }


def gen_sim(design: SimDesign, rep_index: int) -> Dataset:
    """Uniform covariates on [0, 1] and Gaussian noise, seeded by ``(seed, rep_index)``."""
    rng = np.random.default_rng([design.seed, rep_index])
    x = rng.uniform(size=design.n)
    y = design.mean_fn(x) + design.noise_sd * rng.standard_normal(design.n)
    return Dataset.from_arrays(x, y, domain=(0.0, 1.0))


def true_stationary_points(deriv: Callable, grid_size: int = 2001, xtol: float = 1e-14) -> np.ndarray:
    """Roots of ``deriv`` on (0, 1) located by a sign scan then Brent's method."""
    grid = np.linspace(0.0, 1.0, grid_size)
    vals = deriv(grid)
    roots = []
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        roots.append(brentq(deriv, grid[i], grid[i + 1], xtol=xtol))
    return np.array(roots)


@dataclass
class ReplicateRecord:
    index: int
    ok: bool
    error: str = ""
    estimate: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sd: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hits: Dict[float, np.ndarray] = field(default_factory=dict)
    joint_hits: Dict[float, bool] = field(default_factory=dict)
    intervals: Dict[float, np.ndarray] = field(default_factory=dict)


@dataclass
class StudyResult:
    design: SimDesign
    records: List[ReplicateRecord]

    @property
    def ok_records(self) -> List[ReplicateRecord]:
        return [r for r in self.records if r.ok]

    @property
    def n_failed(self) -> int:
        return len(self.records) - len(self.ok_records)

    def estimates(self) -> np.ndarray:
        ok = self.ok_records
        return np.array([r.estimate for r in ok]).reshape(len(ok), self.design.M)

    def coverage(self, level: float) -> np.ndarray:
        ok = self.ok_records
        if not ok:
            return np.full(self.design.M, np.nan)
        return np.mean([r.hits[level] for r in ok], axis=0)

    def joint_coverage(self, level: float) -> float:
        ok = self.ok_records
        return float(np.mean([r.joint_hits[level] for r in ok])) if ok else float("nan")

    def bias(self) -> np.ndarray:
        return (self.estimates() - self.design.true_points).mean(axis=0)

    def rmse(self) -> np.ndarray:
        err = self.estimates() - self.design.true_points
        return np.sqrt((err**2).mean(axis=0))

    def avg_sd(self) -> np.ndarray:
        ok = self.ok_records
        return np.array([r.sd for r in ok]).reshape(len(ok), self.design.M).mean(axis=0)

    def aggregates(self) -> List[dict]:
        """One row per stationary point; empty when no replicate succeeded."""
        if not self.ok_records:
            return []
        rows = []
        cov = {lvl: self.coverage(lvl) for lvl in LEVELS}
        rmse, bias, sd = self.rmse(), self.bias(), self.avg_sd()
        for k, truth in enumerate(self.design.true_points):
            row = {"point": k + 1, "truth": float(truth)}
            for lvl in LEVELS:
                row[_cov_name(lvl)] = float(cov[lvl][k])
            row.update(rmse=float(rmse[k]), mean_bias=float(bias[k]), avg_posterior_sd=float(sd[k]))
            rows.append(row)
        return rows

    def summary(self) -> dict:
        return {
            "design": self.design.describe(),
            "n_ok": len(self.ok_records),
            "n_failed": self.n_failed,
            "failures": [{"rep": r.index, "error": r.error} for r in self.records if not r.ok],
            "aggregates": self.aggregates(),
            "joint_coverage": {
                _cov_name(lvl): self.joint_coverage(lvl) for lvl in LEVELS
            }
            if self.ok_records
            else {},
        }


def _cov_name(level: float) -> str:
    return f"hpd{int(round(level * 100))}"


TABLE_COLUMNS = ["point", "truth"] + [_cov_name(lvl) for lvl in LEVELS] + [
    "rmse",
    "mean_bias",
    "avg_posterior_sd",
]


def _replicate_seed(design: SimDesign, rep: int) -> int:
    return int(np.random.SeedSequence([design.seed, rep, 17]).generate_state(1)[0])


def run_replicate(design: SimDesign, rep: int) -> ReplicateRecord:
    """Generate, fit and score one replicate; failures are captured, not raised."""
    try:
        data = gen_sim(design, rep)
        spec = TemplateSpec(M=design.M, nodes=default_nodes(design.M), family=Family.HERMITE)
        cfg = FitConfig(p=design.p, M=design.M, sign=design.sign, seed=_replicate_seed(design, rep))
        if design.method is Method.BAYES:
            prior = PriorSpec()
            modes = find_modes(data, spec, cfg, prior, design.n_probes)
            chains = run_chains(
                data, spec, modes,
                ChainConfig(n_chains=design.n_chains, n_iter=design.n_iter, seed=cfg.seed),
                prior,
            )
            draws = chains.sp_draws
            estimate = draws.mean(axis=0)
        else:
            fit = fit_mle(data, spec, cfg, with_hessian=False)
            boot = residual_bootstrap(fit, data, spec, cfg, design.n_boot)
            draws = boot.draws
            estimate = fit.stationary
        if draws.shape[0] < 2:
            raise InvalidArgumentError("fewer than two draws")
        truth = design.true_points
        rec = ReplicateRecord(rep, True, estimate=estimate, sd=draws.std(axis=0, ddof=1))
        for lvl in LEVELS:
            iv = np.array([hpd_interval(draws[:, k], lvl) for k in range(design.M)])
            joint = bonferroni_joint(draws, lvl)
            rec.intervals[lvl] = iv
            rec.hits[lvl] = (iv[:, 0] <= truth) & (truth <= iv[:, 1])
            rec.joint_hits[lvl] = bool(np.all((joint[:, 0] <= truth) & (truth <= joint[:, 1])))
        return rec
    except (SpwarpError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return ReplicateRecord(rep, False, error=f"{type(exc).__name__}: {exc}")


def _run_indexed(args):
    return run_replicate(*args)


def run_study(design: SimDesign) -> StudyResult:
    """Run every replicate; results are ordered by replicate index."""
    jobs = [(design, rep) for rep in range(design.reps)]
    if design.n_jobs > 1:
        with ProcessPoolExecutor(design.n_jobs) as pool:
            records = list(pool.map(_run_indexed, jobs))
    else:
        records = [_run_indexed(j) for j in jobs]
    records.sort(key=lambda r: r.index)
    return StudyResult(design, records)


def emit_tables(result: StudyResult, fmt: str = "text") -> str:
    """Render the aggregate table as ``csv``, ``json`` or aligned ``text``.

    Floats are written with ``repr`` so the machine-readable forms parse
    back to identical values.
    """
    rows = result.aggregates()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) for c in TABLE_COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(result.summary(), indent=2, sort_keys=True, allow_nan=True) + "\n"
    if fmt == "text":
        widths = [max(len(c), 10) for c in TABLE_COLUMNS]
        lines = ["  ".join(c.rjust(w) for c, w in zip(TABLE_COLUMNS, widths))]
        for row in rows:
            cells = []
            for c, w in zip(TABLE_COLUMNS, widths):
                v = row[c]
                cells.append(str(v).rjust(w) if isinstance(v, int) else f"{v:.5f}".rjust(w))
            lines.append("  ".join(cells))
        summary = result.summary()
        if summary["joint_coverage"]:
            joint = ", ".join(f"{k}={v:.3f}" for k, v in summary["joint_coverage"].items())
            lines.append(f"joint (Bonferroni) coverage: {joint}")
        lines.append(f"replicates ok: {summary['n_ok']}, failed: {summary['n_failed']}")
        return "\n".join(lines) + "\n"
    raise InvalidArgumentError(f"unknown table format {fmt!r}")


def parse_csv_table(text: str) -> List[dict]:
    """Inverse of ``emit_tables(..., "csv")``."""
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for row in reader:
        out.append({k: (int(v) if k == "point" else float(v)) for k, v in row.items()})
    return out
