"""Command-line entry point: ``spwarp {fit,sample,simulate,select,validate}``.

Every run reads an optional YAML config, applies command-line overrides,
validates the result as a :class:`RunConfig` and writes its reports into
``output_dir``. Exit codes: 0 success, 2 config error, 3 data error,
4 numerical failure. Failures also leave an ``error.json`` document.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.stats import gaussian_kde

from . import __version__
from .bayes import (
    ChainConfig,
    PriorSpec,
    bonferroni_joint,
    chain_diagnostics,
    hpd_interval,
    sample_posterior,
    weighted_likelihood_bootstrap,
)
from .errors import (
    ConfigError,
    DataError,
    InvalidArgumentError,
    NumericalError,
    SpwarpError,
)
from .estimate import FitConfig, fit_mle, residual_bootstrap
from .model import Dataset, ModelParams, predict
from .simbench import SimDesign, emit_tables, run_study
from .template import Family, TemplateSpec, default_nodes

log = logging.getLogger("spwarp")

CURVE_POINTS = 512

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FitSection(_Section):
    n_starts: int = Field(20, ge=1)
    max_iter: int = Field(500, ge=1)
    grad_tol: float = Field(1e-6, gt=0)
    ftol: float = Field(1e-10, gt=0)
    start_dispersion: float = Field(0.3, gt=0)
    n_jobs: int = Field(1, ge=1)
    bootstrap: int = Field(0, ge=0, description="residual bootstrap replicates; 0 disables")
    level: float = Field(0.95, gt=0, lt=1)


class PriorSection(_Section):
    sd_warp: float = Field(2.0, gt=0)
    sd_heights: float = Field(10.0, gt=0)
    sd_log_sigma: float = Field(3.0, gt=0)


class SampleSection(_Section):
    sampler: Literal["mh", "wlb"] = "mh"
    n_chains: int = Field(4, ge=1)
    n_iter: int = Field(4000, ge=2)
    burn_in: Optional[int] = Field(None, ge=0)
    target_accept: float = Field(0.23, gt=0, lt=1)
    c_init: float = Field(1.0, gt=0)
    n_probes: int = Field(10, ge=1)
    n_wlb: int = Field(200, ge=2)
    prior: PriorSection = PriorSection()
    level: float = Field(0.95, gt=0, lt=1)
    kde_points: int = Field(256, ge=8)
    bandwidth: Union[Literal["silverman", "scott"], float] = "silverman"
    write_chains: bool = False

    @model_validator(mode="after")
    def _burn(self):
        if self.burn_in is not None and self.burn_in >= self.n_iter:
            raise ValueError("burn_in must be smaller than n_iter")
        return self


class SimulateSection(_Section):
    design: Literal["sim1", "sim2"] = "sim1"
    n: int = Field(100, ge=10)
    reps: int = Field(50, ge=1)
    method: Literal["bayes", "bootstrap"] = "bayes"
    p: Optional[int] = Field(None, ge=1)
    n_chains: int = Field(16, ge=1)
    n_iter: int = Field(4000, ge=2)
    n_probes: int = Field(10, ge=1)
    n_boot: int = Field(200, ge=2)
    n_jobs: int = Field(1, ge=1)


class RunConfig(_Section):
    command: Literal["fit", "sample", "simulate", "select", "validate"]
    data_path: Optional[str] = None
    columns: Tuple[str, str] = ("x", "y")
    delimiter: str = Field(",", min_length=1, max_length=1)
    domain: Optional[Tuple[float, float]] = None
    M: int = Field(1, ge=0)
    p: int = Field(5, ge=1)
    p_grid: List[int] = Field(default_factory=lambda: list(range(3, 10)))
    sign: Literal["plus", "minus", "auto"] = "plus"
    family: Literal["hermite", "bspline"] = "hermite"
    seed: int = Field(0, ge=0)
    output_dir: str = "spwarp-out"
    fit: FitSection = FitSection()
    sample: SampleSection = SampleSection()
    simulate: SimulateSection = SimulateSection()

    @model_validator(mode="after")
    def _command_fields(self):
        if self.command in ("fit", "sample", "select") and not self.data_path:
            raise ValueError(f"data_path is required for the {self.command} command")
        if self.domain is not None and not self.domain[1] > self.domain[0]:
            raise ValueError("domain upper end must exceed lower end")
        if self.command == "select" and (not self.p_grid or min(self.p_grid) < 1):
            raise ValueError("p_grid must list positive basis sizes")
        return self

    def canonical(self) -> dict:
        """Run parameters as plain data; ``output_dir`` is a location, not a parameter."""
        return self.model_dump(mode="json", exclude={"output_dir"})

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def fit_config(self, p: Optional[int] = None) -> FitConfig:
        f = self.fit
        return FitConfig(
            p=self.p if p is None else p, M=self.M, sign=self.sign, n_starts=f.n_starts,
            max_iter=f.max_iter, grad_tol=f.grad_tol, ftol=f.ftol, seed=self.seed,
            start_dispersion=f.start_dispersion, n_jobs=f.n_jobs,
        )

    def template(self) -> TemplateSpec:
        return TemplateSpec(M=self.M, nodes=default_nodes(self.M), family=Family(self.family))


def load_config(path: Optional[str], overrides: dict, x_col=None, y_col=None) -> RunConfig:
    """YAML file merged with ``overrides`` (dotted keys allowed), then validated.

    ``x_col`` / ``y_col`` replace one entry of ``columns`` each.
    """
    raw = {}
    if path:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
    for key, value in overrides.items():
        if value is None:
            continue
        node = raw
        *head, last = key.split(".")
        for part in head:
            node = node.setdefault(part, {})
        node[last] = value
    if x_col or y_col:
        cols = list(raw.get("columns", ("x", "y")))
        if len(cols) == 2:
            raw["columns"] = [x_col or cols[0], y_col or cols[1]]
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        fields = [
            {"field": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
            for e in exc.errors()
        ]
        raise ConfigError("invalid configuration", fields) from exc


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)


@dataclass
class IngestInfo:
    n_rows: int
    n_dropped: int
    dropped_rows: List[int]


def ingest_csv(
    path,
    columns: Tuple[str, str] = ("x", "y"),
    delimiter: str = ",",
    domain=None,
) -> Tuple[Dataset, IngestInfo]:
    """Read two named numeric columns; blank or NaN rows are dropped and counted.

    Row numbers in errors count the header as row 1.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        idx = []
        for name in columns:
            if name not in header:
                raise DataError(f"column {name!r} not found; header has {header}")
            idx.append(header.index(name))
        xs, ys, dropped = [], [], []
        n_rows = 0
        for row_no, row in enumerate(reader, start=2):
            n_rows += 1
            cells = [row[i].strip() if i < len(row) else "" for i in idx]
            if any(c == "" or c.lower() == "nan" for c in cells):
                dropped.append(row_no)
                continue
            try:
                x, y = (float(c) for c in cells)
            except ValueError:
                raise DataError(f"row {row_no}: non-numeric entry in {cells}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DataError(f"row {row_no}: infinite value")
            xs.append(x)
            ys.append(y)
    if dropped:
        log.warning("dropped %d blank or NaN rows", len(dropped))
    if not xs:
        raise DataError("no usable rows")
    data = Dataset.from_arrays(xs, ys, domain=domain)
    return data, IngestInfo(n_rows, len(dropped), dropped)


def aic(sse: float, n: int, d: int) -> float:
    """Gaussian AIC with the noise variance profiled: 2 d + n ln(sse / n)."""
    return 2.0 * d + n * math.log(sse / n)


def model_select(data: Dataset, cfg: RunConfig, p_grid=None) -> List[dict]:
    """AIC = 2 d + n ln(sse / n) per basis size, sorted ascending.

    ``d`` counts heights, warp coefficients and the noise level. Failed
    candidates are kept with ``aic = None`` and their error message.
    """
    p_grid = sorted(set(cfg.p_grid if p_grid is None else p_grid))
    spec = cfg.template()
    rows = []
    prev = None
    for p in p_grid:
        d = cfg.M + 2 + p + 1
        # candidates are nested: the previous optimum padded with zeros is a
        # feasible start, so sse cannot grow with p
        extra = []
        if prev is not None and prev.layout.p < p:
            z = prev.best.to_vector(full=False)
            extra = [np.concatenate([z, np.zeros(p - prev.layout.p)])]
        try:
            fit = fit_mle(data, spec, cfg.fit_config(p), extra_starts=extra, with_hessian=False)
            prev = fit
            aic_value = aic(fit.loss, data.n, d)
            rows.append({"p": p, "d": d, "sse": fit.loss, "aic": aic_value, "selected": False, "error": ""})
        except SpwarpError as exc:
            rows.append({"p": p, "d": d, "sse": None, "aic": None, "selected": False, "error": str(exc)})
    ok = [r for r in rows if r["aic"] is not None]
    ok.sort(key=lambda r: (r["aic"], r["p"]))
    if ok:
        ok[0]["selected"] = True
    return ok + [r for r in rows if r["aic"] is None]


# -- report helpers --------------------------------------------------------


def _clip(values, lo, hi):
    return np.clip(np.asarray(values, dtype=float), lo, hi)


def _curve_grid(data: Dataset) -> np.ndarray:
    return np.linspace(data.x_raw.min(), data.x_raw.max(), CURVE_POINTS)


def _curve_values(params: ModelParams, spec: TemplateSpec, data: Dataset, grid) -> np.ndarray:
    return predict(params, spec, data.to_internal(grid))


def _band(param_list, spec, data, grid, level):
    curves = np.array([_curve_values(p, spec, data, grid) for p in param_list])
    a = 0.5 * (1.0 - level)
    return np.quantile(curves, [a, 1.0 - a], axis=0)


def _write_curve(path: Path, grid, fit, lower=None, upper=None):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "fit", "lower", "upper"])
        for i in range(grid.size):
            lo = "" if lower is None else repr(float(lower[i]))
            hi = "" if upper is None else repr(float(upper[i]))
            w.writerow([repr(float(grid[i])), repr(float(fit[i])), lo, hi])


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _provenance(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed, "version": __version__}


def _point_rows(est, lo, hi, jlo, jhi, sd=None):
    rows = []
    for k in range(len(est)):
        row = {
            "point": k + 1,
            "estimate": float(est[k]),
            "lower": float(lo[k]),
            "upper": float(hi[k]),
            "joint_lower": float(jlo[k]),
            "joint_upper": float(jhi[k]),
        }
        if sd is not None:
            row["sd"] = float(sd[k])
        rows.append(row)
    return rows


def _text_report(title: str, cfg: RunConfig, body: List[str]) -> str:
    head = [title, f"config hash: {cfg.digest()}", f"seed: {cfg.seed}", f"version: {__version__}", ""]
    return "\n".join(head + body) + "\n"


def _points_table(rows, level) -> List[str]:
    pct = f"{level * 100:g}%"
    out = [f"{'point':>5}  {'estimate':>12}  {pct + ' lower':>12}  {pct + ' upper':>12}  {'joint lower':>12}  {'joint upper':>12}"]
    for r in rows:
        if r["lower"] is None:
            out.append(f"{r['point']:>5}  {r['estimate']:>12.6g}")
            continue
        out.append(
            f"{r['point']:>5}  {r['estimate']:>12.6g}  {r['lower']:>12.6g}  {r['upper']:>12.6g}"
            f"  {r['joint_lower']:>12.6g}  {r['joint_upper']:>12.6g}"
        )
    return out


# -- commands --------------------------------------------------------------


def _load_data(cfg: RunConfig):
    return ingest_csv(cfg.data_path, tuple(cfg.columns), cfg.delimiter, cfg.domain)


def cmd_fit(cfg: RunConfig) -> dict:
    data, info = _load_data(cfg)
    spec = cfg.template()
    fcfg = cfg.fit_config()
    fit = fit_mle(data, spec, fcfg, with_hessian=False)
    lo_x, hi_x = float(data.x_raw.min()), float(data.x_raw.max())
    sp = _clip(fit.stationary, lo_x, hi_x)
    grid = _curve_grid(data)
    curve = _curve_values(fit.best, spec, data, grid)
    out = Path(cfg.output_dir)
    level = cfg.fit.level
    lower = upper = None
    boot_doc = None
    if cfg.fit.bootstrap > 0 and cfg.M > 0:
        boot = residual_bootstrap(fit, data, spec, fcfg, cfg.fit.bootstrap)
        if boot.draws.shape[0] < 2:
            raise NumericalError("bootstrap produced fewer than two replicates")
        iv = _clip(boot.percentile_interval(level), lo_x, hi_x)
        joint = _clip(boot.percentile_interval(1.0 - (1.0 - level) / cfg.M), lo_x, hi_x)
        rows = _point_rows(sp, iv[:, 0], iv[:, 1], joint[:, 0], joint[:, 1], boot.draws.std(axis=0, ddof=1))
        lower, upper = _band(boot.params, spec, data, grid, level)
        boot_doc = {"replicates": int(boot.draws.shape[0]), "dropped": int(boot.dropped)}
    else:
        rows = [{"point": k + 1, "estimate": float(v), "lower": None, "upper": None,
                 "joint_lower": None, "joint_upper": None} for k, v in enumerate(sp)]
    n = data.n
    d = cfg.M + 2 + fit.layout.p + 1
    metrics = {
        "n": n,
        "rows_dropped": info.n_dropped,
        "sse": float(fit.loss),
        "sigma": fit.best.sigma,
        "aic": aic(fit.loss, n, d),
        "sign": fit.layout.sign.value,
        "starts_converged": int(sum(r.converged for r in fit.starts)),
        "starts": len(fit.starts),
    }
    doc = {
        "command": "fit",
        "provenance": _provenance(cfg),
        "config": cfg.canonical(),
        "stationary_points": rows,
        "level": level,
        "metrics": metrics,
        "bootstrap": boot_doc,
        "parameters": dict(zip(fit.layout.names(), fit.best.to_vector().tolist())),
    }
    _write_json(out / "report.json", doc)
    body = [f"n = {n} ({info.n_dropped} rows dropped), M = {cfg.M}, p = {cfg.p}, sign = {metrics['sign']}",
            f"sse = {metrics['sse']:.6g}, sigma = {metrics['sigma']:.6g}, AIC = {metrics['aic']:.6g}", ""]
    body += _points_table(rows, level)
    (out / "report.txt").write_text(_text_report("maximum-likelihood fit", cfg, body))
    _write_curve(out / "curve.csv", grid, curve, lower, upper)
    return doc


def _kde_rows(sp_draws, bandwidth, n_points) -> List[list]:
    rows = []
    for k in range(sp_draws.shape[1]):
        x = sp_draws[:, k]
        grid = np.linspace(x.min(), x.max(), n_points)
        if np.ptp(x) == 0:
            dens = np.where(np.arange(n_points) == 0, np.inf, 0.0)
        else:
            dens = gaussian_kde(x, bw_method=bandwidth)(grid)
        rows += [[k + 1, repr(float(g)), repr(float(v))] for g, v in zip(grid, dens)]
    return rows


def cmd_sample(cfg: RunConfig) -> dict:
    data, info = _load_data(cfg)
    spec = cfg.template()
    s = cfg.sample
    fcfg = cfg.fit_config()
    prior = PriorSpec(s.prior.sd_warp, s.prior.sd_heights, s.prior.sd_log_sigma)
    if s.sampler == "mh":
        chains = sample_posterior(
            data, spec, fcfg,
            ChainConfig(n_chains=s.n_chains, n_iter=s.n_iter, burn_in=s.burn_in,
                        target_accept=s.target_accept, c_init=s.c_init, seed=cfg.seed),
            prior, s.n_probes,
        )
    else:
        chains = weighted_likelihood_bootstrap(data, spec, fcfg, s.n_wlb)
    diag = chain_diagnostics(chains)
    lo_x, hi_x = float(data.x_raw.min()), float(data.x_raw.max())
    draws = chains.sp_draws
    level = s.level
    rows = []
    if cfg.M > 0:
        est = _clip(draws.mean(axis=0), lo_x, hi_x)
        iv = _clip([hpd_interval(draws[:, k], level) for k in range(cfg.M)], lo_x, hi_x)
        joint = _clip(bonferroni_joint(draws, level), lo_x, hi_x)
        sd = draws.std(axis=0, ddof=1)
        rows = _point_rows(est, iv[:, 0], iv[:, 1], joint[:, 0], joint[:, 1], sd)
        rows.sort(key=lambda r: r["estimate"])
    flat = chains.draws.reshape(-1, chains.draws.shape[-1])
    pick = np.unique(np.linspace(0, flat.shape[0] - 1, min(400, flat.shape[0])).astype(int))
    params = [ModelParams.from_vector(flat[i], chains.layout) for i in pick]
    grid = _curve_grid(data)
    curves = np.array([_curve_values(p, spec, data, grid) for p in params])
    a = 0.5 * (1.0 - level)
    lower, upper = np.quantile(curves, [a, 1.0 - a], axis=0)
    out = Path(cfg.output_dir)
    doc = {
        "command": "sample",
        "provenance": _provenance(cfg),
        "config": cfg.canonical(),
        "sampler": s.sampler,
        "level": level,
        "n": data.n,
        "rows_dropped": info.n_dropped,
        "stationary_points": rows,
        "diagnostics": diag,
        "n_modes": len(chains.modes),
        "mode_log_posterior": [m.log_post for m in chains.modes],
    }
    _write_json(out / "report.json", doc)
    body = [f"n = {data.n} ({info.n_dropped} rows dropped), M = {cfg.M}, p = {cfg.p}, sampler = {s.sampler}",
            f"modes found: {len(chains.modes)}, acceptance: {diag['overall_accept']:.3f}", ""]
    body += _points_table(rows, level)
    body += [""] + [f"warning: {w}" for w in diag["warnings"]]
    (out / "report.txt").write_text(_text_report("posterior sample", cfg, body))
    _write_curve(out / "curve.csv", grid, curves.mean(axis=0), lower, upper)
    if cfg.M > 0:
        with (out / "sp_posterior.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["point", "grid", "density"])
            w.writerows(_kde_rows(draws, s.bandwidth, s.kde_points))
    if s.write_chains:
        names = chains.layout.names()
        with (out / "chains.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iter"] + names + [f"sp{k + 1}" for k in range(cfg.M)])
            for c in range(chains.draws.shape[0]):
                for i in range(chains.draws.shape[1]):
                    w.writerow([c, i] + [repr(float(v)) for v in chains.draws[c, i]]
                               + [repr(float(v)) for v in chains.sp_chains[c, i]])
    return doc


def cmd_simulate(cfg: RunConfig) -> dict:
    s = cfg.simulate
    design = SimDesign(
        id=s.design, n=s.n, reps=s.reps, seed=cfg.seed, method=s.method, p_basis=s.p,
        n_chains=s.n_chains, n_iter=s.n_iter, n_probes=s.n_probes, n_boot=s.n_boot, n_jobs=s.n_jobs,
    )
    result = run_study(design)
    out = Path(cfg.output_dir)
    summary = result.summary()
    doc = {"command": "simulate", "provenance": _provenance(cfg), "config": cfg.canonical(), "study": summary}
    _write_json(out / "report.json", doc)
    (out / "table.csv").write_text(emit_tables(result, "csv"))
    table = emit_tables(result, "text")
    (out / "table.txt").write_text(table)
    (out / "report.txt").write_text(
        _text_report(f"simulation study {s.design}, n = {s.n}, reps = {s.reps}", cfg, table.splitlines())
    )
    return doc


def cmd_select(cfg: RunConfig) -> dict:
    data, info = _load_data(cfg)
    rows = model_select(data, cfg)
    out = Path(cfg.output_dir)
    doc = {"command": "select", "provenance": _provenance(cfg), "config": cfg.canonical(),
           "n": data.n, "rows_dropped": info.n_dropped, "candidates": rows}
    _write_json(out / "report.json", doc)
    body = [f"{'p':>4}  {'d':>4}  {'sse':>12}  {'AIC':>12}"]
    for r in rows:
        if r["aic"] is None:
            body.append(f"{r['p']:>4}  {r['d']:>4}  failed: {r['error']}")
        else:
            mark = "  *" if r["selected"] else ""
            body.append(f"{r['p']:>4}  {r['d']:>4}  {r['sse']:>12.6g}  {r['aic']:>12.6g}{mark}")
    (out / "report.txt").write_text(_text_report("basis-size selection by AIC", cfg, body))
    return doc


def cmd_validate(cfg: RunConfig) -> dict:
    doc = {"command": "validate", "provenance": _provenance(cfg), "config": cfg.canonical()}
    if cfg.data_path:
        data, info = _load_data(cfg)
        doc["data"] = {
            "n": data.n, "rows": info.n_rows, "rows_dropped": info.n_dropped,
            "x_min": float(data.x_raw.min()), "x_max": float(data.x_raw.max()),
            "shift": data.shift, "scale": data.scale,
        }
        cfg.template()  # surfaces template construction errors
    out = Path(cfg.output_dir)
    _write_json(out / "report.json", doc)
    (out / "report.txt").write_text(_text_report("configuration valid", cfg, [dump_config(cfg)]))
    return doc


COMMANDS = {
    "fit": cmd_fit,
    "sample": cmd_sample,
    "simulate": cmd_simulate,
    "select": cmd_select,
    "validate": cmd_validate,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, InvalidArgumentError)):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spwarp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"spwarp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="YAML run configuration")
        p.add_argument("-o", "--output-dir", dest="output_dir")
        p.add_argument("--data", dest="data_path")
        p.add_argument("--x-col")
        p.add_argument("--y-col")
        p.add_argument("--delimiter")
        p.add_argument("-M", type=int, dest="M")
        p.add_argument("-p", type=int, dest="p")
        p.add_argument("--sign", choices=["plus", "minus", "auto"])
        p.add_argument("--family", choices=["hermite", "bspline"])
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "fit":
            p.add_argument("--bootstrap", type=int, dest="fit.bootstrap")
        if name == "sample":
            p.add_argument("--sampler", choices=["mh", "wlb"], dest="sample.sampler")
            p.add_argument("--chains", type=int, dest="sample.n_chains")
            p.add_argument("--iter", type=int, dest="sample.n_iter")
            p.add_argument("--write-chains", action="store_const", const=True, dest="sample.write_chains")
        if name == "simulate":
            p.add_argument("--design", choices=["sim1", "sim2"], dest="simulate.design")
            p.add_argument("-n", type=int, dest="simulate.n")
            p.add_argument("--reps", type=int, dest="simulate.reps")
            p.add_argument("--method", choices=["bayes", "bootstrap"], dest="simulate.method")
            p.add_argument("--jobs", type=int, dest="simulate.n_jobs")
        if name == "select":
            p.add_argument("--p-grid", type=int, nargs="+", dest="p_grid")
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.pop("verbose") else logging.WARNING,
                        format="%(levelname)s %(message)s")
    config_path = args.pop("config")
    x_col, y_col = args.pop("x_col"), args.pop("y_col")
    out_dir = Path(args.get("output_dir") or "spwarp-out")
    try:
        cfg = load_config(config_path, args, x_col, y_col)
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[cfg.command](cfg)
    except (SpwarpError, ArithmeticError, np.linalg.LinAlgError) as exc:
        code = _exit_code(exc)
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        details = getattr(exc, "details", None) or getattr(exc, "diagnostics", None)
        if details:
            doc["details"] = details
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_json(out_dir / "error.json", doc)
        except OSError:
            pass
        print(f"spwarp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
