"""Experiment runner: validated YAML configs, dispatch, flat-file records, reports.

Usage::

    fano-gibbs <experiment> --config run.yaml [--seed S] [--out DIR]
    fano-gibbs report DIR_OR_RECORD [...] [--format markdown|csv]

Each run writes to ``<out>/<experiment>-<hash>/`` where ``hash`` is taken
over the validated config, so distinct configs never share a directory.
Exit codes: 0 success, 2 invalid config, 3 numerical non-convergence.
"""

from __future__ import annotations

import os

if "FANO_GIBBS_THREADS" in os.environ:  # must precede the first numpy import
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = os.environ["FANO_GIBBS_THREADS"]

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import scipy
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .errors import ConfigError, ConvergenceError, FanoGibbsError, MonotonicityError, SamplingError
from .functionals import GammaParams, solve_aubin
from .partition import (gamma_k_detect, verify_main_theorem, verify_prop_key_inequality, verify_thm_quantized,
                        z_estimate, z_quadrature_k1)
from .quantized import (bergman_density, delta_k_estimate, donaldson_step, fixed_point_residual, gram,
                        identity_metric, quantized_ding, random_metric)
from .sampler import empirical_summary, mcmc_run
from .sections import orthonormal_basis
from .sphere import (DensityMeasure, bump_potential, build_grid, ma_measure, normalized_volume, reference_metric,
                     uniform_measure)

EXPERIMENTS = ("gram", "donaldson", "partition", "sample", "verify", "thresholds", "sweep")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

_BUMP = re.compile(r"^bump\(\s*([^,()]+)\s*,\s*([^,()]+)\s*,\s*([^,()]+)\s*(?:,\s*([^,()]+)\s*)?\)$")


# --------------------------------------------------------------------------
# configuration

class ExperimentConfig(BaseModel):
    """One experiment.  Exactly one of ``gamma`` and ``beta = -gamma`` may be set."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: Literal["gram", "donaldson", "partition", "sample", "verify", "thresholds", "sweep"]
    k: int = Field(1, ge=1, le=6)
    gamma: float | None = Field(None, ge=-6.0, le=2.0)
    beta: float | None = Field(None, ge=-2.0, le=6.0)
    grid: tuple[int, int] = (32, 32)
    budget: int = Field(100_000, ge=1_000, le=100_000_000)
    seed: int = Field(0, ge=0)
    phi0: str = "fs"
    output_dir: str = "runs"
    # sample
    n_steps: int = Field(100_000, ge=10_000, le=10_000_000)
    n_chains: int = Field(16, ge=1, le=256)
    # donaldson
    iterations: int = Field(30, ge=1, le=10_000)
    n_starts: int = Field(1, ge=1, le=100)
    # thresholds
    n_rays: int = Field(8, ge=8, le=256)
    include_delta: bool = True
    # verify / sweep
    main_theorem: bool = False
    ks: list[int] = Field(default_factory=lambda: [1, 2])
    gammas: list[float] = Field(default_factory=lambda: [0.3, 0.5, 0.6])

    @model_validator(mode="after")
    def _check(self):
        if self.gamma is not None and self.beta is not None:
            raise ValueError("set gamma or beta, not both")
        if self.exponent == 0:
            raise ValueError("gamma must be nonzero")
        if min(self.grid) < 8 or max(self.grid) > 512:
            raise ValueError("grid sizes must lie in [8, 512]")
        if any(not 1 <= k <= 6 for k in self.ks) or any(g == 0 or abs(g) > 2 for g in self.gammas):
            raise ValueError("sweep ks must lie in [1, 6] and gammas in [-2, 2] without 0")
        parse_phi0(self.phi0)
        return self

    @property
    def exponent(self):
        """``gamma``, defaulting to 0.5 when neither ``gamma`` nor ``beta`` is set."""
        if self.gamma is not None:
            return self.gamma
        if self.beta is not None:
            return -self.beta
        return 0.5

    def digest(self):
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_phi0(spec):
    """``"fs"`` or ``"bump(a, theta, azimuth[, concentration])"`` to parameters."""
    s = spec.strip()
    if s == "fs":
        return ("fs",)
    m = _BUMP.match(s)
    if not m:
        raise ValueError(f"unknown phi0 preset {spec!r}")
    try:
        vals = [float(v) for v in m.groups() if v is not None]
    except ValueError as exc:
        raise ValueError(f"bad number in phi0 preset {spec!r}") from exc
    if len(vals) == 3:
        vals.append(2.0)
    if not all(math.isfinite(v) for v in vals) or vals[3] <= 0:
        raise ValueError(f"phi0 parameters out of range in {spec!r}")
    return ("bump", *vals)


def build_phi0(spec, grid):
    """Reference potential on ``grid`` with ``e^{-phi0}`` of unit mass."""
    parsed = parse_phi0(spec)
    if parsed[0] == "fs":
        return reference_metric(grid)
    _, a, theta, az, conc = parsed
    return normalized_volume(bump_potential(grid, a, (theta, az), conc))


def load_config(path, **overrides):
    """Read a YAML config; ``overrides`` with value ``None`` are ignored."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**doc)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------
# records

def _clean(v):
    """JSON-safe copy: numpy scalars to Python, NaN to None."""
    if isinstance(v, dict):
        return {str(a): _clean(b) for a, b in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(b) for b in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) else v
    return v


def payload_hash(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class RunRecord:
    config_hash: str
    config: dict
    started: str
    finished: str
    versions: dict
    payload: dict
    status: str
    message: str = ""
    directory: str = ""
    plots: list = field(default_factory=list)

    @property
    def payload_hash(self):
        return payload_hash(self.payload)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / "record.json"
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _versions():
    return {"fano_gibbs": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": sys.version.split()[0]}


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class _Outputs:
    """Collects CSV tables and plot series for one run directory."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.plots = []
        self.tables = []

    def table(self, name, rows):
        if not rows:
            return
        path = self.dir / f"{name}.csv"
        keys = list(rows[0])
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in rows:
                w.writerow({k: _clean(r.get(k)) for k in keys})
        self.tables.append(path.name)

    def series(self, name, x, y, xlabel, ylabel, label=None):
        plot_dir = self.dir / "plots"
        plot_dir.mkdir(exist_ok=True)
        path = plot_dir / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([xlabel, ylabel])
            for a, b in zip(x, y):
                w.writerow([repr(float(a)), repr(float(b))])
        self.plots.append({"file": f"plots/{path.name}", "x": xlabel, "y": ylabel, "label": label or name})

    def manifest(self):
        if self.plots:
            with open(self.dir / "plot_manifest.json", "w") as fh:
                json.dump({"series": self.plots}, fh, indent=1)


# --------------------------------------------------------------------------
# experiments

def _setup(cfg, k=None, gamma=None):
    grid = build_grid(*cfg.grid)
    phi0 = build_phi0(cfg.phi0, grid)
    k = cfg.k if k is None else k
    basis = orthonormal_basis(k, grid)
    p = GammaParams(cfg.exponent if gamma is None else gamma, phi0, k)
    return grid, phi0, basis, p


def _exp_gram(cfg, out):
    grid, phi0, basis, p = _setup(cfg)
    vol = DensityMeasure(grid, np.exp(-phi0.u))
    H = gram(phi0, vol, basis)
    B = bergman_density(phi0, p, basis)
    t, _ = grid.node_angles
    meridian = np.arange(0, grid.size, grid.n_azimuth)
    out.series("bergman_density_meridian", t[meridian], B.rho[meridian], "polar", "rho",
               "Bergman density along the zero meridian")
    eig = np.linalg.eigvalsh(H.H)
    out.table("gram_eigenvalues", [{"index": i, "eigenvalue": float(e)} for i, e in enumerate(eig)])
    return {"k": cfg.k, "N": basis.N, "gamma": p.gamma, "logdet": H.logdet, "eigenvalues": eig,
            "bergman_mass": B.mass, "fs_gap": B.fs_gap,
            "identity_deviation": float(np.max(np.abs(H.H - np.eye(basis.N))))}


def _exp_donaldson(cfg, out):
    grid, phi0, basis, p = _setup(cfg)
    rng = np.random.default_rng(cfg.seed)
    rows, finals = [], []
    for s in range(cfg.n_starts):
        H = identity_metric(cfg.k) if s == 0 else random_metric(cfg.k, rng)
        values = [quantized_ding(H, p, basis)]
        res = math.nan
        for _ in range(cfg.iterations):
            T = donaldson_step(H, p, basis)
            res = fixed_point_residual(H, T)
            H = T
            values.append(quantized_ding(H, p, basis))
        increments = np.diff(values)
        rows += [{"start": s, "iteration": i, "value": v} for i, v in enumerate(values)]
        finals.append({"start": s, "final_value": values[-1], "max_increment": float(increments.max()),
                       "fixed_point_residual": res, "condition": H.condition})
        out.series(f"ding_start{s}", range(len(values)), values, "iteration", "quantized_ding",
                   f"quantized Ding along Donaldson iteration, start {s}")
    out.table("donaldson_trace", rows)
    return {"k": cfg.k, "gamma": p.gamma, "starts": finals,
            "monotone": all(f["max_increment"] <= 1e-10 for f in finals)}


def _exp_partition(cfg, out):
    grid, phi0, basis, p = _setup(cfg)
    est = z_estimate(p, basis, cfg.budget, cfg.seed)
    payload = {"k": cfg.k, "gamma": p.gamma, "monte_carlo": est.to_json()}
    if cfg.k == 1 and phi0.is_reference:
        payload["quadrature"] = z_quadrature_k1(p, basis).to_json()
    out.table("partition", [{"method": m, **{a: payload[m][a] for a in ("log_z", "stderr", "n_samples")}}
                            for m in ("monte_carlo", "quadrature") if m in payload])
    return payload


def _exp_sample(cfg, out):
    grid, phi0, basis, p = _setup(cfg)
    beta = -p.gamma
    run = mcmc_run(cfg.k, beta, p, basis, cfg.n_steps, cfg.seed, cfg.n_chains)
    run.to_csv(out.dir / "snapshots.csv")
    out.tables.append("snapshots.csv")
    target_name, target = "uniform", uniform_measure(grid)
    if beta > 0:
        try:
            target = ma_measure(solve_aubin(GammaParams(-beta, phi0)))
            target_name = "aubin"
        except ConvergenceError:
            pass
    summary = empirical_summary(run, target)
    flat = summary.histogram.masses.sum(axis=1)
    z = -1 + (np.arange(len(flat)) + 0.5) * 2 / len(flat)
    out.series("height_histogram", z, flat, "height", "mass", "pooled empirical mass by height band")
    return {"k": cfg.k, "beta": beta, "target": target_name, "summary": summary.to_json(),
            "diagnostics": run.diagnostics()}


def _verify_cell(cfg, k, gamma):
    grid, phi0, basis, p = _setup(cfg, k, gamma)
    reports = [verify_prop_key_inequality(p, basis, cfg.budget, cfg.seed),
               verify_thm_quantized(p, basis, cfg.budget, cfg.seed)]
    if cfg.main_theorem:
        reports.append(verify_main_theorem(p, basis, cfg.budget, cfg.seed))
    return [r.to_json() for r in reports]


def _verify_rows(reports):
    rows = []
    for r in reports:
        rows.append({"name": r["name"], "k": r["inputs"]["k"], "gamma": r["inputs"]["gamma"], "lhs": r["lhs"],
                     "rhs": r["rhs"], "slack": r["slack"], "stderr": r["stderr"],
                     "slack_factorial": r.get("slack_factorial"), "C": r.get("C")})
    return rows


def _exp_verify(cfg, out):
    reports = _verify_cell(cfg, cfg.k, cfg.exponent)
    out.table("verify", _verify_rows(reports))
    return {"k": cfg.k, "gamma": cfg.exponent, "reports": reports}


def _exp_thresholds(cfg, out):
    grid, phi0, basis, p = _setup(cfg)
    bracket = gamma_k_detect(p, basis, seed=cfg.seed)
    ev = bracket.evidence
    out.series("growth_exponent", ev["gammas"], ev["growth_exponents"], "gamma", "growth_exponent",
               "cluster growth exponent of the partition integrand")
    payload = {"k": cfg.k, "gamma_k_bracket": [bracket.gamma_low, bracket.gamma_high], "evidence": ev}
    if cfg.include_delta:
        est, rays = delta_k_estimate(cfg.k, p, cfg.n_rays, cfg.seed, detail=True)
        payload["delta_k"] = est
        payload["ray_thresholds"] = [r.gamma for r in rays]
        payload["threshold_order"] = bool(bracket.gamma_low <= est)
    out.table("thresholds", [{"k": cfg.k, "gamma_low": bracket.gamma_low, "gamma_high": bracket.gamma_high,
                              "delta_k": payload.get("delta_k")}])
    return payload


def _exp_sweep(cfg, out):
    reports = []
    for k in cfg.ks:
        for g in cfg.gammas:
            cell = out.dir / f"k{k}_gamma{g:g}"
            cell.mkdir(exist_ok=True)
            rep = _verify_cell(cfg, k, g)
            with open(cell / "reports.json", "w") as fh:
                json.dump(_clean(rep), fh, indent=1, sort_keys=True)
            reports += rep
    out.table("sweep", _verify_rows(reports))
    return {"ks": cfg.ks, "gammas": cfg.gammas, "reports": reports}


_DISPATCH = {"gram": _exp_gram, "donaldson": _exp_donaldson, "partition": _exp_partition,
             "sample": _exp_sample, "verify": _exp_verify, "thresholds": _exp_thresholds, "sweep": _exp_sweep}


def run(config):
    """Run one experiment and persist its record; numerical failures land in ``status``."""
    if not isinstance(config, ExperimentConfig):
        try:
            config = ExperimentConfig(**config)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
    digest = config.digest()
    directory = Path(config.output_dir) / f"{config.experiment}-{digest[:12]}"
    directory.mkdir(parents=True, exist_ok=True)
    out = _Outputs(directory)
    started = _now()
    status, message, payload = "ok", "", {}
    try:
        payload = _clean(_DISPATCH[config.experiment](config, out))
    except (ConvergenceError, MonotonicityError, SamplingError) as exc:
        status, message = "non_convergence", f"{type(exc).__name__}: {exc}"
    except (FanoGibbsError, np.linalg.LinAlgError) as exc:
        status, message = "error", f"{type(exc).__name__}: {exc}"
    out.manifest()
    record = RunRecord(digest, config.model_dump(mode="json"), started, _now(), _versions(), payload, status,
                       message, str(directory), list(out.plots))
    record.save(directory / "record.json")
    return record


# --------------------------------------------------------------------------
# reports

REPORT_COLUMNS = ("experiment", "k", "gamma", "lhs", "rhs", "slack", "stderr", "slack_factorial", "C",
                  "gamma_low", "gamma_high", "delta_k")


def report(records):
    """One row per ``(k, gamma)`` result across records, keyed by ``(k, gamma)``."""
    if not records:
        raise ValueError("report needs at least one record")
    rows = []
    for rec in records:
        exp = rec.config["experiment"]
        pl = rec.payload
        if rec.status != "ok":
            rows.append({"experiment": exp, "k": rec.config["k"], "status": rec.status})
            continue
        if exp in ("verify", "sweep"):
            by_cell = {}
            for r in pl["reports"]:
                key = (r["inputs"]["k"], r["inputs"]["gamma"])
                row = by_cell.setdefault(key, {"experiment": exp, "k": key[0], "gamma": key[1]})
                if r["name"] == "thm_quantized":
                    row.update(lhs=r["lhs"], rhs=r["rhs"], slack=r["slack"], stderr=r["stderr"],
                               slack_factorial=r.get("slack_factorial"))
                elif r["name"] == "main_theorem":
                    row["C"] = r.get("C")
                elif "slack" not in row:
                    row.update(lhs=r["lhs"], rhs=r["rhs"], slack=r["slack"], stderr=r["stderr"],
                               slack_factorial=r.get("slack_factorial"))
            rows += list(by_cell.values())
        elif exp == "thresholds":
            lo, hi = pl["gamma_k_bracket"]
            rows.append({"experiment": exp, "k": pl["k"], "gamma_low": lo, "gamma_high": hi,
                         "delta_k": pl.get("delta_k")})
        elif exp == "partition":
            rows.append({"experiment": exp, "k": pl["k"], "gamma": pl["gamma"],
                         "lhs": pl["monte_carlo"]["log_z"], "stderr": pl["monte_carlo"]["stderr"]})
        else:
            rows.append({"experiment": exp, "k": pl.get("k"), "gamma": pl.get("gamma")})
    rows.sort(key=lambda r: (r.get("k") or 0, r.get("gamma") if r.get("gamma") is not None else -math.inf))
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render_markdown(rows):
    cols = [c for c in REPORT_COLUMNS + ("status",) if any(c in r for r in rows)]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(_fmt(r.get(c)) for c in cols) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def render_csv(rows):
    cols = [c for c in REPORT_COLUMNS + ("status",) if any(c in r for r in rows)]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c, "") for c in cols})
    return buf.getvalue()


def _collect_records(paths):
    records = []
    for p in map(Path, paths):
        if p.is_file():
            records.append(RunRecord.load(p))
        elif (p / "record.json").exists():
            records.append(RunRecord.load(p))
        else:
            records += [RunRecord.load(f) for f in sorted(p.glob("*/record.json"))]
    return records


# --------------------------------------------------------------------------
# entry point

def main(argv=None):
    parser = argparse.ArgumentParser(prog="fano-gibbs", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
    rp = sub.add_parser("report", help="tabulate saved records")
    rp.add_argument("paths", nargs="+")
    rp.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    args = parser.parse_args(argv)

    if args.command == "report":
        try:
            records = _collect_records(args.paths)
            rows = report(records)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        sys.stdout.write(render_markdown(rows) if args.format == "markdown" else render_csv(rows))
        return EXIT_OK

    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        if cfg.experiment != args.command:
            raise ConfigError(f"config is for '{cfg.experiment}', not '{args.command}'")
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    record = run(cfg)
    print(json.dumps({"status": record.status, "directory": record.directory,
                      "payload_hash": record.payload_hash, "message": record.message}))
    if record.status == "non_convergence":
        return EXIT_NUMERICAL
    return EXIT_OK if record.status == "ok" else EXIT_NUMERICAL
