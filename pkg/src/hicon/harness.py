"""Experiment configuration, the epsilon-sweep driver, and report files."""
from __future__ import annotations

import logging
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .energy import EnergyModel, LoadSpec, minimize_total
from .geometry import CompositeGeometry, InclusionShape
from .homogenize import (EffectiveForm, LimitSolution, effective_form, limit_large_solve, limit_loads,
                         limit_small_solve, macro_grid)
from .material import law_from_name
from .mesh import CellMesh, MacroMesh
from .splitting import apriori_ratio, high_contrast_poincare_ratio, rigidity_report, split
from .twoscale import two_scale_distance

log = logging.getLogger(__name__)

COLUMNS = ("eps", "lambda_eps", "scaled_infimum", "gap_to_limit", "apriori_ratio", "poincare_ratio",
           "rigidity_ratio", "d0", "d1", "dpsi", "walltime_s", "status")

# seed offsets per stage
LIMIT_SEED = 1
ROW_SEED = 1000


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "geometry.eps_list": "1/4,1/8,1/16",
    "geometry.gamma": "1",
    "geometry.inclusion": "centered-square",
    "geometry.inclusion_size": "0.25",
    "geometry.gamma_boundary": "full-boundary",
    "geometry.omega": "1,1",
    "mesh.m": "8",
    "material.w0": "dist2",
    "material.w1": "dist2",
    "load.regime": "small-strain",
    "load.profile": "sin-sin",
    "load.amplitude": "1",
    "load.soft_profile": "none",
    "solver.tol": "1e-8",
    "solver.max_iter": "5000",
    "solver.multistart": "3",
    "solver.limit_multistart": "5",
    "solver.limit_quadrature": "16",
    "output.dir": "",
    "output.record_walltime": "false",
    "seed": "0",
}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        vals = dict(DEFAULTS)
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            vals[key] = value
        cfg = cls(vals)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def override(self, key: str, value) -> "ExperimentConfig":
        vals = dict(self.values)
        vals[key] = str(value)
        cfg = ExperimentConfig(vals)
        cfg.validate()
        return cfg

    def echo(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in DEFAULTS)

    # typed accessors
    @property
    def eps_list(self) -> list[Fraction]:
        return [Fraction(s.strip()) for s in self.values["geometry.eps_list"].split(",") if s.strip()]

    @property
    def gamma(self) -> float:
        return float(Fraction(self.values["geometry.gamma"]))

    @property
    def inclusion(self) -> InclusionShape:
        return InclusionShape(self.values["geometry.inclusion"], float(self.values["geometry.inclusion_size"]))

    @property
    def omega(self) -> tuple[float, float]:
        a, b = (float(s) for s in self.values["geometry.omega"].split(","))
        return (a, b)

    @property
    def m(self) -> int:
        return int(self.values["mesh.m"])

    @property
    def load(self) -> LoadSpec:
        v = self.values
        return LoadSpec(v["load.regime"], v["load.profile"], float(v["load.amplitude"]), v["load.soft_profile"])

    @property
    def laws(self):
        return law_from_name(self.values["material.w0"]), law_from_name(self.values["material.w1"])

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def record_walltime(self) -> bool:
        return _parse_bool(self.values["output.record_walltime"])

    def solver(self, key: str, kind=float):
        return kind(self.values[f"solver.{key}"])

    def geometry(self, eps: Fraction) -> CompositeGeometry:
        return CompositeGeometry(epsilon=eps, gamma_exponent=self.gamma, inclusion=self.inclusion,
                                 omega=self.omega, gamma_boundary=self.values["geometry.gamma_boundary"])

    def validate(self):
        try:
            eps = self.eps_list
            if not eps:
                raise ConfigError("geometry.eps_list is empty")
            for e in eps:
                if e <= 0 or e.numerator != 1:
                    raise ConfigError(f"epsilon {e} is not of the form 1/n")
            if any(a <= b for a, b in zip(eps, eps[1:])):
                raise ConfigError("geometry.eps_list must be strictly decreasing")
            if not 0 < self.gamma <= 1:
                raise ConfigError("geometry.gamma must lie in (0, 1]")
            load = self.load
            if load.regime == "finite-strain" and self.gamma >= 1:
                raise ConfigError("the finite-strain preset requires gamma < 1")
            if load.amplitude == 0 or not math.isfinite(load.amplitude):
                raise ConfigError("load.amplitude must be nonzero (lambda_eps would vanish)")
            if self.m < 4 or self.m % 2:
                raise ConfigError("mesh.m must be an even integer >= 4")
            self.laws
            for e in eps:
                self.geometry(e)
            _parse_bool(self.values["output.record_walltime"])
            for key, kind in (("tol", float), ("max_iter", int), ("multistart", int),
                              ("limit_multistart", int), ("limit_quadrature", int)):
                self.solver(key, kind)
            self.seed
        except ConfigError:
            raise
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class ConvergenceReport:
    rows: list
    limit_row: dict
    effective: EffectiveForm
    limit: LimitSolution
    seed: int
    extras: dict = field(default_factory=dict)


def compute_limit(cfg: ExperimentConfig, cell: CellMesh | None = None):
    W0, W1 = cfg.laws
    cell = cell or CellMesh(cfg.m, cfg.inclusion)
    eff = effective_form(W1.quad_form, cell)
    loads = limit_loads(cfg.load, cell, cfg.omega, cfg.gamma, nq=cfg.solver("limit_quadrature", int))
    h = float(min(cfg.eps_list)) / cfg.m
    grid = macro_grid(cfg.omega, h)
    gb = cfg.values["geometry.gamma_boundary"]
    if cfg.load.regime == "finite-strain":
        sol = limit_large_solve(eff, W0, loads, grid, cell, multistart=cfg.solver("limit_multistart", int),
                                seed=cfg.seed + LIMIT_SEED, gamma_boundary=gb)
    else:
        sol = limit_small_solve(eff, W0.quad_form, loads, grid, cell, gamma_boundary=gb)
    return eff, loads, sol


def run_row(cfg: ExperimentConfig, eps: Fraction, index: int, sol: LimitSolution) -> dict:
    t0 = time.perf_counter()
    row = {"eps": eps}
    try:
        geom = cfg.geometry(eps)
        mesh = MacroMesh(geom, cfg.m)
        W0, W1 = cfg.laws
        model = EnergyModel(mesh, W0, W1, cfg.load)
        multistart = cfg.solver("multistart", int) if cfg.load.regime == "finite-strain" else 1
        phi, rep, trace = minimize_total(cfg.load, (W0, W1), model=model, tol=cfg.solver("tol"),
                                         maxiter=cfg.solver("max_iter", int), multistart=multistart,
                                         seed=cfg.seed + ROW_SEED * (index + 1))
        s = split(phi / model.lam, mesh)
        d0, d1, dpsi = two_scale_distance(s, mesh, sol.limit)
        rig = rigidity_report(mesh.nodes + phi.reshape(-1, 2), mesh, "stiff", "identity-on-Gamma")
        status = "ok" if trace.converged else f"not-converged: {trace.message}"
        spread = trace.spread
        if trace.start_values and spread > 0.1 * abs(sol.m0):
            status = "spread-exceeded" if status == "ok" else status + "; spread-exceeded"
        row.update(lambda_eps=model.lam, scaled_infimum=rep.scaled_total, gap_to_limit=abs(rep.scaled_total - sol.m0),
                   apriori_ratio=apriori_ratio(phi, model), poincare_ratio=high_contrast_poincare_ratio(phi, mesh),
                   rigidity_ratio=rig.ratio_full, d0=d0, d1=d1, dpsi=dpsi, status=status,
                   spread=spread, iterations=trace.iterations)
    except Exception as exc:  # recorded per row, the sweep continues
        log.exception("row eps=%s failed", eps)
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    row["walltime_s"] = time.perf_counter() - t0
    return row


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ConvergenceReport:
    t0 = time.perf_counter()
    eff, loads, sol = compute_limit(cfg)
    t_limit = time.perf_counter() - t0
    eps_list = cfg.eps_list
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda a: run_row(cfg, a[1], a[0], sol), enumerate(eps_list)))
    else:
        rows = [run_row(cfg, e, k, sol) for k, e in enumerate(eps_list)]
    parts = sol.parts
    resum = (parts["soft_energy"] + parts["stiff_energy"]) - (parts["soft_load"] + parts["stiff_load"])
    status = "ok" if abs(resum - sol.m0) <= 1e-10 * max(1.0, abs(sol.m0)) else "inconsistent-parts"
    if not sol.converged:
        status = "not-converged"
    limit_row = {"eps": "limit", "lambda_eps": loads.kappa, "scaled_infimum": sol.m0, "status": status,
                 "walltime_s": t_limit}
    return ConvergenceReport(rows, limit_row, eff, sol, cfg.seed)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}" if value.denominator != 1 else str(value.numerator)
    v = float(value)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def _csv_field(s: str) -> str:
    if any(c in s for c in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def report_csv(report: ConvergenceReport, record_walltime: bool = False) -> str:
    lines = [",".join(COLUMNS)]
    for row in [*report.rows, report.limit_row]:
        cells = []
        for col in COLUMNS:
            if col == "walltime_s" and not record_walltime:
                cells.append("")
            else:
                cells.append(_csv_field(_fmt(row.get(col))))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def tensor_csv(eff: EffectiveForm) -> str:
    C = eff.form.tensor
    lines = ["i,j,k,l,value"]
    for i in range(2):
        for j in range(2):
            for k in range(2):
                for l in range(2):
                    lines.append(f"{i},{j},{k},{l},{_fmt(C[i, j, k, l])}")
    return "\n".join(lines) + "\n"


def convergence_svg(eps, gaps, width: int = 480, height: int = 360) -> str:
    """Log-log polyline of gap against epsilon with decade ticks."""
    pts = [(float(e), float(g)) for e, g in zip(eps, gaps) if g is not None and float(g) > 0 and math.isfinite(float(g))]
    ml, mr, mt, mb = 70, 20, 20, 50
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>']
    if not pts:
        out.append(f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle">no finite gaps</text></svg>')
        return "\n".join(out) + "\n"
    lx = [math.log10(p[0]) for p in pts]
    ly = [math.log10(p[1]) for p in pts]
    x0, x1 = math.floor(min(lx)), math.ceil(max(lx))
    y0, y1 = math.floor(min(ly)), math.ceil(max(ly))
    x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * (width - ml - mr)

    def sy(v):
        return height - mb - (v - y0) / (y1 - y0) * (height - mt - mb)

    out.append(f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>')
    out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>')
    for d in range(x0, x1 + 1):
        x = sx(d)
        out.append(f'<line x1="{x:.2f}" y1="{height - mb}" x2="{x:.2f}" y2="{height - mb + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{height - mb + 18}" font-size="11" text-anchor="middle">1e{d}</text>')
    for d in range(y0, y1 + 1):
        y = sy(d)
        out.append(f'<line x1="{ml - 5}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">1e{d}</text>')
    poly = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(lx, ly))
    out.append(f'<polyline points="{poly}" fill="none" stroke="steelblue" stroke-width="2"/>')
    for a, b in zip(lx, ly):
        out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="steelblue"/>')
    out.append(f'<text x="{(ml + width - mr) / 2}" y="{height - 10}" font-size="12" text-anchor="middle">eps</text>')
    out.append(f'<text x="15" y="{(mt + height - mb) / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 15 {(mt + height - mb) / 2})">gap to limit</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def resolve_out_dir(cfg: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.values["output.dir"]:
        return Path(cfg.values["output.dir"])
    return Path(os.environ.get("HICON_OUT", "hicon-out"))


def ensure_writable(out: Path):
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out):
            pass
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc


def write_text(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def emit_outputs(report: ConvergenceReport | None, cfg: ExperimentConfig, out_dir=None) -> list[Path]:
    if report is None or not report.rows:
        raise ValueError("nothing to write: the report is empty")
    out = resolve_out_dir(cfg, out_dir)
    ensure_writable(out)
    files = {
        "report.csv": report_csv(report, cfg.record_walltime),
        "effective_tensor.csv": tensor_csv(report.effective),
        "convergence.svg": convergence_svg([float(r["eps"]) for r in report.rows],
                                           [r.get("gap_to_limit") for r in report.rows]),
        "config.echo": cfg.echo(),
        "timing.txt": "".join(f"{_fmt(r['eps'])} {r['walltime_s']:.3f}\n" for r in [*report.rows, report.limit_row]),
    }
    paths = []
    for name, text in files.items():
        write_text(out / name, text)
        paths.append(out / name)
    return paths
