"""Command line entry point: ``stratlab <command> --config run.yaml``.

Every command writes into one workspace directory (config snapshot,
checkpoints, CSV tables).  ``report`` re-reads whatever is there and exits
nonzero when any check fails.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import traceback
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import convergence_harness as H
from . import dispersion_lab as DL
from .boussinesq_solver import SolverConfig, simulate_difference, simulate_sepsilon, write_checkpoint
from .errors import ConfigError, StratlabError
from .limit_solvers import Heat1DState, VorticityState, heat1d_series, solve_sns
from .spectral_core import Grid1, Grid3, SpectralField4, set_workers
from .wave_algebra import PhysicsParams

log = logging.getLogger("stratlab")

COMMANDS = ("simulate", "limit", "diff", "sweep", "dispersion", "kernel", "report")
CRITICAL_BETA = DL.BETA_CRIT


# ------------------------------------------------------------------ config


@dataclass
class GridSection:
    n: int = 48
    box_length: float = 2 * math.pi


@dataclass
class PhysicsSection:
    nu: float = 0.05
    nu_prime: float = 0.05
    epsilon: float | None = None
    epsilons: list | None = None


@dataclass
class TimeSection:
    dt: float = 1e-3
    t_final: float = 1.0
    sample_stride: int = 10


@dataclass
class IcSection:
    seed: int = 0
    spectrum_peak: float = 4.0
    amplitude_strat: float = 0.5
    amplitude_osc: float = 1.0
    theta_profile: list = field(default_factory=lambda: [[1, 0.5, 0.0], [2, 0.0, 0.25]])
    envelope_width: float | None = 0.6


@dataclass
class TruncationSection:
    m: float = 1 / 320
    M: float = 1 / 320


@dataclass
class NormsSection:
    q_list: list = field(default_factory=lambda: [3, 4, 5])


@dataclass
class OutputSection:
    dir: str = "stratlab_run"


@dataclass
class DispersionSection:
    sigma_min: float = 1e2
    sigma_max: float = 1e6
    samples: int = 21
    R_list: list = field(default_factory=lambda: [2.0, 4.0])
    small_betas: list = field(default_factory=lambda: [0.0, 0.05])
    small_R: float = 2.0
    small_sigma_min: float = 1e4
    small_sigma_max: float = 1e8


@dataclass
class KernelSection:
    sigma_min: float = 16.0
    sigma_max: float = 4096.0
    samples: int = 9


SECTIONS = {
    "grid": GridSection,
    "physics": PhysicsSection,
    "time": TimeSection,
    "ic": IcSection,
    "truncation": TruncationSection,
    "norms": NormsSection,
    "output": OutputSection,
    "dispersion": DispersionSection,
    "kernel": KernelSection,
}


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    time: TimeSection = field(default_factory=TimeSection)
    ic: IcSection = field(default_factory=IcSection)
    truncation: TruncationSection = field(default_factory=TruncationSection)
    norms: NormsSection = field(default_factory=NormsSection)
    output: OutputSection = field(default_factory=OutputSection)
    dispersion: DispersionSection = field(default_factory=DispersionSection)
    kernel: KernelSection = field(default_factory=KernelSection)
    warnings: list = field(default_factory=list)

    @property
    def epsilon_list(self) -> list:
        p = self.physics
        return list(p.epsilons) if p.epsilons is not None else [p.epsilon]

    def params(self, epsilon: float | None = None) -> PhysicsParams:
        eps = epsilon if epsilon is not None else self.epsilon_list[0]
        return PhysicsParams(self.physics.nu, self.physics.nu_prime, eps)

    def grid3(self) -> Grid3:
        return Grid3(self.grid.n, self.grid.box_length)

    def ic_spec(self) -> H.InitialDataSpec:
        ic = self.ic
        return H.InitialDataSpec(ic.seed, ic.spectrum_peak, ic.amplitude_strat, ic.amplitude_osc,
                                 tuple(tuple(t) for t in ic.theta_profile), True, ic.envelope_width)

    def snapshot(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}


def _number(path, value, kind=float, positive=False, nonneg=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if positive and not value > 0:
        raise ConfigError(path, f"must be > 0, got {value}")
    if nonneg and value < 0:
        raise ConfigError(path, f"must be >= 0, got {value}")
    return value


def _list(path, value, min_len=1):
    if not isinstance(value, (list, tuple)) or len(value) < min_len:
        raise ConfigError(path, f"expected a list with at least {min_len} entries")
    return list(value)


def _validate(cfg: RunConfig) -> None:
    g = cfg.grid
    g.n = _number("grid.n", g.n, int, positive=True)
    if g.n < 8 or g.n % 2:
        raise ConfigError("grid.n", f"must be an even integer >= 8, got {g.n}")
    g.box_length = _number("grid.box_length", g.box_length, positive=True)

    p = cfg.physics
    p.nu = _number("physics.nu", p.nu, positive=True)
    p.nu_prime = _number("physics.nu_prime", p.nu_prime, positive=True)
    if p.epsilon is None and p.epsilons is None:
        raise ConfigError("physics", "one of epsilon or epsilons is required")
    p.epsilon = _number("physics.epsilon", p.epsilon, positive=True, allow_none=True)
    if p.epsilons is not None:
        eps = [_number(f"physics.epsilons[{i}]", e, positive=True) for i, e in enumerate(_list("physics.epsilons", p.epsilons))]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("physics.epsilons", "must be strictly decreasing")
        p.epsilons = eps

    t = cfg.time
    t.dt = _number("time.dt", t.dt, positive=True)
    t.t_final = _number("time.t_final", t.t_final, positive=True)
    t.sample_stride = _number("time.sample_stride", t.sample_stride, int, positive=True)

    ic = cfg.ic
    ic.seed = _number("ic.seed", ic.seed, int, nonneg=True)
    if ic.seed >= 2**64:
        raise ConfigError("ic.seed", "must fit in 64 bits")
    ic.spectrum_peak = _number("ic.spectrum_peak", ic.spectrum_peak, positive=True)
    if ic.spectrum_peak >= g.n / 3:
        raise ConfigError("ic.spectrum_peak", f"must lie below the dealiasing cutoff n/3 = {g.n / 3:.6g}")
    ic.amplitude_strat = _number("ic.amplitude_strat", ic.amplitude_strat, nonneg=True)
    ic.amplitude_osc = _number("ic.amplitude_osc", ic.amplitude_osc, nonneg=True)
    ic.envelope_width = _number("ic.envelope_width", ic.envelope_width, positive=True, allow_none=True)
    prof = []
    for i, entry in enumerate(_list("ic.theta_profile", ic.theta_profile, 0)):
        path = f"ic.theta_profile[{i}]"
        e = _list(path, entry, 3)
        if len(e) != 3:
            raise ConfigError(path, "expected [mode, cos_coeff, sin_coeff]")
        mode = _number(path + "[0]", e[0], int, positive=True)
        if mode >= g.n // 3:
            raise ConfigError(path + "[0]", f"mode must be below n/3 = {g.n // 3}")
        prof.append([mode, _number(path + "[1]", e[1]), _number(path + "[2]", e[2])])
    ic.theta_profile = prof

    tr = cfg.truncation
    tr.m = _number("truncation.m", tr.m, nonneg=True)
    tr.M = _number("truncation.M", tr.M, nonneg=True)
    if p.nu != p.nu_prime and 3 * tr.M + tr.m >= 1:
        raise ConfigError("truncation", f"admissibility requires 3M + m < 1 when nu != nu' (got {3 * tr.M + tr.m:.6g})")

    qs = [_number(f"norms.q_list[{i}]", q) for i, q in enumerate(_list("norms.q_list", cfg.norms.q_list))]
    for i, q in enumerate(qs):
        if not 2 < q < 6:
            raise ConfigError(f"norms.q_list[{i}]", f"q must lie in (2, 6), got {q}")
    cfg.norms.q_list = [int(q) if q == int(q) else q for q in qs]

    if not isinstance(cfg.output.dir, str) or not cfg.output.dir:
        raise ConfigError("output.dir", "expected a nonempty path")

    d = cfg.dispersion
    for name in ("sigma_min", "sigma_max", "small_sigma_min", "small_sigma_max", "small_R"):
        setattr(d, name, _number(f"dispersion.{name}", getattr(d, name), positive=True))
    d.samples = _number("dispersion.samples", d.samples, int, positive=True)
    if d.samples < 8:
        raise ConfigError("dispersion.samples", "rate fits need at least 8 samples")
    for lo, hi in (("sigma_min", "sigma_max"), ("small_sigma_min", "small_sigma_max")):
        if getattr(d, hi) / getattr(d, lo) < 100 * (1 - 1e-12):
            raise ConfigError(f"dispersion.{hi}", "the sigma range must span at least 2 decades")
    d.R_list = [_number(f"dispersion.R_list[{i}]", r, positive=True) for i, r in enumerate(_list("dispersion.R_list", d.R_list))]
    for i, r in enumerate(d.R_list + [d.small_R]):
        if r <= 1:
            raise ConfigError("dispersion.R_list" if i < len(d.R_list) else "dispersion.small_R", "R must exceed alpha = 1")
    d.small_betas = [_number(f"dispersion.small_betas[{i}]", b, nonneg=True)
                     for i, b in enumerate(_list("dispersion.small_betas", d.small_betas, 0))]

    k = cfg.kernel
    k.sigma_min = _number("kernel.sigma_min", k.sigma_min, positive=True)
    k.sigma_max = _number("kernel.sigma_max", k.sigma_max, positive=True)
    k.samples = _number("kernel.samples", k.samples, int, positive=True)
    if k.samples < 2 or k.sigma_max <= k.sigma_min:
        raise ConfigError("kernel", "need at least 2 samples over an increasing sigma range")


def parse_config(source) -> RunConfig:
    """Parse and validate a YAML document given as a path or as text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = yaml.safe_load(text) if text and text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError("<document>", f"not valid YAML: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "top level must be a mapping")
    cfg = RunConfig()
    for key, body in doc.items():
        if key not in SECTIONS:
            cfg.warnings.append(f"unknown section {key!r} ignored")
            continue
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(key, "section must be a mapping")
        section = getattr(cfg, key)
        names = {f.name for f in fields(section)}
        for k, v in body.items():
            if k not in names:
                cfg.warnings.append(f"unknown key {key}.{k} ignored")
                continue
            setattr(section, k, v)
    _validate(cfg)
    for w in cfg.warnings:
        warnings.warn(w, stacklevel=2)
    return cfg


# ------------------------------------------------------------------ output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_table(path: Path, columns, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path: Path, columns) -> list[dict]:
    """Read a table written by ``write_table`` and check its header."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != tuple(columns):
        raise ConfigError(str(path), f"unexpected header {rows[0] if rows else None}")
    out = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(columns):
            raise ConfigError(f"{path}:{i}", "wrong number of fields")
        rec = {}
        for c, v in zip(columns, r):
            try:
                rec[c] = float(v)
            except ValueError:
                rec[c] = v
        out.append(rec)
    return out


ENERGY_COLUMNS = ("t", "l2_sq", "grad_v_sq", "grad_theta_sq", "max_div")
LIMIT_COLUMNS = ("t", "v_h_l2_sq", "theta_l2_sq")
DISP_FIT_COLUMNS = ("label", "beta", "R") + DL.FIT_COLUMNS + ("target", "tolerance", "witness_c")
KERNEL_COLUMNS = ("sigma", "sup_abs", "x1", "x3", "evaluations")
KERNEL_FIT_COLUMNS = DL.FIT_COLUMNS + ("target", "tolerance")
SUMMARY_COLUMNS = ("q", "regime", "fitted_exponent", "r_squared", "theoretical_exponent", "global_reference")
REPORT_COLUMNS = ("check", "value", "threshold", "passed")


class Workspace:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.root / name

    def save_config(self, cfg: RunConfig) -> None:
        self.path("config.yaml").write_text(yaml.safe_dump(cfg.snapshot(), sort_keys=True))


def _energy_rows(diag: dict):
    return zip(*(diag[c] for c in ENERGY_COLUMNS))


# ---------------------------------------------------------------- commands


def _data(cfg: RunConfig):
    return H.build_initial_data(cfg.ic_spec(), cfg.grid3())


def cmd_simulate(cfg: RunConfig, ws: Workspace) -> int:
    params = cfg.params()
    U0, theta0, _ = _data(cfg)
    sc = SolverConfig(params, cfg.time.dt, cfg.time.t_final, sample_stride=cfg.time.sample_stride)
    traj = simulate_sepsilon(U0, theta0, sc)
    states = traj.states
    write_checkpoint(ws.path("simulate.bqs"), U0.with_coeffs(states.coeffs[-1]), params, float(states.times[-1]))
    np.savez(ws.path("simulate_trajectory.npz"), times=states.times, coeffs=states.coeffs)
    write_table(ws.path("energy.csv"), ENERGY_COLUMNS, _energy_rows(traj.diag))
    return 0


def _limit(cfg: RunConfig, stride: int):
    U0, theta0, v0 = _data(cfg)
    grid = cfg.grid3()
    sns = solve_sns(VorticityState.from_velocity(v0, grid, cfg.physics.nu), t_final=cfg.time.t_final,
                    dt=cfg.time.dt, sample_stride=stride)
    theta = Heat1DState(Grid1(grid.n, grid.box_length), theta0, cfg.physics.nu_prime)
    return U0, theta0, v0, sns, theta


def cmd_limit(cfg: RunConfig, ws: Workspace) -> int:
    _, _, _, sns, theta = _limit(cfg, cfg.time.sample_stride)
    grid = sns.grid
    th = heat1d_series(theta, sns.times)
    np.savez(ws.path("limit_trajectory.npz"), times=sns.times, omega_v_h=sns.coeffs, theta=th.coeffs[:, 0])
    rows = []
    for i, t in enumerate(sns.times):
        v = np.asarray(sns.coeffs[i])[1:]
        rows.append((t, grid.volume * float(np.sum(np.abs(v) ** 2)),
                     grid.box_length * float(np.sum(np.abs(th.coeffs[i]) ** 2))))
    write_table(ws.path("limit.csv"), LIMIT_COLUMNS, rows)
    return 0


def cmd_diff(cfg: RunConfig, ws: Workspace) -> int:
    params = cfg.params()
    U0, _, v0, sns, theta = _limit(cfg, cfg.time.sample_stride)
    D0 = U0.with_coeffs(H.difference_coeffs(np.asarray(U0.coeffs), v0, np.zeros(cfg.grid.n)))
    sc = SolverConfig(params, cfg.time.dt, cfg.time.t_final, sample_stride=cfg.time.sample_stride)
    traj = simulate_difference(D0, sns, theta, None, sc)
    states = traj.states
    write_checkpoint(ws.path("diff.bqs"), D0.with_coeffs(states.coeffs[-1]), params, float(states.times[-1]))
    write_table(ws.path("diff_energy.csv"), ENERGY_COLUMNS, _energy_rows(traj.diag))
    rows = []
    for q in cfg.norms.q_list:
        t, vals, agg = H.osc_norm_series(traj, q)
        rows.extend((ti, q, v, a) for ti, v, a in zip(t, vals, agg))
    write_table(ws.path("diff_osc.csv"), ("t", "q", "osc_Lq", "osc_L2tLq"), rows)
    return 0


def cmd_sweep(cfg: RunConfig, ws: Workspace) -> int:
    physics = cfg.params()
    eps = cfg.epsilon_list
    window = (cfg.truncation.m, cfg.truncation.M)
    solver = {"dt": cfg.time.dt, "t_final": cfg.time.t_final, "norm_stride": cfg.time.sample_stride}
    res = H.run_sweep(eps, cfg.ic_spec(), physics, solver, tuple(cfg.norms.q_list), grid=cfg.grid3(),
                      window=window, output_dir=ws.root)
    grid = cfg.grid3()
    for i, run in enumerate(res.runs):
        p = physics.with_epsilon(run.epsilon)
        write_checkpoint(ws.path(f"sweep_eps{i}.bqs"), SpectralField4(grid, run.final_state), p, cfg.time.t_final)
    return 0


def _witness(rows, exponent):
    return min(r["value"] * r["sigma"] ** (-exponent) for r in rows)


def cmd_dispersion(cfg: RunConfig, ws: Workspace) -> int:
    d = cfg.dispersion
    sig = DL.log_samples(d.sigma_min, d.sigma_max, d.samples)
    small_sig = DL.log_samples(d.small_sigma_min, d.small_sigma_max, d.samples)
    rows, fits = [], []
    for R in d.R_list:
        part = DL.I_rows([CRITICAL_BETA], [R], sig)
        rows.extend(part)
        f = DL.fit_decay([(r["sigma"], r["value"]) for r in part])
        fits.append(("critical", CRITICAL_BETA, R, f, -0.25, 0.03, _witness(part, -0.25)))
    for b in d.small_betas:
        part = DL.I_rows([b], [d.small_R], small_sig)
        rows.extend(part)
        f = DL.fit_decay([(r["sigma"], r["value"]) for r in part])
        fits.append(("small_beta", b, d.small_R, f, -0.5, 0.05, _witness(part, -0.5)))
    DL.write_csv(ws.path("dispersion_I.csv"), rows, DL.I_COLUMNS)
    out = []
    for label, b, R, f, target, tol, wit in fits:
        fr = DL.fit_row(f)
        out.append((label, b, R) + tuple(fr[c] for c in DL.FIT_COLUMNS) + (target, tol, wit))
    write_table(ws.path("dispersion_fits.csv"), DISP_FIT_COLUMNS, out)
    return 0


def cmd_kernel(cfg: RunConfig, ws: Workspace) -> int:
    k = cfg.kernel
    sig = DL.log_samples(k.sigma_min, k.sigma_max, k.samples)
    rows = []
    for s in sig:
        r = DL.kernel_K0_search(float(s))
        rows.append((float(s), r.value, r.x1, r.x3, r.evaluations))
    write_table(ws.path("kernel.csv"), KERNEL_COLUMNS, rows)
    f = DL.loglog_fit([r[0] for r in rows], [r[1] for r in rows])
    fr = DL.fit_row(f)
    write_table(ws.path("kernel_fit.csv"), KERNEL_FIT_COLUMNS,
                [tuple(fr[c] for c in DL.FIT_COLUMNS) + (-0.5, 0.1)])
    return 0


# ------------------------------------------------------------------ report


def _energy_checks(name, rows, out):
    l2 = np.array([r["l2_sq"] for r in rows])
    scale = max(float(l2.max()), 1e-300)
    growth = float(np.max(np.diff(l2), initial=0.0)) / scale
    out.append((f"{name}: energy nonincreasing", growth, 1e-6, growth <= 1e-6))
    div = max(r["max_div"] for r in rows)
    out.append((f"{name}: divergence free", div, 1e-10, div <= 1e-10))


def collect_checks(root) -> list[tuple]:
    """Evaluate every acceptance check whose artifacts exist under ``root``."""
    ws = Path(root)
    out = []
    if (ws / "energy.csv").exists():
        _energy_checks("simulate", read_table(ws / "energy.csv", ENERGY_COLUMNS), out)
    if (ws / "diff_energy.csv").exists():
        rows = read_table(ws / "diff_energy.csv", ENERGY_COLUMNS)
        div = max(r["max_div"] for r in rows)
        out.append(("diff: divergence free", div, 1e-10, div <= 1e-10))
    if (ws / "limit.csv").exists():
        rows = read_table(ws / "limit.csv", LIMIT_COLUMNS)
        e = np.array([r["v_h_l2_sq"] + r["theta_l2_sq"] for r in rows])
        growth = float(np.max(np.diff(e), initial=0.0)) / max(float(e.max()), 1e-300)
        out.append(("limit: energy nonincreasing", growth, 1e-6, growth <= 1e-6))
    if (ws / "sweep.csv").exists():
        rows = read_table(ws / "sweep.csv", H.SWEEP_COLUMNS)
        summary = read_table(ws / "sweep_summary.csv", SUMMARY_COLUMNS)
        for srow in summary:
            q = srow["q"]
            sel = sorted((r for r in rows if r["q"] == q), key=lambda r: -r["epsilon"])
            norms = np.array([r["norm_osc_L2tLq"] for r in sel])
            dec = bool(np.all(np.diff(norms) < 0))
            out.append((f"sweep q={q:g}: strictly decreasing in eps", float(np.max(np.diff(norms))), 0.0, dec))
            use = [r for r in sel if r["admissible_flag"] == 1]
            if len(use) >= 2:
                f = DL.loglog_fit([r["epsilon"] for r in use], [r["norm_osc_L2tLq"] for r in use])
                need = max(srow["theoretical_exponent"] - 0.01, 0.05)
                out.append((f"sweep q={q:g}: fitted exponent", f.exponent, need, f.exponent >= need))
            else:
                out.append((f"sweep q={q:g}: fitted exponent", float("nan"), 0.05, False))
    if (ws / "dispersion_fits.csv").exists():
        for r in read_table(ws / "dispersion_fits.csv", DISP_FIT_COLUMNS):
            err = abs(r["exponent"] - r["target"])
            out.append((f"dispersion {r['label']} beta={r['beta']:.6g} R={r['R']:g}: exponent",
                        r["exponent"], r["tolerance"], err <= r["tolerance"]))
            if r["label"] == "critical":
                out.append((f"dispersion critical R={r['R']:g}: lower-bound constant", r["witness_c"], 0.0,
                            r["witness_c"] > 0))
    if (ws / "dispersion_I.csv").exists():
        read_table(ws / "dispersion_I.csv", DL.I_COLUMNS)
    if (ws / "kernel_fit.csv").exists():
        read_table(ws / "kernel.csv", KERNEL_COLUMNS)
        for r in read_table(ws / "kernel_fit.csv", KERNEL_FIT_COLUMNS):
            err = abs(r["exponent"] - r["target"])
            out.append(("kernel K0: sup decay exponent", r["exponent"], r["tolerance"], err <= r["tolerance"]))
    return out


def cmd_report(cfg: RunConfig | None, ws: Workspace) -> int:
    checks = collect_checks(ws.root)
    write_table(ws.path("report.csv"), REPORT_COLUMNS, checks)
    for name, value, thr, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {value:.6g} (threshold {thr:.6g})")
    if not checks:
        print("no artifacts to report on", file=sys.stderr)
        return 1
    return 0 if all(c[3] for c in checks) else 1


HANDLERS = {
    "simulate": cmd_simulate,
    "limit": cmd_limit,
    "diff": cmd_diff,
    "sweep": cmd_sweep,
    "dispersion": cmd_dispersion,
    "kernel": cmd_kernel,
    "report": cmd_report,
}


def run_command(command: str, cfg: RunConfig, output: str | Path | None = None) -> int:
    if command not in HANDLERS:
        raise ConfigError("command", f"unknown command {command!r}")
    ws = Workspace(output or cfg.output.dir)
    if command != "report":
        ws.save_config(cfg)
    return HANDLERS[command](cfg, ws)


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stratlab", description="Strongly stratified Boussinesq laboratory")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--output", help="workspace directory (overrides output.dir)")
    ap.add_argument("--threads", type=int, default=None, help="FFT worker threads")
    ap.add_argument("--seed", type=int, default=None, help="initial-data seed (overrides ic.seed)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _origin(exc: BaseException) -> str:
    tb = traceback.extract_tb(exc.__traceback__)
    for frame in reversed(tb):
        p = Path(frame.filename)
        if p.parent.name == "stratlab":
            return f"stratlab.{p.stem}"
    return "stratlab"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads", "must be >= 1")
            set_workers(args.threads)
        if args.config is None:
            if args.command != "report":
                raise ConfigError("--config", f"required for {args.command}")
            cfg = None
        else:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                cfg = parse_config(Path(args.config))
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
            if args.seed is not None:
                if not 0 <= args.seed < 2**64:
                    raise ConfigError("--seed", "must be an unsigned 64-bit integer")
                cfg.ic.seed = args.seed
        out = args.output or (cfg.output.dir if cfg is not None else None)
        if out is None:
            raise ConfigError("--output", "report needs --output or --config")
        if cfg is None:
            return cmd_report(None, Workspace(out))
        return run_command(args.command, cfg, out)
    except StratlabError as exc:
        print(f"stratlab {args.command}: error in {_origin(exc)}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
