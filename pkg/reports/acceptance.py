"""Acceptance suite: closed-form, cross-engine and statistical checks over the bundled configs."""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from rich.progress import Progress
from scipy import stats

from utils import fock, ising_mc, kernel, model
from utils.config import RunConfig
from utils.errors import SpinBosonError
from utils.streams import derive_seed, stream

from .result_view import ResultView

log = logging.getLogger(__name__)

TARGET_RELATIVE_STDERR = 0.01
MAX_SAMPLE_GROWTH = 16
FREE_PROCESS_SAMPLES = 100_000
CALIBRATION_SEEDS = 50


@dataclass(frozen=True)
class CriterionResult:
    id: str
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def to_row(self):
        return {"id": self.id, "name": self.name, "passed": self.passed, "measured": self.measured,
                "tolerance": self.tolerance, "seconds": self.seconds}

    def to_record(self):
        return {**self.to_row(), "details": self.details}


def free_susceptibility(T):
    """(1/T) E[M^2] of the free flip process: 1 - (1 - e^{-2T}) / (2T)."""
    return 1.0 - (-math.expm1(-2.0 * T)) / (2.0 * T)


def partition_to_precision(coupling, field, table, cfg, target=TARGET_RELATIVE_STDERR):
    """estimate_partition with the sample count grown fourfold until the relative stderr meets target."""
    est = ising_mc.estimate_partition(coupling, field, table, cfg)
    budget = cfg.samples * MAX_SAMPLE_GROWTH
    while est.relative_stderr > target and cfg.samples * 4 <= budget:
        cfg = replace(cfg, samples=cfg.samples * 4)
        log.debug("lambda=%g T=%g: relative stderr %.3g, retrying with %d samples",
                  coupling, cfg.horizon, est.relative_stderr, cfg.samples)
        est = ising_mc.estimate_partition(coupling, field, table, cfg)
    if est.relative_stderr > target:
        log.warning("lambda=%g T=%g: relative stderr %.3g misses target %g after %d samples",
                    coupling, cfg.horizon, est.relative_stderr, target, cfg.samples)
    return est


def fkn_crosscheck(modes, couplings, horizons, cfg, n_max, N_max, field=0.0, target=None, budget_mb=None):
    """
    Z_T from the path integral against exp(-T) <Omega_down, exp(-T H) Omega_down> from ED
    on every (lambda, T) cell; each cell samples from its own derived seed.

    Returns:
        list of row dicts with lambda, T, z_ed, z_mc, z_err, sigma
    """
    table = kernel.build_table(modes, t_max=4.0 * max(horizons))
    basis = fock.build_basis(modes, n_max, N_max, budget_mb=budget_mb)
    rows = []
    for i, (lam, T) in enumerate((lam, T) for lam in couplings for T in horizons):
        H = fock.hamiltonian(basis, modes, lam, field)
        z_ed = math.exp(-T) * fock.semigroup_amplitude(H, basis, T)
        sub = replace(cfg, horizon=float(T), seed=derive_seed(cfg.seed, i))
        if target is None:
            est = ising_mc.estimate_partition(lam, field, table, sub)
        else:
            est = partition_to_precision(lam, field, table, sub, target)
        rows.append({
            "lambda": lam,
            "T": T,
            "z_ed": z_ed,
            "z_mc": est.mean,
            "z_err": est.stderr,
            "sigma": est.sigma_distance(z_ed),
            "relative_stderr": est.relative_stderr,
            "samples": est.n_samples,
        })
        log.info("fkn lambda=%g T=%g: ED %.8g MC %.8g +- %.2g (%.2f sigma)",
                 lam, T, z_ed, est.mean, est.stderr, rows[-1]["sigma"])
    return rows


class _Suite:
    def __init__(self, config_dir, threads=1, seed=None):
        self.config_dir = Path(config_dir)
        self.threads = threads
        self.seed = seed

    def config(self, name):
        cfg = RunConfig.from_file(self.config_dir / f"{name}.ini")
        if self.seed is not None:
            cfg.set("mc", "seed", self.seed)
        return cfg

    def mc(self, cfg, **changes):
        return cfg.mc_config(threads=self.threads, **changes)


def _free_model(suite):
    modes = suite.config("single_mode").modes()
    errors = {}
    for mu in (0.0, 0.5, 0.75, 1.0):
        _, _, gs = fock.solve(modes, 0.0, mu, n_max=0, N_max=0)
        errors[mu] = abs(gs.energy + math.hypot(1.0, mu))
    passed = errors[0.0] <= 1e-12 and all(errors[mu] <= 1e-10 for mu in (0.5, 0.75, 1.0))
    return passed, max(errors.values()), 1e-10, {"errors": {str(k): v for k, v in errors.items()}}


def _critical_coupling(suite):
    spec = suite.config("critical").model_spec()
    lam_c = model.critical_coupling(spec)
    exact = 1.0 / math.sqrt(20.0 * math.pi)
    critical = model.ir_classify(spec)
    regular = model.ir_classify(replace(spec, alpha=0.4))
    passed = (abs(lam_c - exact) <= 1e-9 and critical is model.InfraredClass.CRITICAL
              and regular is model.InfraredClass.REGULAR)
    return passed, abs(lam_c - exact), 1e-9, {
        "critical_coupling": lam_c, "classification": critical.value, "alpha_0.4": regular.value}


def _kernel_closed_form(suite):
    spec = suite.config("critical").model_spec()
    t = np.linspace(0.05, 50.0, 1000)
    closed = math.pi * (-np.expm1(-t) - t * np.exp(-t)) / t**2
    rel = float(np.max(np.abs(kernel.kernel_value(spec, t) - closed) / closed))
    tail = abs(50.0**2 * kernel.kernel_value(spec, 50.0) - math.pi)
    table = kernel.build_table(spec, t_max=kernel.DEFAULT_T_MAX)
    details = {"probe_relative_error": rel, "tail_defect": tail, "grid_points": int(table.grid.size),
               "tail_exponent": table.tail.exponent}
    try:
        details["l1_norm"] = kernel.l1_norm(spec, table=table)
        consistent = True
    except SpinBosonError as e:
        details["l1_error"] = e.to_record()
        consistent = False
    return rel <= 1e-8 and tail < 1e-6 and consistent, rel, 1e-8, details


def _fkn_identity(suite):
    rows = []
    for name in ("single_mode", "two_mode"):
        cfg = suite.config(name)
        d = cfg["discretization"]
        cells = fkn_crosscheck(cfg.modes(), cfg["scan"]["lambdas"], cfg["scan"]["horizons"], suite.mc(cfg),
                               d["n_max"], d["N_max"], target=TARGET_RELATIVE_STDERR)
        rows.extend({"model": name, **row} for row in cells)
    return judge_fkn_cells(rows)


def judge_fkn_cells(rows, target=TARGET_RELATIVE_STDERR):
    """A cell counts when it is within 3 sigma of ED and its relative stderr meets target; all but one must."""
    for row in rows:
        row["precise"] = row["relative_stderr"] <= target
    within = sum(row["sigma"] <= 3.0 and row["precise"] for row in rows)
    need = len(rows) - 1
    details = {"cells": rows, "imprecise_cells": sum(not row["precise"] for row in rows),
               "worst_relative_stderr": max(row["relative_stderr"] for row in rows)}
    return within >= need, float(within), float(need), details


def _bloch_energy(suite):
    cfg = suite.config("single_mode")
    d = cfg["discretization"]
    modes = cfg.modes()
    lam = 0.1
    table = kernel.build_table(modes, t_max=80.0)
    _, _, gs = fock.solve(modes, lam, 0.0, d["n_max"], d["N_max"])
    e20 = ising_mc.estimate_energy(lam, 0.0, table, suite.mc(cfg, horizon=20.0))
    e10 = ising_mc.estimate_energy(lam, 0.0, table, suite.mc(cfg, horizon=10.0))
    bias = abs(e10.mean - e20.mean)
    tolerance = 3.0 * math.hypot(e10.stderr, e20.stderr) + bias
    deviation = abs(e20.mean - gs.energy)
    return deviation <= tolerance, deviation, tolerance, {
        "ed_energy": gs.energy, "mc_energy_T20": e20.mean, "mc_stderr_T20": e20.stderr,
        "mc_energy_T10": e10.mean, "t_bias": bias}


def _free_susceptibility(suite):
    cfg = suite.config("single_mode")
    T = 10.0
    table = kernel.build_table(cfg.modes(), t_max=4.0 * T)
    est = ising_mc.estimate_susceptibility(0.0, table, suite.mc(cfg, horizon=T))
    exact = free_susceptibility(T)
    sigma = est.sigma_distance(exact)
    return sigma <= 3.0, sigma, 3.0, {"exact": exact, **est.to_record()}


def _ed_susceptibility(suite, lam=0.1):
    cfg = suite.config("single_mode")
    d = cfg["discretization"]
    modes = cfg.modes()
    fd = fock.susceptibility_fd(modes, lam, h=d["fd_step"], n_max=d["n_max"], N_max=d["N_max"],
                                threads=suite.threads)
    return cfg, modes, fd


def _mc_susceptibility(suite):
    cfg, modes, fd = _ed_susceptibility(suite)
    d = cfg["discretization"]
    lam, T = 0.1, 20.0
    table = kernel.build_table(modes, t_max=4.0 * T)
    est = ising_mc.estimate_susceptibility(lam, table, suite.mc(cfg, horizon=T))
    basis = fock.build_basis(modes, d["n_max"], d["N_max"])
    finite_T = -fock.bloch_mu_derivative(basis, modes, lam, 0.0, T, order=2)
    bias = abs(finite_T - fd.susceptibility)
    tolerance = 3.0 * est.stderr + bias + fd.error
    deviation = abs(est.mean - fd.susceptibility)
    return deviation <= tolerance, deviation, tolerance, {
        "ed_chi": fd.susceptibility, "ed_chi_finite_T": finite_T, "mc_chi": est.mean, "mc_stderr": est.stderr}


def _resolvent_inequality(suite, standard=False):
    cfg, modes, fd = _ed_susceptibility(suite)
    d = cfg["discretization"]
    _, H, gs = fock.solve(modes, 0.1, 0.0, d["n_max"], d["N_max"])
    check = fock.resolvent_norm_check(H, gs.energy, gs.vector, modes, max(0.0, fd.susceptibility))
    if standard:
        defect = float(np.max(np.abs(check.lowest_shifted - modes.omega)))
        return bool(np.all(check.standard_bound)), defect, 1e-10, check.to_record()
    margin = float(np.max(check.lhs / check.rhs))
    return bool(np.all(check.passed)), margin, 1.0 + 1e-6, {"chi": fd.susceptibility, **check.to_record()}


def _symmetry(suite):
    cfg = suite.config("two_mode")
    d = cfg["discretization"]
    modes = cfg.modes()
    basis = fock.build_basis(modes, d["n_max"], d["N_max"])
    P = fock.parity_op(basis)
    commutator, sigma_x, mirror = 0.0, 0.0, 0.0
    for lam in cfg["scan"]["lambdas"]:
        H = fock.hamiltonian(basis, modes, lam, 0.0)
        commutator = max(commutator, H.commutator_norm(P))
        gs = fock.ground_state(H)
        sigma_x = max(sigma_x, abs(fock.sigma_x_expectation(gs.vector)))
        flipped = fock.ground_state(fock.hamiltonian(basis, modes, -lam, 0.0))
        mirror = max(mirror, abs(gs.energy - flipped.energy))
    passed = commutator < 1e-13 and sigma_x < 1e-10 and mirror <= fock.SOLVER_TOL
    return passed, sigma_x, 1e-10, {"commutator": commutator, "sigma_x": sigma_x, "mirror": mirror}


def _oracle_triad(suite):
    cfg = suite.config("single_mode")
    d = cfg["discretization"]
    modes = cfg.modes()
    lam, T = 0.3, 1.0
    table = kernel.build_table(modes, t_max=4.0 * T)
    basis = fock.build_basis(modes, d["n_max"], d["N_max"])
    cells, passed, worst = [], True, 0.0
    for mu in (0.0, 0.5):
        brute = ising_mc.brute_force_partition(lam, mu, table, T, jump_cap=6)
        z_ed = math.exp(-T) * fock.semigroup_amplitude(fock.hamiltonian(basis, modes, lam, mu), basis, T)
        est = ising_mc.estimate_partition(lam, mu, table, suite.mc(cfg, horizon=T))
        gap = abs(brute.value - z_ed)
        s_brute, s_ed = est.sigma_distance(brute.value), est.sigma_distance(z_ed)
        passed &= gap <= 1e-3 and s_brute <= 3.0 and s_ed <= 3.0
        worst = max(worst, gap)
        cells.append({"mu": mu, "brute": brute.value, "bound": brute.bound, "ed": z_ed, "mc": est.mean,
                      "mc_stderr": est.stderr, "sigma_brute": s_brute, "sigma_ed": s_ed})
    return passed, worst, 1e-3, {"cells": cells}


def _free_process(suite):
    T = 2.0
    seed = 0 if suite.seed is None else suite.seed
    rng = stream(seed, 0x9)
    paths = [ising_mc.sample_free_path(T, rng) for _ in range(FREE_PROCESS_SAMPLES)]
    counts = np.array([p.n_jumps for p in paths])
    top = int(stats.poisson.ppf(1.0 - 1e-4, T))
    observed = np.array([np.sum(counts == k) for k in range(top)] + [np.sum(counts >= top)], dtype=float)
    expected = np.append(stats.poisson.pmf(np.arange(top), T), stats.poisson.sf(top - 1, T)) * counts.size
    p_value = float(stats.chisquare(observed, expected).pvalue)
    lags = np.linspace(0.2, T, 10)
    x0 = np.array([p.initial_spin for p in paths], dtype=float)
    worst = 0.0
    two_point = []
    for lag in lags:
        product = x0 * np.array([p.value_at(lag) for p in paths], dtype=float)
        err = product.std(ddof=1) / math.sqrt(product.size)
        sigma = abs(product.mean() - math.exp(-2.0 * lag)) / err
        worst = max(worst, sigma)
        two_point.append({"lag": lag, "mean": float(product.mean()), "stderr": err, "sigma": sigma})
    return p_value >= 0.01 and worst <= 4.0, worst, 4.0, {"poisson_p_value": p_value, "two_point": two_point}


def _bounded_correlation(suite, multiple=0.5, judge=True):
    """Slope of (1/T) <<M^2>> over the [scan] horizons on the discretized critical model at multiple * lambda_c."""
    cfg = suite.config("critical")
    lam = multiple * model.critical_coupling(cfg.model_spec())
    horizons = cfg["scan"]["horizons"]
    modes = cfg.modes()
    table = kernel.build_table(modes, t_max=cfg.kernel_t_max(horizons), tolerance=cfg["kernel"]["tolerance"])
    scan = ising_mc.coupling_scan([lam], table, suite.mc(cfg), horizons)
    slope, err = scan.slopes[lam]
    cells = scan.rows()
    # drift of the free flip process, reported only
    free_slope, _ = ising_mc.weighted_slope(horizons, [free_susceptibility(T) for T in horizons],
                                            [row["chi_err"] for row in cells])
    details = {"lambda": lam, "n_modes": modes.n_modes, "slope": slope, "slope_err": err,
               "free_slope": free_slope, "l1_diag": lam**2 * scan.l1, "cells": cells}
    if not judge:
        return None, slope, math.nan, details
    return slope <= 3.0 * err, slope, 3.0 * err, details


def _determinism(suite):
    cfg = suite.config("single_mode")
    T = 10.0
    table = kernel.build_table(cfg.modes(), t_max=4.0 * T)
    base = cfg.mc_config(threads=1, horizon=T, samples=4000)
    first = ising_mc.estimate_susceptibility(0.0, table, base)
    second = ising_mc.estimate_susceptibility(0.0, table, replace(base, threads=max(2, suite.threads)))
    identical = first.mean == second.mean and first.stderr == second.stderr
    exact = free_susceptibility(T)
    hits = 0
    for k in range(CALIBRATION_SEEDS):
        est = ising_mc.estimate_susceptibility(
            0.0, table, replace(base, seed=derive_seed(base.seed, k), threads=suite.threads))
        hits += abs(est.mean - exact) <= 2.0 * est.stderr
    coverage = hits / CALIBRATION_SEEDS
    return identical and coverage >= 0.9, coverage, 0.9, {"bit_identical": identical, "coverage_2sigma": coverage}


CRITERIA = [
    ("1", "free-model exactness", _free_model),
    ("2", "critical coupling", _critical_coupling),
    ("3", "kernel closed form", _kernel_closed_form),
    ("4", "path integral vs ED", _fkn_identity),
    ("5", "Bloch energy", _bloch_energy),
    ("6a", "free susceptibility", _free_susceptibility),
    ("6b", "MC vs ED susceptibility", _mc_susceptibility),
    ("6c", "resolvent inequality", _resolvent_inequality),
    ("6d", "standard bound", lambda suite: _resolvent_inequality(suite, standard=True)),
    ("7", "symmetry suite", _symmetry),
    ("8", "oracle triad", _oracle_triad),
    ("9", "free-process statistics", _free_process),
    ("10", "bounded correlations at lambda_c/2", _bounded_correlation),
    ("10*", "scan at 4 lambda_c (data)", lambda suite: _bounded_correlation(suite, 4.0, judge=False)),
    ("11", "determinism and calibration", _determinism),
]


def run_criterion(suite, cid, name, check):
    start = time.perf_counter()
    try:
        passed, measured, tolerance, details = check(suite)
    except SpinBosonError as e:
        log.error("criterion %s (%s) failed: %s", cid, name, e)
        passed, measured, tolerance, details = False, math.nan, math.nan, {"error": e.to_record()}
    seconds = time.perf_counter() - start
    if passed is not None:
        passed = bool(passed)
    log.info("criterion %s %s: %s in %.1fs", cid, name,
             "data" if passed is None else ("pass" if passed else "FAIL"), seconds)
    return CriterionResult(cid, name, passed, float(measured), float(tolerance), seconds, details)


def reproduce_all(config_dir, threads=1, seed=None, only=None, console=None):
    """
    Run the acceptance criteria against the configs in config_dir.

    Args:
        config_dir: directory holding single_mode.ini, two_mode.ini and critical.ini
        threads: worker count for the engines
        seed: overrides every config's [mc] seed when given
        only: optional collection of criterion ids to run
        console: rich Console for a progress bar (None for silent runs)

    Returns:
        list of CriterionResult in criterion order
    """
    suite = _Suite(config_dir, threads, seed)
    selected = [c for c in CRITERIA if only is None or c[0] in only]
    results = []
    if console is None:
        return [run_criterion(suite, *c) for c in selected]
    with Progress(console=console, transient=True) as progress:
        task = progress.add_task("acceptance", total=len(selected))
        for cid, name, check in selected:
            progress.update(task, description=f"[{cid}] {name}")
            results.append(run_criterion(suite, cid, name, check))
            progress.advance(task)
    return results


def all_passed(results):
    return all(r.passed is not False for r in results)


def acceptance_view(results):
    columns = ["id", "name", "passed", "measured", "tolerance", "seconds"]
    return ResultView([r.to_row() for r in results], columns=columns, title="Acceptance")
