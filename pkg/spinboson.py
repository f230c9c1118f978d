import argparse
import logging
import math
import sys
from pathlib import Path

from rich.console import Console
from rich.logging import RichHandler

from reports import ArtifactWriter, ResultView, acceptance_view, all_passed, estimate_view, fkn_crosscheck, reproduce_all
from utils import __version__, fock, ising_mc, kernel, model
from utils.config import RunConfig
from utils.errors import ArgumentError, ModelClassError, SpinBosonError, solver_guard
from utils.system import resolve_threads

log = logging.getLogger("spinboson")


class SpinBosonLab:
    """Batch front-end: one config, one subcommand, one directory of artifacts."""

    COMMANDS = [
        ("model info", "model_info", "Classification, weighted norms and critical coupling"),
        ("kernel table", "kernel_table", "Tabulate W, Phi, V and fit the large-t tail"),
        ("ed ground", "ed_ground", "Ground state of the truncated Hamiltonian"),
        ("ed semigroup", "ed_semigroup", "Vacuum amplitude of exp(-T H)"),
        ("ed susceptibility", "ed_susceptibility", "Finite-difference -d2E/dmu2 and resolvent checks"),
        ("ed ladder", "ed_ladder", "Ground-state data along a decreasing mass sequence"),
        ("mc partition", "mc_partition", "Importance-sampled Z_T"),
        ("mc energy", "mc_energy", "Bloch energy estimate from Z_T"),
        ("mc susceptibility", "mc_susceptibility", "(1/T) <<M^2>> by Metropolis chains"),
        ("xcheck fkn", "xcheck_fkn", "Path integral vs ED on the [scan] grid"),
        ("scan lambda", "scan_lambda", "(1/T) <<M^2>> over the lambda x T grid"),
        ("reproduce", "reproduce", "Run the acceptance suite"),
    ]

    def __init__(self, config, threads=1, console=None, config_dir="configs", seed=None):
        self.config = config
        self.threads = threads
        self.console = console or Console()
        self.config_dir = Path(config_dir)
        self.seed = seed
        self.fmt = config["output"]["format"]
        self.status = 0
        self.writer = None

    @property
    def coupling(self):
        return self.config["model"]["lambda"]

    @property
    def field(self):
        return self.config["model"]["mu"]

    @property
    def caps(self):
        d = self.config["discretization"]
        return d["n_max"], d["N_max"]

    @property
    def budget_mb(self):
        return self.config["discretization"]["budget_mb"] or None

    def run(self, command) -> int:
        """Dispatch a subcommand; errors become an error record and exit code."""
        actions = {name: action for name, action, _ in self.COMMANDS}
        self.writer = ArtifactWriter(self.config["output"]["directory"], self.config.digest(),
                                     seed=self.config["mc"]["seed"], command=command)
        log.debug("config digest %s, %d threads", self.writer.digest, self.threads)
        try:
            if command not in actions:
                raise ArgumentError(f"unknown subcommand {command!r}", reason="cli.unknown_command")
            with solver_guard(command):
                getattr(self, f"action_{actions[command]}")()
        except SpinBosonError as e:
            self.console.print(f"[bold red]error[/bold red] [{e.reason}] {e}")
            self.writer.write_error(e.to_record())
            return e.exit_code
        return self.status

    def emit(self, stem, record, title):
        """Print a key/value record and write it in the configured format."""
        self.console.print(ResultView(record, title=title))
        if self.fmt == "csv":
            scalars = {k: v for k, v in record.items() if not isinstance(v, (list, dict, tuple))}
            self.writer.write_csv(f"{stem}.csv", list(scalars), [scalars])
        else:
            self.writer.write_json(f"{stem}.json", record)

    def emit_estimate(self, stem, name, estimate, extra=None):
        record = {**estimate.to_record(), "seed": self.config["mc"]["seed"],
                  "config_digest": self.writer.digest, **(extra or {})}
        self.console.print(estimate_view(name, estimate, extra))
        if self.fmt == "csv":
            scalars = {k: v for k, v in record.items() if not isinstance(v, (list, dict, tuple))}
            self.writer.write_csv(f"{stem}.csv", list(scalars), [scalars])
        else:
            self.writer.write_json(f"{stem}.json", record)

    def table(self, horizons=()):
        k = self.config["kernel"]
        source = self.config.kernel_source()
        return kernel.build_table(source, t_max=self.config.kernel_t_max(horizons), tolerance=k["tolerance"])

    def action_model_info(self) -> None:
        """Classify the model and report its critical coupling."""
        spec = self.config.model_spec()
        info = {**spec.to_mapping(), **model.describe(spec)}
        if info["critical_coupling"] is None:
            log.warning("v is not in D(omega^-1/2): no critical coupling")
        self.emit("model_info", info, "Model")

    def action_kernel_table(self) -> None:
        """Tabulate the kernel; the CSV holds the grid, the summary the tail fit and L1 norm."""
        table = self.table()
        self.writer.write_csv("kernel_table.csv", ["t", "W", "Phi", "V"], table.rows())
        summary = table.summary()
        try:
            summary["l1_norm"] = kernel.l1_norm(table.source, table=table)
        except ModelClassError as e:
            log.warning("no L1 norm: %s", e)
            summary["l1_norm"] = math.inf
        self.emit("kernel_summary", summary, "Kernel table")

    def action_ed_ground(self) -> None:
        """Solve for the ground state and run the pull-through diagnostics."""
        modes = self.config.modes()
        n_max, N_max = self.caps
        basis, H, gs = fock.solve(modes, self.coupling, self.field, n_max, N_max, budget_mb=self.budget_mb)
        pull = fock.pull_through_residual(H, gs.energy, gs.vector, modes, basis, self.coupling)
        record = {
            **gs.to_record(),
            "lambda": self.coupling,
            "mu": self.field,
            "n_modes": modes.n_modes,
            "n_max": n_max,
            "N_max": N_max,
            "sigma_x": fock.sigma_x_expectation(gs.vector),
            "boson_number": float(gs.vector @ (fock.number_op(basis) @ gs.vector)),
            "pull_through_max": pull.max_residual,
            "number_identity": fock.number_sector_identity(basis, gs.vector),
        }
        if self.config["output"]["dump_vector"]:
            self.writer.write_vector("ground_state.bin", gs.vector)
        self.emit("ed_ground", record, "Ground state")

    def action_ed_semigroup(self) -> None:
        """<Omega_down, exp(-T H) Omega_down> and the Bloch energy at the configured T."""
        modes = self.config.modes()
        T = self.config["mc"]["T"]
        basis = fock.build_basis(modes, *self.caps, budget_mb=self.budget_mb)
        H = fock.hamiltonian(basis, modes, self.coupling, self.field)
        log_amp = fock.log_semigroup_amplitude(H, T, start=basis.vacuum_down)
        record = {
            "T": T,
            "amplitude": math.exp(log_amp),
            "log_amplitude": log_amp,
            "partition": math.exp(log_amp - T),
            "bloch_energy": -log_amp / T,
            "bloch_magnetization": fock.bloch_mu_derivative(basis, modes, self.coupling, self.field, T, order=1),
            "dimension": basis.dimension,
        }
        self.emit("ed_semigroup", record, "Semigroup amplitude")

    def action_ed_susceptibility(self) -> None:
        """-d2E/dmu2 at mu = 0 with the resolvent inequality per mode."""
        modes = self.config.modes()
        n_max, N_max = self.caps
        fd = fock.susceptibility_fd(modes, self.coupling, h=self.config["discretization"]["fd_step"],
                                    n_max=n_max, N_max=N_max, threads=self.threads, budget_mb=self.budget_mb)
        _, H, gs = fock.solve(modes, self.coupling, 0.0, n_max, N_max, budget_mb=self.budget_mb)
        check = fock.resolvent_norm_check(H, gs.energy, gs.vector, modes, max(0.0, fd.susceptibility))
        record = {**fd.to_record(), "lambda": self.coupling, "energy": gs.energy,
                  "resolvent_passed": check.all_passed,
                  "resolvent_constant": fock.resolvent_constant(H, gs.energy, gs.vector, modes),
                  "resolvent": check.to_record()}
        self.emit("ed_susceptibility", record, "Susceptibility (ED)")

    def action_ed_ladder(self) -> None:
        """E, chi and the resolvent constant along the mass ladder."""
        d = self.config["discretization"]
        spec = self.config.model_spec()
        rungs, monotone = fock.mass_ladder(spec, d["ladder_masses"], d["n_modes"], d["scheme"],
                                           d["n_max"], d["N_max"], d["regularization"],
                                           threads=self.threads, budget_mb=self.budget_mb)
        rows = [r.to_record() for r in rungs]
        self.writer.write_csv("ed_ladder.csv", list(rows[0]), rows)
        self.console.print(ResultView(rows, title="Mass ladder"))
        self.emit("ed_ladder_summary", {"monotone": monotone, "lambda": spec.coupling, "rungs": rows},
                  "Mass ladder summary")

    def mc_config(self, **changes):
        return self.config.mc_config(threads=self.threads, **changes)

    def action_mc_partition(self) -> None:
        """Z_T by importance sampling over free paths."""
        est = ising_mc.estimate_partition(self.coupling, self.field, self.table(), self.mc_config())
        self.emit_estimate("mc_partition", "Z_T", est, {"T": self.config["mc"]["T"]})

    def action_mc_energy(self) -> None:
        """-1 - (1/T) ln Z_T."""
        est = ising_mc.estimate_energy(self.coupling, self.field, self.table(), self.mc_config())
        self.emit_estimate("mc_energy", "E", est, {"T": self.config["mc"]["T"]})

    def action_mc_susceptibility(self) -> None:
        """(1/T) <<M^2>> at mu = 0."""
        est = ising_mc.estimate_susceptibility(self.coupling, self.table(), self.mc_config())
        self.emit_estimate("mc_susceptibility", "chi", est, {"T": self.config["mc"]["T"]})

    def action_xcheck_fkn(self) -> None:
        """Both engines on the same discrete modes, one row per (lambda, T)."""
        s = self.config["scan"]
        modes = self.config.modes()
        rows = fkn_crosscheck(modes, s["lambdas"], s["horizons"], self.mc_config(), *self.caps,
                              field=self.field, budget_mb=self.budget_mb)
        header = ["lambda", "T", "z_ed", "z_mc", "z_err", "sigma", "relative_stderr", "samples"]
        self.console.print(ResultView(rows, columns=header, title="Path integral vs ED"))
        self.writer.write_csv("xcheck_fkn.csv", header, rows)
        within = sum(r["sigma"] <= 3.0 for r in rows)
        self.writer.write_json("xcheck_fkn.json", {"cells": rows, "within_3_sigma": within, "total": len(rows)})

    def action_scan_lambda(self) -> None:
        """(1/T) <<M^2>> on the lambda x T grid with the lambda^2 ||W||_1 diagnostic."""
        s = self.config["scan"]
        table = self.table(s["horizons"])
        result = ising_mc.coupling_scan(s["lambdas"], table, self.mc_config(), s["horizons"])
        header = ["lambda", "T", "chi", "chi_err", "l1_diag"]
        rows = result.rows()
        self.console.print(ResultView(rows, columns=header, title="Coupling scan"))
        self.writer.write_csv("scan.csv", header, rows)
        summary = {
            "l1_norm": result.l1,
            "slopes": [{"lambda": lam, "slope": sl, "slope_err": err} for lam, (sl, err) in result.slopes.items()],
            "monotone_in_coupling": [{"T": T, "monotone": ok} for T, ok in result.monotone_in_coupling.items()],
            "failed_cells": [{**c.to_row(), "error": c.error} for c in result.cells if c.error],
        }
        if isinstance(table.source, model.ModelSpec):
            try:
                summary["critical_coupling"] = model.critical_coupling(table.source)
            except ModelClassError:
                pass
        self.writer.write_json("scan_summary.json", summary)

    def action_reproduce(self) -> None:
        """All acceptance criteria; exits 2 if any fails."""
        results = reproduce_all(self.config_dir, threads=self.threads, seed=self.seed, console=self.console)
        self.console.print(acceptance_view(results))
        self.writer.write_csv("acceptance.csv", ["id", "name", "passed", "measured", "tolerance", "seconds"],
                              [r.to_row() for r in results])
        self.writer.write_json("acceptance.json", {"all_passed": all_passed(results),
                                                   "criteria": [r.to_record() for r in results]})
        if not all_passed(results):
            self.console.print("[bold red]acceptance failed[/bold red]")
            self.status = 2


def build_parser():
    commands = "\n".join(f"  {name:<20}{help_}" for name, _, help_ in SpinBosonLab.COMMANDS)
    parser = argparse.ArgumentParser(
        prog="spinboson",
        description="Spin-boson numerical lab: exact diagonalization and path-integral Monte Carlo.",
        epilog=f"subcommands:\n{commands}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", nargs="+", help="subcommand, e.g. 'ed ground'")
    parser.add_argument("--config", type=Path, help="INI config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, e.g. model.lambda=0.2 (repeatable)")
    parser.add_argument("--seed", type=int, help="run seed (sets mc.seed)")
    parser.add_argument("--out", type=Path, help="output directory (sets output.directory)")
    parser.add_argument("--format", choices=["json", "csv"], help="format of scalar results")
    parser.add_argument("--threads", type=int, help="worker count (default: $SPINBOSON_THREADS or cores)")
    parser.add_argument("--dump-vector", action="store_true", help="write the ground-state vector (ed ground)")
    parser.add_argument("--config-dir", type=Path, default=Path("configs"), help="acceptance configs (reproduce)")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def setup_logging(verbose=False, quiet=False, console=None):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    handler = RichHandler(console=console or Console(stderr=True), show_path=verbose, rich_tracebacks=True)
    logging.basicConfig(level=level, format="%(message)s", datefmt="[%X]", handlers=[handler], force=True)


def load_config(args):
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    for item in args.overrides:
        config.apply_override(item)
    if args.seed is not None:
        config.set("mc", "seed", args.seed)
    if args.out is not None:
        config.set("output", "directory", str(args.out))
    if args.format is not None:
        config.set("output", "format", args.format)
    if args.dump_vector:
        config.set("output", "dump_vector", True)
    return config


def main(argv=None, console=None):
    args = build_parser().parse_args(argv)
    console = console or Console()
    setup_logging(args.verbose, args.quiet)
    command = " ".join(args.command)
    try:
        config = load_config(args)
    except SpinBosonError as e:
        console.print(f"[bold red]error[/bold red] [{e.reason}] {e}")
        ArtifactWriter(args.out or "results", None, seed=args.seed, command=command).write_error(e.to_record())
        return e.exit_code
    lab = SpinBosonLab(config, threads=resolve_threads(args.threads), console=console,
                       config_dir=args.config_dir, seed=args.seed)
    return lab.run(command)


if __name__ == "__main__":
    sys.exit(main())
