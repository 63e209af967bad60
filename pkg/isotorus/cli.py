#!/usr/bin/env python3
# PYTHON_ARGCOMPLETE_OK
# --------------------
# imports
# --------------------
import argparse
import dataclasses
import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple

import argcomplete
import numpy as np
from rich_argparse import RawTextRichHelpFormatter
from tabulate import tabulate, tabulate_formats

from isotorus import (
    CLI_EPILOG,
    IsotorusNumericalError,
    IsotorusValidationError,
    __version__,
)
from isotorus import plotting
from isotorus.config import DEFAULT_CONFIG_FILE, Settings
from isotorus.equilibrium import equilibrium_density, solve_zeta, write_equilibrium_csv
from isotorus.experiments import (
    converge_to_balanced,
    converge_to_torus,
    discretize_kwargs,
    fit_exponential_decay,
    fit_power_bound,
    gap_amplitude_pairs,
    proportionality_fit,
    torus_error_profile,
    torus_reference,
)
from isotorus.harmonic import psi_samples, principal_amplitudes, write_spectrum_csv
from isotorus.ifs import (
    BUILTIN_IFS,
    IntervalUnion,
    iterate_bands,
    load_ifs,
    ordered_gaps,
    write_bands_csv,
    write_gaps_csv,
)
from isotorus.jacobi import (
    INITIAL_MEASURES,
    compare_sequences,
    loglog_slope,
    read_jacobi_csv,
    write_error_profile_csv,
    write_jacobi_csv,
)
from isotorus.torus import (
    DEFAULT_POINT_RULE,
    POINT_RULES,
    TorusPoint,
    load_torus_point,
    torus_limit_sequence,
)
from isotorus.utils import write_csv

# --- Configuration ---
DEFAULT_OUT_DIR = "isotorus-out"
DEFAULT_TABLE_FORMAT = "github"
DEFAULT_EPS = (1e-1, 1e-2, 1e-3, 1e-4)
# tables longer than this are summarized on stdout; the CSV always has every row
MAX_TABLE_ROWS = 32
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
# -------------------
# --- Logging Setup ---
logging.basicConfig(
    level=logging.WARNING, format="%(levelname)s: %(message)s", stream=sys.stderr
)
logger = logging.getLogger(__name__)
# ---------------------


def _eps_list(value: str) -> Tuple[float, ...]:
    """argparse type for comma-separated eps values."""
    try:
        eps = tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid eps list: '{value}'")
    if not eps or any(not e > 0 for e in eps):
        raise argparse.ArgumentTypeError(f"eps values must be positive: '{value}'")
    return eps


def _int_list(value: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer list: '{value}'")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a command needs, resolved from CLI flags over Settings."""

    command: str
    out: str
    settings: Settings
    ifs_path: Optional[str] = None
    n: int = 2
    n_max: int = 3
    J: int = 1024
    L: int = 4
    case: Tuple[str, ...] = ("a",)
    eps: Tuple[float, ...] = DEFAULT_EPS
    rule: str = DEFAULT_POINT_RULE
    point_path: Optional[str] = None
    seed: Optional[int] = None
    svg: bool = False
    table_format: str = DEFAULT_TABLE_FORMAT

    @classmethod
    def from_args(cls, args: argparse.Namespace, settings: Settings) -> "ExperimentConfig":
        overrides = {}
        if getattr(args, "sidelobe_db", None) is not None:
            overrides["sidelobe_db"] = args.sidelobe_db
        window_len = getattr(args, "window_len", None)
        if window_len is not None:
            if window_len < 3 or window_len % 2 == 0:
                raise IsotorusValidationError(f"--window-len must be odd and at least 3, got {window_len}.")
            # an explicit length replaces the spacing rule
            overrides["window_min_len"] = window_len
            overrides["window_spacing_factor"] = 0.0
        if overrides:
            settings = dataclasses.replace(settings, **overrides)
        if getattr(args, "seedless", False):
            seed = None
        elif getattr(args, "seed", None) is not None:
            seed = args.seed
        else:
            seed = settings.seed
        case = getattr(args, "case", "a")
        config = cls(
            command=args.command,
            out=args.out,
            settings=settings,
            ifs_path=getattr(args, "ifs", None),
            n=getattr(args, "n", 2),
            n_max=getattr(args, "n_max", 3),
            J=getattr(args, "J", 1024),
            L=getattr(args, "L", 4),
            case=INITIAL_MEASURES if case == "both" else (case,),
            eps=getattr(args, "eps", DEFAULT_EPS),
            rule=getattr(args, "rule", DEFAULT_POINT_RULE),
            point_path=getattr(args, "point", None),
            seed=seed,
            svg=args.svg,
            table_format=args.table_format,
        )
        config.validate()
        return config

    def validate(self):
        if self.ifs_path is not None and not (os.path.exists(self.ifs_path) or self.ifs_path in BUILTIN_IFS):
            raise IsotorusValidationError(
                f"IFS file not found: {self.ifs_path} (built-in names: {', '.join(BUILTIN_IFS)})"
            )
        if self.point_path is not None and not os.path.exists(self.point_path):
            raise IsotorusValidationError(f"Torus point file not found: {self.point_path}")
        if self.n < 0:
            raise IsotorusValidationError(f"--n must be non-negative, got {self.n}.")
        if self.n_max < 1:
            raise IsotorusValidationError(f"--n-max must be at least 1, got {self.n_max}.")
        if self.J < 1:
            raise IsotorusValidationError(f"--J must be at least 1, got {self.J}.")
        if self.L < 1:
            raise IsotorusValidationError(f"--L must be at least 1, got {self.L}.")
        if any(not e > 0 for e in self.eps):
            raise IsotorusValidationError("Every eps must be positive.")

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def load_ifs(self):
        if self.ifs_path is None:
            raise IsotorusValidationError(f"'{self.command}' needs --ifs.")
        return load_ifs(self.ifs_path)


def _print_table(rows: Sequence[Sequence[Any]], headers: Sequence[str], config: ExperimentConfig):
    rows = list(rows)
    if len(rows) > MAX_TABLE_ROWS:
        logger.info(f"Showing the first {MAX_TABLE_ROWS} of {len(rows)} rows; the CSV has all of them")
        rows = rows[:MAX_TABLE_ROWS]
    sys.stdout.write(tabulate(rows, headers=headers, tablefmt=config.table_format, floatfmt=".10g") + "\n")


def _print_written(*paths: str):
    for p in paths:
        sys.stderr.write(f"wrote {p}\n")


# --- Command Handlers ---


def handle_bands(args, settings: Settings):
    """Writes the bands and birth-ordered gaps of E^n."""
    config = ExperimentConfig.from_args(args, settings)
    ifs = config.load_ifs()
    n = config.n
    bands = iterate_bands(ifs, n)
    written = [write_bands_csv(bands, config.path(f"bands_n{n}.csv"))]
    gap_rows = []
    if n > 0:
        gaps = ordered_gaps(ifs, n)
        written.append(write_gaps_csv(gaps, config.path(f"gaps_n{n}.csv"), level=n))
        gap_rows = [
            (i + 1, int(gaps.birth_level[i]), int(gaps.order[i]) + 1, gaps.left[i], gaps.right[i], gaps.widths[i])
            for i in range(len(gaps))
        ]
        if config.svg:
            written.append(
                plotting.line_plot(
                    config.path(f"gaps_n{n}.svg"),
                    {"gap width": (np.arange(1, len(gaps) + 1), gaps.widths)},
                    xlabel="gap index (birth order)",
                    ylabel="width",
                    yscale="log",
                    marker="o",
                )
            )
    _print_table(
        [(n, bands.N, len(gap_rows), bands.total_length())],
        ["level", "bands", "gaps", "total length"],
        config,
    )
    if gap_rows:
        _print_table(gap_rows, ["gap", "birth level", "position", "alpha", "beta", "width"], config)
    _print_written(*written)


def _bands_for(args, config: ExperimentConfig) -> Tuple[IntervalUnion, Any]:
    """E^n of the IFS, or the union given by repeated --band flags."""
    if getattr(args, "band", None):
        return IntervalUnion.from_bands([tuple(b) for b in args.band]), None
    ifs = config.load_ifs()
    return iterate_bands(ifs, config.n), ifs


def handle_equilibrium(args, settings: Settings):
    """Solves for zeta and writes masses, frequencies and capacity."""
    config = ExperimentConfig.from_args(args, settings)
    bands, ifs = _bands_for(args, config)
    s = config.settings
    sol = solve_zeta(bands, tol=s.tol, max_iterations=s.max_iterations, quad_nodes=s.quad_nodes)
    order = ordered_gaps(ifs, config.n) if ifs is not None and config.n > 0 else None
    tag = f"n{config.n}" if ifs is not None else "bands"
    written = list(
        write_equilibrium_csv(
            sol,
            config.path(f"equilibrium_gaps_{tag}.csv"),
            config.path(f"equilibrium_bands_{tag}.csv"),
            order=order,
        )
    )
    _print_table(
        [(bands.N, sol.capacity, sol.energy, sol.residual, sol.iterations)],
        ["bands", "capacity", "energy", "residual", "iterations"],
        config,
    )
    if sol.N > 1:
        positions = np.arange(sol.N - 1) if order is None else order.order
        rows = [
            (i + 1, int(p) + 1, sol.zeta[p], sol.frequencies[p], 2.0 * math.pi * sol.frequencies[p])
            for i, p in enumerate(positions)
        ]
        _print_table(rows, ["gap", "position", "zeta", "omega", "angular omega"], config)
    if config.svg:
        series = {}
        for i, (a, b) in enumerate(bands.bands):
            t = np.cos(np.linspace(math.pi, 0.0, 201)[1:-1])
            x = 0.5 * (a + b) + 0.5 * (b - a) * t
            series[f"band {i + 1}"] = (x, equilibrium_density(sol, x))
        written.append(
            plotting.line_plot(
                config.path(f"equilibrium_{tag}.svg"), series, xlabel="s", ylabel="density", yscale="log"
            )
        )
    _print_written(*written)


def _torus_point(config: ExperimentConfig, ifs) -> Tuple[IntervalUnion, TorusPoint]:
    bands = iterate_bands(ifs, config.n)
    if config.n == 0:
        return bands, TorusPoint(xi=[], sigma=[])
    gaps = ordered_gaps(ifs, config.n)
    if config.point_path:
        return bands, load_torus_point(config.point_path, gaps, seed=config.seed)
    return bands, TorusPoint.from_rule(gaps, config.rule, seed=config.seed)


def handle_torus_jacobi(args, settings: Settings):
    """J(theta_n) and its error profile against a refined discretization."""
    config = ExperimentConfig.from_args(args, settings)
    ifs = config.load_ifs()
    bands, point = _torus_point(config, ifs)
    jacobi, profile, nodes = torus_error_profile(bands, point, config.J, config.settings, factor=args.refine_factor)
    n = config.n
    written = [
        write_jacobi_csv(jacobi, config.path(f"torus_jacobi_n{n}.csv")),
        write_error_profile_csv(profile, config.path(f"torus_error_n{n}.csv")),
    ]
    slope = None
    try:
        slope = loglog_slope(profile.j, profile.eps, (1e2, 1e4))
    except IsotorusValidationError as e:
        logger.info(f"No log-log slope: {e}")
    max_eps = float(profile.eps[-1]) if profile.eps.size else 0.0
    _print_table(
        [(n, bands.N, config.J, nodes, max_eps, "" if slope is None else slope)],
        ["level", "bands", "J", "nodes per band", "max eps_j", "log-log slope"],
        config,
    )
    if config.svg:
        j = np.arange(jacobi.J)
        written.append(
            plotting.line_plot(
                config.path(f"torus_jacobi_n{n}.svg"),
                {"a_j": (j, jacobi.a), "b_j": (j[1:], jacobi.b[1:])},
                ylabel="coefficient",
            )
        )
        positive = np.flatnonzero(profile.eps > 0)
        series = {"eps_j": (profile.j, profile.eps)}
        if positive.size:
            j0 = profile.j[positive[0]]
            series["unit slope"] = (profile.j, profile.eps[positive[0]] * profile.j / j0)
        written.append(
            plotting.line_plot(
                config.path(f"torus_error_n{n}.svg"), series, ylabel="eps_j", xscale="log", yscale="log"
            )
        )
    _print_written(*written)


def handle_torus_limit(args, settings: Settings):
    """theta_n for n = 1..n_max and the stabilization N(eps, n) between levels."""
    config = ExperimentConfig.from_args(args, settings)
    ifs = config.load_ifs()
    result = torus_limit_sequence(
        ifs,
        config.n_max,
        config.J,
        config.eps,
        rule=config.rule,
        seed=config.seed,
        **discretize_kwargs(config.settings),
    )
    written = [
        write_jacobi_csv(result.jacobi[n], config.path(f"torus_limit_jacobi_n{n}.csv")) for n in sorted(result.jacobi)
    ]
    eps_headers = [f"N_eps_{e:g}" for e in result.eps]
    rows = [(n, max_diff, *counts) for n, max_diff, counts in result.stabilization()]
    written.append(write_csv(config.path("torus_stabilization.csv"), ["n", "max_diff", *eps_headers], rows))
    surface = (
        (n, int(j), d)
        for n in sorted(result.profiles)
        for j, d in zip(result.profiles[n].j, result.profiles[n].diff)
    )
    written.append(write_csv(config.path("torus_limit_diff.csv"), ["n", "j", "diff_b"], surface))
    _print_table(rows, ["n", "max |b(theta_n) - b(theta_n-1)|", *eps_headers], config)
    if config.svg and rows:
        levels = [r[0] for r in rows]
        series = {f"eps = {e:g}": (levels, [r[2 + k] for r in rows]) for k, e in enumerate(result.eps)}
        written.append(
            plotting.line_plot(
                config.path("torus_stabilization.svg"), series, xlabel="n", ylabel="N(eps, n)", yscale="log", marker="o"
            )
        )
    _print_written(*written)


def handle_spectrum(args, settings: Settings):
    """Harmonic amplitudes of b_j(theta_n), axis slices, and gap/amplitude pairs across levels."""
    config = ExperimentConfig.from_args(args, settings)
    ifs = config.load_ifs()
    n = config.n
    ref = torus_reference(ifs, n, config.J, config.L, config.settings, rule=config.rule, seed=config.seed)
    spectrum = ref.spectrum
    lattice = ref.lattice
    written = [write_spectrum_csv(spectrum, config.path(f"spectrum_n{n}_L{config.L}.csv"))]

    axis_rows = []
    for i in range(lattice.d):
        for m, e in enumerate(lattice.axis_entries(i), start=1):
            axis_rows.append((i + 1, m, lattice.omega[e], spectrum.amplitudes[e]))
    written.append(write_csv(config.path(f"axis_n{n}.csv"), ["axis", "k_i", "omega_k", "amplitude"], axis_rows))

    gaps = ordered_gaps(ifs, n)
    principal = principal_amplitudes(spectrum)
    angular = 2.0 * np.pi * ref.solution.frequencies
    principal_rows = [
        (g + 1, int(p) + 1, gaps.widths[g], angular[p], principal[p]) for g, p in enumerate(gaps.order)
    ]
    written.append(
        write_csv(
            config.path(f"principal_n{n}.csv"),
            ["index", "position", "gap_width", "angular_omega", "amplitude"],
            principal_rows,
        )
    )
    _print_table(principal_rows, ["gap", "position", "width", "angular omega", "|C|"], config)

    if lattice.d == 2 and args.psi_grid > 0:
        a1, a2, values = psi_samples(spectrum, args.psi_grid)
        rows = zip(a1.ravel(), a2.ravel(), values.ravel())
        written.append(write_csv(config.path(f"psi_n{n}.csv"), ["alpha_1", "alpha_2", "psi"], (list(r) for r in rows)))

    if args.levels:
        pairs = gap_amplitude_pairs(ifs, args.levels, config.J, config.L, config.settings)
        written.append(write_csv(config.path("gap_amplitude.csv"), ["n", "i", "gap_width", "amplitude"], pairs))
        widths = [p[2] for p in pairs]
        amps = [p[3] for p in pairs]
        slope, corr = proportionality_fit(widths, amps)
        _print_table([(",".join(map(str, args.levels)), slope, corr)], ["levels", "slope A", "correlation"], config)
        if config.svg:
            written.append(
                plotting.scatter_fit_plot(
                    config.path("gap_amplitude.svg"), widths, amps, slope, xlabel="|G_i^n|", ylabel="|C_i^n|"
                )
            )

    if config.svg:
        keep = spectrum.multiplicity > 0
        written.append(
            plotting.stem_plot(
                config.path(f"spectrum_n{n}.svg"), lattice.omega[keep], spectrum.amplitudes[keep]
            )
        )
        series = {}
        for i in range(lattice.d):
            rows = [r for r in axis_rows if r[0] == i + 1]
            series[f"axis {i + 1}"] = ([r[1] for r in rows], [r[3] for r in rows])
        written.append(
            plotting.line_plot(
                config.path(f"axis_n{n}.svg"), series, xlabel="k_i", ylabel="|C_k|", yscale="log", marker="o"
            )
        )
    _print_written(*written)


def handle_converge_iso(args, settings: Settings):
    """|b_j(mu_n) - b_j(theta_n)| for the matched torus matrix, per initial measure."""
    config = ExperimentConfig.from_args(args, settings)
    ifs = config.load_ifs()
    n = config.n
    ref = torus_reference(ifs, n, config.J, config.L, config.settings)
    written = []
    rows = []
    series = {}
    for case in config.case:
        result = converge_to_torus(ifs, case, n, config.J, config.L, config.settings, reference=ref)
        written.append(
            write_csv(
                config.path(f"converge_iso_{case}_n{n}.csv"),
                ["j", "b_mu", "b_theta", "diff"],
                (list(r) for r in zip(result.j, result.b_mu, result.b_theta, result.diff)),
            )
        )
        bound = fit_power_bound(result.j, result.diff)
        try:
            decay = fit_exponential_decay(result.j, result.diff).d
        except IsotorusValidationError as e:
            logger.info(f"No exponential fit for case {case}: {e}")
            decay = ""
        rows.append((case, float(result.diff.max()), bound.A, bound.exceed_fraction, decay))
        series[f"case {case}"] = (result.j, result.diff)
        if case == "a" and config.svg:
            series["A/j"] = (result.j, bound.A / result.j)
    _print_table(rows, ["case", "max diff", "A (A/j bound)", "fraction above", "d (exp fit)"], config)
    if config.svg:
        written.append(
            plotting.line_plot(
                config.path(f"converge_iso_n{n}.svg"), series, ylabel="|b_j(mu_n) - b_j(theta_n)|", xscale="log", yscale="log"
            )
        )
    _print_written(*written)


def handle_converge_infty(args, settings: Settings):
    """Decay rates d_n, delta, and N(eps, n) against the balanced measure."""
    config = ExperimentConfig.from_args(args, settings)
    ifs = config.load_ifs()
    case = config.case[0]
    result = converge_to_balanced(ifs, case, config.n_max, config.J, config.L, config.eps, config.settings)
    written = []
    slope_rows = [(n, f.c, f.d, f.start, f.end, f.plateau) for n, f in sorted(result.fits.items())]
    written.append(
        write_csv(config.path("slopes.csv"), ["n", "c_n", "d_n", "fit_start", "fit_end", "plateau"], slope_rows)
    )
    eps_headers = [f"N_eps_{e:g}" for e in result.eps]
    stab_rows = [(n, result.reference_line(n), *counts) for n, counts in sorted(result.stabilization.items())]
    written.append(write_csv(config.path("stabilization.csv"), ["n", "exp_delta_n", *eps_headers], stab_rows))
    surface = ((n, j + 1, d) for n, diff in sorted(result.differences.items()) for j, d in enumerate(diff))
    written.append(write_csv(config.path("balanced_diff.csv"), ["n", "j", "diff_b"], surface))
    written.append(write_jacobi_csv(result.balanced.jacobi, config.path("balanced_jacobi.csv")))
    _print_table(slope_rows, ["n", "c_n", "d_n", "fit start", "fit end", "plateau"], config)
    _print_table(
        [("" if result.delta is None else result.delta, result.balanced.n, result.balanced.delta)],
        ["delta", "balanced n", "balanced change"],
        config,
    )
    _print_table(stab_rows, ["n", "exp(delta n)", *eps_headers], config)
    if config.svg and stab_rows:
        levels = [r[0] for r in stab_rows]
        series = {f"eps = {e:g}": (levels, [r[2 + k] for r in stab_rows]) for k, e in enumerate(result.eps)}
        if result.delta is not None:
            series["exp(delta n)"] = (levels, [r[1] for r in stab_rows])
        written.append(
            plotting.line_plot(
                config.path("stabilization.svg"), series, xlabel="n", ylabel="j", yscale="log", marker="o"
            )
        )
    _print_written(*written)


def handle_compare(args, settings: Settings):
    """Error profile and N(eps) between two Jacobi CSV files."""
    config = ExperimentConfig.from_args(args, settings)
    x = read_jacobi_csv(args.first)
    y = read_jacobi_csv(args.second)
    profile = compare_sequences(x, y)
    written = [write_error_profile_csv(profile, config.path("compare.csv"))]
    rows = [(e, profile.stabilization_index(e)) for e in config.eps]
    _print_table(rows, ["eps", "N(eps)"], config)
    if config.svg:
        written.append(
            plotting.line_plot(
                config.path("compare.svg"),
                {"|diff b_j|": (profile.j, profile.diff), "running max": (profile.j, profile.eps)},
                xscale="log",
                yscale="log",
            )
        )
    _print_written(*written)


def handle_gen_config(args, settings: Settings = None):
    """Writes the default settings to ~/.isotorus/config.json (or --path)."""
    path = args.path or DEFAULT_CONFIG_FILE
    try:
        Settings().write(path)
    except OSError as e:
        logger.error(f"Error generating config file: {e}")
        sys.exit(1)
    print(f"Default config file generated at {path}")


# --- Parser Construction ---


def _add_help(parser: argparse.ArgumentParser):
    parser.add_argument(
        "-h",
        "--help",
        action="help",
        default=argparse.SUPPRESS,
        help="Show this help message and exit.",
    )


def _add_parser_global(parser: argparse.ArgumentParser):
    """Adds global arguments to the main parser."""
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    log_level_group = parser.add_mutually_exclusive_group()
    log_level_group.add_argument(
        "-i",
        "--info",
        action="store_true",
        help="Use info level logging (default is WARNING).",
    )
    log_level_group.add_argument(
        "-D",
        "--debug",
        action="store_true",
        help="Enable debug level logging to stderr.",
    )
    parser.add_argument(
        "--config",
        help=f"Path to a specific config JSON file (overrides default {DEFAULT_CONFIG_FILE}).",
        default=None,
    )
    parser.add_argument("-o", "--out", default=DEFAULT_OUT_DIR, help="Output directory for CSV/SVG files.")
    parser.add_argument("--svg", action="store_true", help="Also render SVG figures.")
    parser.add_argument(
        "--table-format",
        default=DEFAULT_TABLE_FORMAT,
        choices=tabulate_formats,
        help="tabulate format of the stdout summary.",
    )


def _add_output_args(parser: argparse.ArgumentParser):
    """Repeats --out/--svg after the command; they only override the global values when given."""
    parser.add_argument("-o", "--out", default=argparse.SUPPRESS, help="Output directory for CSV/SVG files.")
    parser.add_argument("--svg", action="store_true", default=argparse.SUPPRESS, help="Also render SVG figures.")


def _add_ifs_args(parser: argparse.ArgumentParser, level: bool = True, required: bool = True):
    parser.add_argument(
        "--ifs",
        required=required,
        help=f"IFS JSON file, or a built-in name ({', '.join(BUILTIN_IFS)}).",
    )
    if level:
        parser.add_argument("--n", type=int, default=2, help="Level n of E^n.")


def _add_seed_args(parser: argparse.ArgumentParser):
    parser.add_argument("--rule", choices=POINT_RULES, default=DEFAULT_POINT_RULE, help="Torus point rule.")
    parser.add_argument("--seed", type=int, default=None, help="Seed of the 'random' rule (default from config).")
    parser.add_argument(
        "--seedless",
        action="store_true",
        help="Draw the 'random' rule from OS entropy; output is no longer reproducible.",
    )


def _add_harmonic_args(parser: argparse.ArgumentParser, J: int, L: int):
    parser.add_argument("--J", type=int, default=J, help="Order of the Jacobi matrices.")
    parser.add_argument("--L", type=int, default=L, help="Lattice radius |k|_1 <= L.")
    parser.add_argument("--sidelobe-db", type=float, default=None, help="Window sidelobe attenuation in dB.")
    parser.add_argument("--window-len", type=int, default=None, help="Explicit odd window length.")


def _subparser(subparsers: argparse._SubParsersAction, name: str, help: str) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(name, help=help, formatter_class=RawTextRichHelpFormatter, add_help=False)
    _add_help(parser)
    return parser


def _add_parser_bands(subparsers: argparse._SubParsersAction):
    """Adds arguments for the 'bands' subcommand."""
    parser_bands = _subparser(subparsers, "bands", "Bands of E^n and its gaps in birth order.")
    _add_ifs_args(parser_bands)
    _add_output_args(parser_bands)
    parser_bands.set_defaults(func=handle_bands)


def _add_parser_equilibrium(subparsers: argparse._SubParsersAction):
    """Adds arguments for the 'equilibrium' subcommand."""
    parser_eq = _subparser(subparsers, "equilibrium", "Equilibrium measure: zeta, masses, frequencies, capacity.")
    _add_ifs_args(parser_eq, required=False)
    parser_eq.add_argument(
        "--band",
        nargs=2,
        type=float,
        action="append",
        metavar=("ALPHA", "BETA"),
        help="A band of an explicit union (repeatable); replaces --ifs/--n.",
    )
    _add_output_args(parser_eq)
    parser_eq.set_defaults(func=handle_equilibrium)


def _add_parser_torus_jacobi(subparsers: argparse._SubParsersAction):
    """Adds arguments for the 'torus-jacobi' subcommand."""
    parser_tj = _subparser(subparsers, "torus-jacobi", "Jacobi matrix of a torus measure and its error profile.")
    _add_ifs_args(parser_tj)
    parser_tj.add_argument("--J", type=int, default=1024, help="Order of the Jacobi matrix.")
    _add_seed_args(parser_tj)
    parser_tj.add_argument("--point", default=None, help="Torus point JSON file (overrides --rule).")
    parser_tj.add_argument(
        "--refine-factor", type=int, default=4, help="Node multiplier of the reference run for eps_j."
    )
    _add_output_args(parser_tj)
    parser_tj.set_defaults(func=handle_torus_jacobi)


def _add_parser_torus_limit(subparsers: argparse._SubParsersAction):
    """Adds arguments for the 'torus-limit' subcommand."""
    parser_tl = _subparser(subparsers, "torus-limit", "theta_n for n = 1..n_max and their stabilization.")
    _add_ifs_args(parser_tl, level=False)
    parser_tl.add_argument("--n-max", type=int, default=4, help="Largest level.")
    parser_tl.add_argument("--J", type=int, default=1024, help="Order of the Jacobi matrices.")
    parser_tl.add_argument("--eps", type=_eps_list, default=DEFAULT_EPS, help="Comma-separated eps values.")
    _add_seed_args(parser_tl)
    _add_output_args(parser_tl)
    parser_tl.set_defaults(func=handle_torus_limit)


def _add_parser_spectrum(subparsers: argparse._SubParsersAction):
    """Adds arguments for the 'spectrum' subcommand."""
    parser_sp = _subparser(subparsers, "spectrum", "Harmonic amplitudes of the torus off-diagonal.")
    _add_ifs_args(parser_sp)
    _add_harmonic_args(parser_sp, J=20000, L=6)
    _add_seed_args(parser_sp)
    parser_sp.add_argument(
        "--levels", type=_int_list, default=None, help="Comma-separated levels for gap/amplitude pairs, e.g. 2,3."
    )
    parser_sp.add_argument("--psi-grid", type=int, default=0, help="Tabulate Psi on a grid of this size (3 bands).")
    _add_output_args(parser_sp)
    parser_sp.set_defaults(func=handle_spectrum)


def _add_parser_converge_iso(subparsers: argparse._SubParsersAction):
    """Adds arguments for the 'converge-iso' subcommand."""
    parser_ci = _subparser(subparsers, "converge-iso", "Distance of mu_n from its matching torus matrix.")
    _add_ifs_args(parser_ci)
    parser_ci.add_argument("--case", choices=[*INITIAL_MEASURES, "both"], default="a", help="Initial measure mu_0.")
    _add_harmonic_args(parser_ci, J=4096, L=4)
    _add_output_args(parser_ci)
    parser_ci.set_defaults(func=handle_converge_iso)


def _add_parser_converge_infty(subparsers: argparse._SubParsersAction):
    """Adds arguments for the 'converge-infty' subcommand."""
    parser_cf = _subparser(subparsers, "converge-infty", "Decay rates d_n, delta, and N(eps, n) against mu_inf.")
    _add_ifs_args(parser_cf, level=False)
    parser_cf.add_argument("--case", choices=INITIAL_MEASURES, default="b", help="Initial measure mu_0.")
    parser_cf.add_argument("--n-max", type=int, default=3, help="Largest level.")
    parser_cf.add_argument("--eps", type=_eps_list, default=DEFAULT_EPS, help="Comma-separated eps values.")
    _add_harmonic_args(parser_cf, J=4096, L=3)
    _add_output_args(parser_cf)
    parser_cf.set_defaults(func=handle_converge_infty)


def _add_parser_compare(subparsers: argparse._SubParsersAction):
    """Adds arguments for the 'compare' subcommand."""
    parser_cmp = _subparser(subparsers, "compare", "Compare the off-diagonals of two Jacobi CSV files.")
    parser_cmp.add_argument("first", help="Jacobi CSV (j,a_j,b_j).")
    parser_cmp.add_argument("second", help="Jacobi CSV (j,a_j,b_j).")
    parser_cmp.add_argument("--eps", type=_eps_list, default=DEFAULT_EPS, help="Comma-separated eps values.")
    _add_output_args(parser_cmp)
    parser_cmp.set_defaults(func=handle_compare)


def _add_parser_gen_config(subparsers: argparse._SubParsersAction):
    """Adds arguments for the 'gen-config' subcommand."""
    parser_gen_config = _subparser(subparsers, "gen-config", f"Generate a default config file at {DEFAULT_CONFIG_FILE}")
    parser_gen_config.add_argument("--path", default=None, help="Write to this path instead.")
    parser_gen_config.set_defaults(func=handle_gen_config, requires_settings=False)


def build_parser():
    """Builds the argument parser."""
    parser = argparse.ArgumentParser(
        prog="isotorus",
        description="Isospectral torus experiments for IFS attractors.\nLogs to stderr, writes CSV files to --out and summaries to stdout.",
        formatter_class=RawTextRichHelpFormatter,
        add_help=False,
        epilog=CLI_EPILOG,
    )
    _add_help(parser)
    _add_parser_global(parser)
    subparsers = parser.add_subparsers(dest="command", required=True, help="Available sub-commands")
    _add_parser_bands(subparsers)
    _add_parser_equilibrium(subparsers)
    _add_parser_torus_jacobi(subparsers)
    _add_parser_torus_limit(subparsers)
    _add_parser_spectrum(subparsers)
    _add_parser_converge_iso(subparsers)
    _add_parser_converge_infty(subparsers)
    _add_parser_compare(subparsers)
    _add_parser_gen_config(subparsers)
    return parser


def _configure_logging(args: argparse.Namespace):
    log_level = logging.WARNING
    if args.info:
        log_level = logging.INFO
    elif args.debug:
        log_level = logging.DEBUG
    logger.setLevel(log_level)
    library_logger = logging.getLogger("isotorus")
    library_logger.setLevel(log_level)
    if not library_logger.hasHandlers():
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        library_logger.addHandler(handler)
    if log_level <= logging.INFO:
        logger.info(f"Log level set to {logging.getLevelName(log_level)}")


def main(argv: Optional[List[str]] = None):
    """Main entry point for the CLI."""
    parser = build_parser()
    argcomplete.autocomplete(parser)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse reports usage errors with code 2 itself
        sys.exit(e.code if e.code is not None else 1)
    _configure_logging(args)

    settings = None
    if getattr(args, "requires_settings", True):
        try:
            settings = Settings.load(args.config)
        except IsotorusValidationError as e:
            logger.error(str(e))
            sys.exit(EXIT_VALIDATION)

    try:
        args.func(args, settings)
    except KeyboardInterrupt:
        logger.info("\nOperation cancelled by user.")
        sys.exit(130)
    except SystemExit as e:
        sys.exit(e.code if e.code is not None else 0)
    except IsotorusValidationError as e:
        logger.error(str(e))
        sys.exit(EXIT_VALIDATION)
    except IsotorusNumericalError as e:
        logger.error(f"Numerical failure in '{args.command}': {e}")
        sys.exit(EXIT_NUMERICAL)
    except Exception as e:
        logger.exception(f"An unexpected error occurred during command '{args.command}': {e}")
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    # Setup IceCream (optional, for debugging convenience if installed)
    try:
        from icecream import install

        install()
    except ImportError:  # icecream not installed
        pass
    main()
