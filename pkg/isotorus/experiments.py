"""
Experiment pipelines shared by the CLI commands: torus references, the
mu_n -> theta_n matching of the convergence study, decay fits and the
stabilization gauge.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from isotorus import IsotorusNumericalError, IsotorusValidationError
from isotorus.config import Settings
from isotorus.equilibrium import EquilibriumSolution, solve_zeta
from isotorus.harmonic import (
    FrequencyLattice,
    HarmonicSpectrum,
    build_lattice,
    default_window,
    extract_spectrum,
    lag_extrapolate,
    principal_amplitudes,
    synthesize,
)
from isotorus.ifs import AffineIFS, IntervalUnion, gaps_of
from isotorus.jacobi import (
    BalancedJacobi,
    ErrorProfile,
    JacobiMatrix,
    compare_sequences,
    jacobi_balanced,
    jacobi_mu_n,
)
from isotorus.torus import (
    DEFAULT_POINT_RULE,
    TorusPoint,
    torus_jacobi,
    torus_jacobi_at,
    torus_measure,
    torus_point_for_level,
)

logger = logging.getLogger(__name__)

DEFAULT_FIT_START = 5
PLATEAU_FACTOR = 10.0
POWER_BOUND_QUANTILE = 95.0


# --------------------
# fits
# --------------------


@dataclass(frozen=True)
class DecayFit:
    """diff_j ~ c exp(-d j) fitted over [start, end)."""

    c: float
    d: float
    start: int
    end: int
    plateau: float


def fit_exponential_decay(j, diff, start: int = DEFAULT_FIT_START) -> DecayFit:
    """
    Log-linear least squares over the pre-plateau window.

    The plateau level is the median of the last quarter of `diff`; the window
    ends at the first j >= start where diff drops below PLATEAU_FACTOR times it.
    """
    j = np.asarray(j, dtype=float)
    diff = np.asarray(diff, dtype=float)
    if j.size != diff.size or j.size < 4:
        raise IsotorusValidationError("Need matching j and diff arrays with at least 4 points.")
    plateau = float(np.median(diff[-max(1, diff.size // 4) :]))
    below = np.flatnonzero((j >= start) & (diff < PLATEAU_FACTOR * plateau))
    end = int(j[below[0]]) if below.size else int(j[-1]) + 1
    window = (j >= start) & (j < end) & (diff > 0)
    if window.sum() < 2:
        raise IsotorusValidationError(
            f"Pre-plateau window [{start}, {end}) holds fewer than two points; the difference is already at its floor."
        )
    slope, intercept = np.polyfit(j[window], np.log(diff[window]), 1)
    return DecayFit(c=float(math.exp(intercept)), d=float(-slope), start=start, end=end, plateau=plateau)


@dataclass(frozen=True)
class PowerBound:
    """diff_j <= A / j for all but `exceed_fraction` of the points in range."""

    A: float
    exceed_fraction: float
    j_range: Tuple[float, float]


def fit_power_bound(j, diff, j_range: Tuple[float, float] = (10, 1000)) -> PowerBound:
    j = np.asarray(j, dtype=float)
    diff = np.asarray(diff, dtype=float)
    mask = (j >= j_range[0]) & (j <= j_range[1])
    if not mask.any():
        raise IsotorusValidationError(f"No points in j range {j_range}.")
    scaled = j[mask] * diff[mask]
    A = float(np.percentile(scaled, POWER_BOUND_QUANTILE))
    exceed = float(np.mean(scaled > A))
    return PowerBound(A=A, exceed_fraction=exceed, j_range=(float(j_range[0]), float(j_range[1])))


def fit_delta(n: Sequence[int], d_n: Sequence[float]) -> Tuple[float, float]:
    """delta and c from log d_n = c - delta n."""
    n = np.asarray(n, dtype=float)
    d_n = np.asarray(d_n, dtype=float)
    if n.size < 2 or np.any(d_n <= 0):
        raise IsotorusValidationError("Need at least two positive decay rates to fit delta.")
    slope, intercept = np.polyfit(n, np.log(d_n), 1)
    return float(-slope), float(intercept)


def stabilization_index(x, y, eps: float) -> int:
    """Largest l with |x_j - y_j| <= eps for every j <= l (both sequences start at j = 1)."""
    if not eps > 0:
        raise IsotorusValidationError(f"eps must be positive, got {eps!r}.")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = min(x.size, y.size)
    bad = np.flatnonzero(np.abs(x[:m] - y[:m]) > eps)
    return int(bad[0]) if bad.size else m


def proportionality_fit(x, y) -> Tuple[float, float]:
    """Slope of y = A x through the origin and the correlation of x and y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise IsotorusValidationError("Need at least two points for a proportionality fit.")
    slope = float(np.dot(x, y) / np.dot(x, x))
    corr = float(np.corrcoef(x, y)[0, 1])
    return slope, corr


# --------------------
# pipelines
# --------------------


def discretize_kwargs(settings: Settings) -> Dict[str, float]:
    """Keyword arguments of torus_jacobi taken from settings."""
    return dict(
        start=settings.discretize_start,
        cap=settings.discretize_cap,
        tol=settings.discretize_tol,
        atom_budget=settings.atom_budget,
        reorth_memory_mb=settings.reorth_memory_mb,
    )


def _window_for(length: int, lattice: FrequencyLattice, settings: Settings):
    return default_window(
        length,
        lattice,
        sidelobe_db=settings.sidelobe_db,
        min_len=settings.window_min_len,
        spacing_factor=settings.window_spacing_factor,
    )


@dataclass(frozen=True, eq=False)
class TorusReference:
    """theta_n for a torus point together with the spectrum of its off-diagonal."""

    n: int
    bands: IntervalUnion
    point: TorusPoint
    solution: EquilibriumSolution
    lattice: FrequencyLattice
    jacobi: JacobiMatrix
    spectrum: HarmonicSpectrum
    nodes: int


def torus_reference(
    ifs: AffineIFS,
    n: int,
    J: int,
    L: int,
    settings: Settings = Settings(),
    rule: str = DEFAULT_POINT_RULE,
    seed: Optional[int] = None,
    window_length: Optional[int] = None,
) -> TorusReference:
    """
    Builds E^n, its equilibrium frequencies and lattice, J(theta_n) for the rule's
    point, and the spectrum of b_1..b_{J-1} at lag 0.
    """
    if n < 1:
        raise IsotorusValidationError(f"A harmonic analysis needs at least one gap, so n >= 1 (got {n}).")
    seed = settings.seed if seed is None else seed
    bands, point = torus_point_for_level(ifs, n, rule, seed)
    solution = solve_zeta(bands, settings.tol, settings.max_iterations, settings.quad_nodes)
    lattice = build_lattice(solution.frequencies, L)
    jacobi, nodes = torus_jacobi(bands, point, J, **discretize_kwargs(settings))
    seq = jacobi.b[1:]
    window = _window_for(seq.size if window_length is None else window_length, lattice, settings)
    spectrum = extract_spectrum(
        seq,
        lattice,
        window=window,
        lag=0,
        refine_steps=settings.refine_steps,
        condition_cap=settings.condition_cap,
    )
    logger.info(f"theta_{n}: {len(lattice)} lattice entries, window {window.length}, {nodes} nodes per band")
    return TorusReference(
        n=n,
        bands=bands,
        point=point,
        solution=solution,
        lattice=lattice,
        jacobi=jacobi,
        spectrum=spectrum,
        nodes=nodes,
    )


def torus_error_profile(
    bands: IntervalUnion, point: TorusPoint, J: int, settings: Settings = Settings(), factor: int = 4
) -> Tuple[JacobiMatrix, ErrorProfile, int]:
    """
    J(theta) from the adaptive discretization and eps_j against a rerun with
    `factor` times as many nodes per band.

    Returns:
        (jacobi, profile, nodes per band of the coarse run).
    """
    measure = torus_measure(bands, point)
    coarse, P = torus_jacobi(bands, point, J, measure=measure, **discretize_kwargs(settings))
    fine_atoms = bands.N * P * factor + measure.atom_positions.size
    if fine_atoms > settings.atom_budget:
        raise IsotorusValidationError(
            f"The refined run needs {fine_atoms} atoms, above the budget of {settings.atom_budget}; use a smaller J."
        )
    fine = torus_jacobi_at(measure, factor * P, J, reorth_memory_mb=settings.reorth_memory_mb)
    return coarse, compare_sequences(coarse, fine), P


@dataclass(frozen=True, eq=False)
class ConvergenceResult:
    """|b_j(mu_n) - b_j(theta_n)| with theta_n synthesized from torus amplitudes and mu_n phases."""

    n: int
    case: str
    j: np.ndarray
    diff: np.ndarray
    b_mu: np.ndarray
    b_theta: np.ndarray
    spectrum: HarmonicSpectrum
    reference: TorusReference
    mu: JacobiMatrix


def matched_spectrum(reference: TorusReference, phased: HarmonicSpectrum) -> HarmonicSpectrum:
    """Torus amplitudes with the phases of `phased`; real coefficients keep the torus values."""
    lattice = reference.lattice
    amplitudes = reference.spectrum.amplitudes
    real_type = reference.spectrum.real_type
    coefficients = np.where(
        real_type,
        reference.spectrum.coefficients,
        amplitudes * np.exp(1j * phased.phases),
    )
    return HarmonicSpectrum(
        lattice=lattice,
        coefficients=coefficients,
        multiplicity=reference.spectrum.multiplicity,
        lag=0,
        window_length=phased.window_length,
        unreliable=phased.unreliable,
        lags=phased.lags,
        real_type=real_type,
    )


def converge_to_torus(
    ifs: AffineIFS,
    case: str,
    n: int,
    J: int,
    L: int,
    settings: Settings = Settings(),
    reference: Optional[TorusReference] = None,
) -> ConvergenceResult:
    """
    Finds the matrix in the isospectral torus that mu_n approaches: the
    lag-extrapolated phases of b_j(mu_n) are combined with the torus amplitudes,
    and the synthesized sequence is compared with b_j(mu_n).
    """
    if reference is None:
        reference = torus_reference(ifs, n, J, L, settings)
    mu = jacobi_mu_n(
        ifs,
        case,
        n,
        J,
        tol=settings.discretize_tol,
        atom_budget=settings.atom_budget,
        reorth_memory_mb=settings.reorth_memory_mb,
    )
    seq = mu.b[1:]
    window = _window_for(seq.size // 2, reference.lattice, settings)
    phased = lag_extrapolate(
        seq,
        reference.lattice,
        window=window,
        fit_residual_tol=settings.fit_residual_tol,
        lag_count=settings.lag_count,
        refine_steps=settings.refine_steps,
        condition_cap=settings.condition_cap,
    )
    spectrum = matched_spectrum(reference, phased)
    b_theta = synthesize(spectrum, (0, seq.size))
    diff = np.abs(seq - b_theta)
    logger.info(f"mu_{n} (case {case}): max difference {diff.max():.3e}, final {diff[-1]:.3e}")
    return ConvergenceResult(
        n=n,
        case=case,
        j=np.arange(1, seq.size + 1),
        diff=diff,
        b_mu=seq,
        b_theta=b_theta,
        spectrum=spectrum,
        reference=reference,
        mu=mu,
    )


@dataclass(frozen=True, eq=False)
class InfinityResult:
    """Decay rates d_n, delta, and N(eps, n) against the balanced measure."""

    fits: Dict[int, DecayFit]
    delta: Optional[float]
    eps: Tuple[float, ...]
    stabilization: Dict[int, List[int]]
    differences: Dict[int, np.ndarray]
    balanced: BalancedJacobi
    convergence: Dict[int, ConvergenceResult] = field(default_factory=dict)

    def reference_line(self, n: int) -> float:
        """k(n) = exp(delta n)."""
        return math.exp(self.delta * n) if self.delta is not None else math.nan


def converge_to_balanced(
    ifs: AffineIFS,
    case: str,
    n_max: int,
    J: int,
    L: int,
    eps: Sequence[float],
    settings: Settings = Settings(),
) -> InfinityResult:
    """
    For n = 1..n_max: the decay rate d_n of |b_j(mu_n) - b_j(theta_n)|, and
    |b_j(mu_n) - b_j(mu_inf)| with its stabilization index per eps.
    """
    if n_max < 1:
        raise IsotorusValidationError(f"n_max must be at least 1, got {n_max}.")
    eps = tuple(sorted(float(e) for e in eps))
    if not eps or eps[0] <= 0:
        raise IsotorusValidationError("Need at least one positive eps.")
    try:
        balanced = jacobi_balanced(
            ifs,
            J,
            eps=eps[0] * 1e-2,
            base_nodes=settings.base_nodes,
            atom_budget=settings.atom_budget,
            reorth_memory_mb=settings.reorth_memory_mb,
        )
    except IsotorusNumericalError as e:
        if e.partial is None:
            raise
        logger.warning(f"{e}; using the last balanced estimate")
        balanced = e.partial

    fits: Dict[int, DecayFit] = {}
    stabilization: Dict[int, List[int]] = {}
    differences: Dict[int, np.ndarray] = {}
    convergence: Dict[int, ConvergenceResult] = {}
    for n in range(1, n_max + 1):
        result = converge_to_torus(ifs, case, n, J, L, settings)
        convergence[n] = result
        try:
            fits[n] = fit_exponential_decay(result.j, result.diff)
        except IsotorusValidationError as e:
            logger.warning(f"No decay fit for n = {n}: {e}")
        profile = compare_sequences(result.mu, balanced.jacobi)
        differences[n] = profile.diff
        stabilization[n] = [profile.stabilization_index(e) for e in eps]
        logger.info(f"n = {n}: N(eps) = {stabilization[n]}")

    delta = None
    levels = sorted(n for n in fits if fits[n].d > 0)
    if len(levels) >= 2:
        delta, _ = fit_delta(levels, [fits[n].d for n in levels])
    return InfinityResult(
        fits=fits,
        delta=delta,
        eps=eps,
        stabilization=stabilization,
        differences=differences,
        balanced=balanced,
        convergence=convergence,
    )


def gap_amplitude_pairs(
    ifs: AffineIFS, levels: Sequence[int], J: int, L: int, settings: Settings = Settings()
) -> List[Tuple[int, int, float, float]]:
    """
    Rows (n, i, |G^n_i|, |C^n_i|): the width of the i-th gap of E^n in ascending
    order and the amplitude at the unit vector e_i of its torus spectrum.
    """
    rows = []
    for n in levels:
        reference = torus_reference(ifs, n, J, L, settings)
        widths = gaps_of(reference.bands).widths
        amps = principal_amplitudes(reference.spectrum)
        rows.extend((n, i + 1, float(w), float(a)) for i, (w, a) in enumerate(zip(widths, amps)))
    return rows
