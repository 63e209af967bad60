"""
Known-frequency harmonic analysis of almost-periodic sequences.

A sequence is modelled as

    b_j = sum_k C_k exp(i theta_k j) + conj,   theta_k = 2 pi k . omega,

over a finite lattice of integer vectors k with one of each +-k pair kept. The
DC term (and any term aliased to pi within the merge tolerance) is real, sits
exactly at 0 or pi and is counted once, so a real cosine of amplitude A at a
non-zero frequency has |C_k| = A / 2.

Amplitudes are recovered from a Dolph-Chebyshev windowed transform evaluated at
the lattice frequencies: the transform of the window couples each frequency only
to the ones inside its main lobe, which makes the linear system banded. The
off-band sidelobe leakage is removed by iterative refinement with the full kernel.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.signal.windows import chebwin
from scipy.sparse.linalg import LinearOperator, onenormest

from isotorus import IsotorusNumericalError, IsotorusValidationError
from isotorus.utils import write_csv

logger = logging.getLogger(__name__)

DEFAULT_SIDELOBE_DB = 120.0
DEFAULT_WINDOW_MIN_LEN = 4001
DEFAULT_SPACING_FACTOR = 16.0
# windows shorter than this many inverse spacings draw a warning
MIN_SPACING_FACTOR = 8.0
DEFAULT_REFINE_STEPS = 3
DEFAULT_CONDITION_CAP = 1e12
DEFAULT_LAG_COUNT = 8
DEFAULT_FIT_RESIDUAL_TOL = 1e-3
LATTICE_COLLISION_TOL = 1e-9
# lattice entries closer than this fraction of 2 pi / window length share one unknown
MERGE_FRACTION = 0.25
# real-type tolerance of spectra not produced by a windowed fit
EXACT_REAL_TOL = 1e-12
_BLOCK = 2**22


@dataclass(frozen=True, eq=False)
class FrequencyLattice:
    """
    Retained index vectors with their frequencies folded into [0, pi].

    `conjugate[e]` is set when 2 pi k . omega fell in (pi, 2 pi) and was reflected.
    Entries are sorted by (omega, |k|_1, k).
    """

    fundamental: np.ndarray
    L: int
    k: np.ndarray
    omega: np.ndarray
    conjugate: np.ndarray
    collisions: Tuple[Tuple[int, int], ...] = ()

    def __len__(self) -> int:
        return int(self.omega.size)

    @property
    def d(self) -> int:
        return int(self.fundamental.size)

    @property
    def ball_size(self) -> int:
        """Number of integer vectors with |k|_1 <= L, both signs counted."""
        return 2 * len(self) - 1

    @property
    def norms(self) -> np.ndarray:
        return np.abs(self.k).sum(axis=1)

    def real_mask(self, tol: float = EXACT_REAL_TOL) -> np.ndarray:
        """Entries within `tol` of frequency 0 or pi; their coefficients are real."""
        return (self.omega <= tol) | (np.pi - self.omega <= tol)

    @property
    def signed_omega(self) -> np.ndarray:
        """theta_k of the retained orientation, modulo 2 pi."""
        return np.where(self.conjugate, -self.omega, self.omega)

    @property
    def min_spacing(self) -> float:
        if len(self) < 2:
            return math.inf
        gaps = np.diff(self.omega)
        gaps = gaps[gaps > LATTICE_COLLISION_TOL]
        return float(gaps.min()) if gaps.size else math.inf

    def index_of(self, k: Sequence[int]) -> int:
        k = np.asarray(k, dtype=int)
        hits = np.flatnonzero(np.all(self.k == k, axis=1))
        if not hits.size:
            hits = np.flatnonzero(np.all(self.k == -k, axis=1))
        if not hits.size:
            raise IsotorusValidationError(f"Index vector {k.tolist()} is not in the lattice.")
        return int(hits[0])

    def axis_entries(self, i: int) -> np.ndarray:
        """Entries k = m e_i for m = 1..L, ordered by m."""
        unit = np.zeros(self.d, dtype=int)
        unit[i] = 1
        return np.array([self.index_of(m * unit) for m in range(1, self.L + 1)], dtype=int)


def _l1_ball(d: int, L: int) -> np.ndarray:
    if d == 0:
        return np.zeros((1, 0), dtype=int)
    blocks = []
    for first in range(-L, L + 1):
        rest = _l1_ball(d - 1, L - abs(first))
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=int), rest]))
    return np.vstack(blocks)


def build_lattice(fundamental: Sequence[float], L: int) -> FrequencyLattice:
    """
    All k with |k|_1 <= L whose first non-zero component is positive (plus k = 0),
    with omega_k = 2 pi k . omega folded into [0, pi].

    Entries closer than LATTICE_COLLISION_TOL are reported in `collisions`; they
    are merged at extraction time, not rejected.
    """
    fundamental = np.asarray(fundamental, dtype=float).reshape(-1)
    if fundamental.size == 0:
        raise IsotorusValidationError("Need at least one fundamental frequency.")
    if np.any((fundamental <= 0) | (fundamental >= 1)):
        raise IsotorusValidationError("Fundamental frequencies must lie in (0, 1).")
    if L < 1:
        raise IsotorusValidationError(f"Lattice radius L must be at least 1, got {L}.")
    k = _l1_ball(fundamental.size, L)
    nonzero = k != 0
    first = np.argmax(nonzero, axis=1)
    lead = k[np.arange(len(k)), first]
    k = k[(lead > 0) | ~nonzero.any(axis=1)]

    frac = np.mod(k @ fundamental, 1.0)
    conjugate = frac > 0.5
    omega = 2.0 * np.pi * np.where(conjugate, 1.0 - frac, frac)
    omega = np.where(omega >= 2.0 * np.pi - 1e-15, 0.0, omega)

    keys = [k[:, c] for c in range(k.shape[1] - 1, -1, -1)] + [np.abs(k).sum(axis=1), omega]
    order = np.lexsort(keys)
    k, omega, conjugate = k[order], omega[order], conjugate[order]

    close = np.flatnonzero(np.diff(omega) < LATTICE_COLLISION_TOL)
    collisions = tuple((int(i), int(i + 1)) for i in close)
    if collisions:
        logger.warning(f"{len(collisions)} pairs of lattice frequencies coincide; they will share one unknown")
    k.setflags(write=False)
    omega.setflags(write=False)
    conjugate.setflags(write=False)
    return FrequencyLattice(
        fundamental=fundamental, L=L, k=k, omega=omega, conjugate=conjugate, collisions=collisions
    )


@dataclass(frozen=True, eq=False)
class Window:
    """Symmetric Dolph-Chebyshev window of odd length, normalized to sum 1."""

    length: int
    sidelobe_db: float
    weights: np.ndarray
    x0: float

    @property
    def half(self) -> int:
        return (self.length - 1) // 2

    @property
    def sidelobe_level(self) -> float:
        return 10.0 ** (-self.sidelobe_db / 20.0)

    @property
    def main_lobe(self) -> float:
        """Half-width of the main lobe; beyond it |W| stays at or below the sidelobe level."""
        return 2.0 * math.acos(1.0 / self.x0)

    def transform(self, x) -> np.ndarray:
        """Closed form W(x) = T_{M-1}(x0 cos(x / 2)) / T_{M-1}(x0), real and even."""
        y = self.x0 * np.cos(0.5 * np.asarray(x, dtype=float))
        n = self.length - 1
        out = np.empty(y.shape)
        inner = np.abs(y) <= 1.0
        out[inner] = np.cos(n * np.arccos(y[inner]))
        # n is even, so T_n(-y) = T_n(y)
        out[~inner] = np.cosh(n * np.arccosh(np.abs(y[~inner])))
        return out * self.sidelobe_level


def dolph_window(length: int, sidelobe_db: float = DEFAULT_SIDELOBE_DB) -> Window:
    if length < 3 or length % 2 == 0:
        raise IsotorusValidationError(f"Window length must be odd and at least 3, got {length}.")
    if not sidelobe_db > 0:
        raise IsotorusValidationError(f"Sidelobe attenuation must be positive, got {sidelobe_db!r}.")
    weights = chebwin(length, at=sidelobe_db)
    weights = weights / weights.sum()
    weights.setflags(write=False)
    x0 = math.cosh(math.acosh(10.0 ** (sidelobe_db / 20.0)) / (length - 1))
    return Window(length=length, sidelobe_db=sidelobe_db, weights=weights, x0=x0)


def default_window(
    available: int,
    lattice: FrequencyLattice,
    sidelobe_db: float = DEFAULT_SIDELOBE_DB,
    min_len: int = DEFAULT_WINDOW_MIN_LEN,
    spacing_factor: float = DEFAULT_SPACING_FACTOR,
) -> Window:
    """Length min(available, max(min_len, ceil(spacing_factor / min spacing))), made odd."""
    spacing = lattice.min_spacing
    wanted = min_len if math.isinf(spacing) else max(min_len, math.ceil(spacing_factor / spacing))
    length = min(available, wanted)
    if length % 2 == 0:
        length -= 1
    if length < 3:
        raise IsotorusValidationError(f"Sequence of {available} usable terms is too short for a window.")
    return dolph_window(length, sidelobe_db)


def _centered_dft(b: np.ndarray, window: Window, lag: int, omega: np.ndarray) -> np.ndarray:
    """sum_m w_m b_{c+m} exp(-i omega m), c = lag + half, with cos/sin folding of the symmetric window."""
    h = window.half
    seg = b[lag : lag + window.length]
    w = window.weights[h + 1 :]
    plus = w * (seg[h + 1 :] + seg[:h][::-1])
    minus = w * (seg[h + 1 :] - seg[:h][::-1])
    m = np.arange(1, h + 1)
    out = np.empty(omega.size, dtype=complex)
    step = max(1, _BLOCK // max(1, h))
    for start in range(0, omega.size, step):
        arg = np.outer(omega[start : start + step], m)
        out[start : start + step] = np.cos(arg) @ plus - 1j * (np.sin(arg) @ minus)
    return out + window.weights[h] * seg[h]


def _check_range(b: np.ndarray, window: Window, lag: int):
    if lag < 0 or lag + window.length > b.size:
        raise IsotorusValidationError(
            f"Window of length {window.length} at lag {lag} runs past the sequence of length {b.size}."
        )


def windowed_dft(b: Sequence[float], window: Window, lag: int, omega) -> np.ndarray:
    """F(omega) = sum_j w_j b_{lag+j} exp(-i omega (lag + j)) over the window support."""
    b = np.asarray(b, dtype=float)
    _check_range(b, window, lag)
    omega_arr = np.atleast_1d(np.asarray(omega, dtype=float))
    c = lag + window.half
    F = _centered_dft(b, window, lag, omega_arr) * np.exp(-1j * omega_arr * c)
    return F.reshape(np.shape(omega))


class _Kernel:
    """W(omega_r - omega_c) + sign * W(omega_r + omega_c), the second term dropped for real-type columns."""

    def __init__(self, window: Window, omega: np.ndarray, real_cols: np.ndarray, sign: float):
        self.window = window
        self.omega = omega
        self.image = np.where(real_cols, 0.0, sign)

    def entries(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        o_r, o_c = self.omega[rows], self.omega[cols]
        return self.window.transform(o_r - o_c) + self.image[cols] * self.window.transform(o_r + o_c)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        n = self.omega.size
        out = np.empty(n)
        cols = np.arange(n)
        step = max(1, _BLOCK // max(1, n))
        for start in range(0, n, step):
            rows = np.arange(start, min(n, start + step))
            out[rows] = self.entries(rows[:, None], cols[None, :]) @ x
        return out


def _solve_kernel(
    kernel: _Kernel, rhs: np.ndarray, refine_steps: int, condition_cap: float
) -> np.ndarray:
    omega = kernel.omega
    n = omega.size
    if n == 0:
        return np.empty(0)
    reach = kernel.window.main_lobe
    idx = np.arange(n)
    upper = np.searchsorted(omega, omega + reach, side="left") - 1 - idx
    lower = idx - np.searchsorted(omega, omega - reach, side="right")
    bw = int(max(upper.max(), lower.max(), 0))
    ab = np.zeros((2 * bw + 1, n))
    ab_t = np.zeros((2 * bw + 1, n))
    for off in range(-bw, bw + 1):
        cols = np.arange(max(0, off), min(n, n + off))
        rows = cols - off
        ab[bw - off, cols] = kernel.entries(rows, cols)
        ab_t[bw - off, cols] = kernel.entries(cols, rows)

    def solve(v):
        return linalg.solve_banded((bw, bw), ab, v)

    def solve_t(v):
        return linalg.solve_banded((bw, bw), ab_t, v)

    try:
        x = solve(rhs)
    except (linalg.LinAlgError, ValueError) as e:
        raise IsotorusNumericalError(
            f"Banded kernel is singular ({e}); use a longer window or a smaller L."
        ) from e
    inverse = LinearOperator((n, n), matvec=solve, rmatvec=solve_t, dtype=float)
    condition = float(np.abs(ab).sum(axis=0).max()) * float(onenormest(inverse))
    logger.debug(f"Banded kernel: size {n}, half-bandwidth {bw}, condition ~{condition:.3e}")
    if condition > condition_cap:
        raise IsotorusNumericalError(
            f"Kernel condition estimate {condition:.3e} exceeds {condition_cap:.1e}; use a longer window or a smaller L."
        )
    for step in range(refine_steps):
        residual = rhs - kernel.matvec(x)
        x = x + solve(residual)
        logger.debug(f"Refinement {step + 1}: residual {np.max(np.abs(residual)):.3e}")
    return x


@dataclass(frozen=True, eq=False)
class HarmonicSpectrum:
    """
    Complex coefficient C_k per lattice entry, for the retained orientation of k,
    with phases referred to sequence index 0.

    `multiplicity[e]` is the number of lattice entries merged into entry e's unknown
    (0 for entries represented by another one). `real_type[e]` marks entries
    treated as lying exactly at 0 or pi; without it, `lattice.real_mask()` applies.
    """

    lattice: FrequencyLattice
    coefficients: np.ndarray
    multiplicity: np.ndarray
    lag: int = 0
    window_length: int = 0
    unreliable: Optional[np.ndarray] = None
    lags: Tuple[int, ...] = ()
    real_type: Optional[np.ndarray] = None

    def __post_init__(self):
        mask = self.lattice.real_mask() if self.real_type is None else np.asarray(self.real_type, dtype=bool)
        if mask.shape != self.lattice.omega.shape:
            raise IsotorusValidationError(f"Real-type mask has shape {mask.shape}, the lattice has {len(self.lattice)} entries.")
        object.__setattr__(self, "real_type", mask)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.abs(self.coefficients)

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.coefficients)

    @property
    def theta(self) -> np.ndarray:
        """Frequency each entry is synthesized at: signed_omega, real-type entries exactly at 0 or pi."""
        return np.where(self.real_type, _snap_real(self.lattice.omega), self.lattice.signed_omega)

    @property
    def cosine_amplitudes(self) -> np.ndarray:
        """Amplitude of the real cosine each entry contributes: 2|C_k|, or |C_k| at 0 and pi."""
        return np.where(self.real_type, 1.0, 2.0) * self.amplitudes

    def entry(self, k: Sequence[int]) -> Tuple[float, float]:
        e = self.lattice.index_of(k)
        return float(self.amplitudes[e]), float(self.phases[e])


def _snap_real(omega: np.ndarray) -> np.ndarray:
    return np.where(omega < 0.5 * np.pi, 0.0, np.pi)


def real_tolerance(window_length: int) -> float:
    """Entries closer than this share one unknown, and within it of 0 or pi they are real-type."""
    return MERGE_FRACTION * 2.0 * np.pi / window_length


def _merge_groups(omega: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Group id per entry (chains of neighbours closer than tol) and the first entry of each group."""
    new_group = np.concatenate([[True], np.diff(omega) >= tol])
    group = np.cumsum(new_group) - 1
    return group, np.flatnonzero(new_group)


def extract_spectrum(
    b: Sequence[float],
    lattice: FrequencyLattice,
    window: Optional[Window] = None,
    lag: int = 0,
    refine_steps: int = DEFAULT_REFINE_STEPS,
    condition_cap: float = DEFAULT_CONDITION_CAP,
    sidelobe_db: float = DEFAULT_SIDELOBE_DB,
) -> HarmonicSpectrum:
    """
    Solves the banded windowed-transform system for the coefficients of every lattice entry.

    Args:
        b: The sequence, b[j] = b_j.
        lattice: Frequencies to fit.
        window: Defaults to `default_window` over the terms after `lag`.
        lag: First index under the window.
        refine_steps: Full-kernel refinement sweeps after the banded solve.
        condition_cap: Largest acceptable condition estimate of the banded kernel.
        sidelobe_db: Attenuation of the default window.

    Returns:
        HarmonicSpectrum.

    Raises:
        IsotorusValidationError: If the window runs past the sequence.
        IsotorusNumericalError: If the kernel is too ill-conditioned.
    """
    b = np.asarray(b, dtype=float)
    if window is None:
        window = default_window(b.size - lag, lattice, sidelobe_db=sidelobe_db)
    _check_range(b, window, lag)
    spacing = lattice.min_spacing
    if not math.isinf(spacing) and window.length * spacing < MIN_SPACING_FACTOR:
        logger.warning(
            f"Window length {window.length} is below {MIN_SPACING_FACTOR:g} / min spacing ({MIN_SPACING_FACTOR / spacing:.0f})"
        )

    omega = lattice.omega
    tol = real_tolerance(window.length)
    group, reps = _merge_groups(omega, tol)
    rep_real = np.zeros(reps.size, dtype=bool)
    np.logical_or.at(rep_real, group, lattice.real_mask(tol))
    if reps.size < omega.size:
        logger.info(f"Merged {omega.size - reps.size} lattice entries closer than {tol:.3e}")
    rep_omega = np.where(rep_real, _snap_real(omega[reps]), omega[reps])

    G = _centered_dft(b, window, lag, rep_omega)
    re = _solve_kernel(_Kernel(window, rep_omega, rep_real, +1.0), G.real, refine_steps, condition_cap)
    cplx = ~rep_real
    im = np.zeros(reps.size)
    im[cplx] = _solve_kernel(
        _Kernel(window, rep_omega[cplx], np.zeros(int(cplx.sum()), dtype=bool), -1.0),
        G.imag[cplx],
        refine_steps,
        condition_cap,
    )
    center = lag + window.half
    D = (re + 1j * im) * np.exp(-1j * rep_omega * center)
    D[rep_real] = D[rep_real].real

    D_all = D[group]
    coefficients = np.where(lattice.conjugate, np.conj(D_all), D_all)
    multiplicity = np.zeros(omega.size, dtype=int)
    multiplicity[reps] = np.bincount(group)
    return HarmonicSpectrum(
        lattice=lattice,
        coefficients=coefficients,
        multiplicity=multiplicity,
        lag=lag,
        window_length=window.length,
        real_type=rep_real[group],
    )


def default_lags(length: int, window: Window, count: int = DEFAULT_LAG_COUNT) -> List[int]:
    """`count` geometric lags from length/16 to min(length/2, length - window length)."""
    lo = max(1, length // 16)
    hi = min(length // 2, length - window.length)
    if hi <= lo:
        raise IsotorusValidationError(
            f"Sequence of length {length} leaves no lag range for a window of length {window.length}."
        )
    lags = sorted(set(int(round(v)) for v in np.geomspace(lo, hi, count)))
    return lags


def lag_extrapolate(
    b: Sequence[float],
    lattice: FrequencyLattice,
    window: Optional[Window] = None,
    lags: Optional[Sequence[int]] = None,
    fit_residual_tol: float = DEFAULT_FIT_RESIDUAL_TOL,
    lag_count: int = DEFAULT_LAG_COUNT,
    **extract_kwargs,
) -> HarmonicSpectrum:
    """
    Extracts the spectrum at increasing lags and fits value(l) = v_inf + c / l per
    entry, for amplitudes and unwrapped phases (real coefficients at 0 and pi are
    fitted signed).

    Entries whose fit residual exceeds `fit_residual_tol` (relative for amplitudes)
    are flagged in `unreliable`.
    """
    b = np.asarray(b, dtype=float)
    if window is None:
        window = default_window(b.size // 2, lattice, sidelobe_db=extract_kwargs.get("sidelobe_db", DEFAULT_SIDELOBE_DB))
    lags = default_lags(b.size, window, lag_count) if lags is None else sorted(int(l) for l in lags)
    if len(lags) < 3 or len(set(lags)) != len(lags) or lags[0] < 1:
        raise IsotorusValidationError("Lag extrapolation needs at least 3 distinct positive lags.")

    spectra = [extract_spectrum(b, lattice, window=window, lag=l, **extract_kwargs) for l in lags]
    x = 1.0 / np.asarray(lags, dtype=float)
    coeffs = np.stack([s.coefficients for s in spectra])
    real_type = spectra[-1].real_type

    amps = np.where(real_type[None, :], coeffs.real, np.abs(coeffs))
    slope, amp_inf = np.polyfit(x, amps, 1)
    amp_resid = np.sqrt(np.mean((amps - (slope[None, :] * x[:, None] + amp_inf[None, :])) ** 2, axis=0))

    phases = np.unwrap(np.angle(coeffs), axis=0)
    p_slope, phase_inf = np.polyfit(x, phases, 1)
    phase_resid = np.sqrt(np.mean((phases - (p_slope[None, :] * x[:, None] + phase_inf[None, :])) ** 2, axis=0))
    phase_resid = np.where(real_type, 0.0, phase_resid)

    scale = np.maximum(np.abs(amp_inf), np.finfo(float).tiny)
    unreliable = (amp_resid > fit_residual_tol * scale) | (phase_resid > fit_residual_tol)
    negative = ~real_type & (amp_inf < 0)
    unreliable |= negative
    amp_inf = np.where(negative, 0.0, amp_inf)

    coefficients = np.where(real_type, amp_inf + 0j, amp_inf * np.exp(1j * phase_inf))
    if unreliable.any():
        logger.info(f"{int(unreliable.sum())} of {unreliable.size} entries have unreliable lag fits")
    return HarmonicSpectrum(
        lattice=lattice,
        coefficients=coefficients,
        multiplicity=spectra[-1].multiplicity,
        lag=lags[-1],
        window_length=window.length,
        unreliable=unreliable,
        lags=tuple(lags),
        real_type=real_type,
    )


def synthesize(spectrum: HarmonicSpectrum, j_range) -> np.ndarray:
    """
    b_j = sum over the lattice of 2|C_k| cos(theta_k j + psi_k), real-type entries once
    and exactly at 0 or pi.

    `j_range` is a (start, stop) pair or an array of indices.
    """
    if isinstance(j_range, tuple) and len(j_range) == 2:
        j = np.arange(j_range[0], j_range[1])
    else:
        j = np.asarray(j_range)
    j = j.astype(float)
    keep = spectrum.multiplicity > 0
    theta = spectrum.theta[keep]
    C = spectrum.coefficients[keep]
    factor = np.where(spectrum.real_type[keep], 1.0, 2.0)
    out = np.empty(j.size)
    step = max(1, _BLOCK // max(1, theta.size))
    for start in range(0, j.size, step):
        jj = j[start : start + step]
        phase = np.exp(1j * np.outer(jj, theta))
        out[start : start + step] = (phase @ (factor * C)).real
    return out.reshape(j.shape)


def principal_amplitudes(spectrum: HarmonicSpectrum) -> np.ndarray:
    """|C| at the unit vectors e_1..e_d."""
    d = spectrum.lattice.d
    eye = np.eye(d, dtype=int)
    return np.array([spectrum.amplitudes[spectrum.lattice.index_of(eye[i])] for i in range(d)])


def psi_samples(spectrum: HarmonicSpectrum, grid: int = 64) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Psi(a) = sum 2|C_k| cos(2 pi k . a + psi_k) on a grid x grid sampling of the 2-torus.

    Returns:
        (a1, a2, values), each of shape (grid, grid).
    """
    lattice = spectrum.lattice
    if lattice.d != 2:
        raise IsotorusValidationError(f"Torus samples are tabulated for two fundamentals, got {lattice.d}.")
    axis = np.arange(grid) / grid
    a1, a2 = np.meshgrid(axis, axis, indexing="ij")
    keep = spectrum.multiplicity > 0
    k = lattice.k[keep]
    amp = spectrum.cosine_amplitudes[keep]
    psi = spectrum.phases[keep]
    arg = 2.0 * np.pi * (a1[..., None] * k[:, 0] + a2[..., None] * k[:, 1]) + psi
    return a1, a2, np.cos(arg) @ amp


def write_spectrum_csv(spectrum: HarmonicSpectrum, path: str) -> str:
    lattice = spectrum.lattice
    header = [f"k_{i + 1}" for i in range(lattice.d)] + ["omega_k", "amplitude", "phase"]
    rows = (
        [int(v) for v in lattice.k[e]] + [lattice.omega[e], spectrum.amplitudes[e], spectrum.phases[e]]
        for e in range(len(lattice))
    )
    return write_csv(path, header, rows)
