"""
Equilibrium measure of a finite union of intervals.

With Y(z) = prod (z - alpha_i)(z - beta_i) and Z(z) = prod (z - zeta_l), the
equilibrium density on the bands is |Z(s)| / (pi sqrt|Y(s)|), where the N-1
roots zeta_l are fixed by requiring the integral of Z / sqrt|Y| over every gap
to vanish. All products are evaluated as sums of logarithms.

Integrals over a band or gap use s = c + r cos(theta): the two local endpoint
factors cancel against the Jacobian and the remaining smooth factor is
integrated with Gauss-Chebyshev nodes of the first kind.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial import chebyshev as C
from numpy.polynomial import polynomial as Poly
from scipy import linalg
from scipy.fft import dct
from scipy.special import roots_chebyt

from isotorus import IsotorusNumericalError, IsotorusValidationError
from isotorus.ifs import DiscreteMeasure, GapList, IntervalUnion
from isotorus.utils import write_csv

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITERATIONS = 200
DEFAULT_QUAD_NODES = 256
# relative Newton step below which the iteration is considered converged
STEP_TOL = 1e-14
# nodes per band for the energy quadrature; V is constant on the set
ENERGY_NODES = 32
# negative Green function values beyond this are reported before clamping
GREEN_CLAMP_TOL = 1e-8
# elements per temporary (points x roots) block
_BLOCK = 2**22


def chebyshev_nodes(P: int) -> np.ndarray:
    """First-kind nodes cos((k + 1/2) pi / P), k = 0..P-1, in the order scipy.fft.dct expects."""
    nodes, _ = roots_chebyt(P)
    return nodes[::-1].copy()


def _log_abs_sum(s: np.ndarray, roots: np.ndarray) -> np.ndarray:
    """sum_r log|s - r| for every entry of s, in blocks."""
    s = np.asarray(s)
    flat = s.reshape(-1)
    out = np.empty(flat.shape, dtype=float)
    step = max(1, _BLOCK // max(1, roots.size))
    with np.errstate(divide="ignore"):
        for start in range(0, flat.size, step):
            chunk = flat[start : start + step]
            out[start : start + step] = np.log(np.abs(chunk[:, None] - roots[None, :])).sum(axis=1)
    return out.reshape(s.shape)


def _sign_prod(s: np.ndarray, sorted_roots: np.ndarray) -> np.ndarray:
    """Sign of prod (s - r) for real s and ascending real roots: (-1)^(#roots above s)."""
    above = sorted_roots.size - np.searchsorted(sorted_roots, s, side="right")
    return 1.0 - 2.0 * (above % 2)


@dataclass(frozen=True, eq=False)
class PolyPair:
    """Roots of Y (the 2N band endpoints) and of Z (one point per gap)."""

    y_roots: np.ndarray
    z_roots: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y_roots, dtype=float)
        z = np.asarray(self.z_roots, dtype=float)
        if y.size % 2 or y.size == 0 or np.any(np.diff(y) <= 0):
            raise IsotorusValidationError("Y needs an even number of strictly ascending roots.")
        if z.size != y.size // 2 - 1:
            raise IsotorusValidationError(f"Z needs {y.size // 2 - 1} roots, got {z.size}.")
        left, right = y[1:-1:2], y[2::2]
        outside = np.flatnonzero(~((left < z) & (z < right)))
        if outside.size:
            i = int(outside[0])
            raise IsotorusValidationError(
                f"Root {z[i]!r} of Z is not inside gap {i + 1} ({left[i]!r}, {right[i]!r})."
            )
        y.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "y_roots", y)
        object.__setattr__(self, "z_roots", z)

    @classmethod
    def from_bands(cls, bands: IntervalUnion, z_roots) -> "PolyPair":
        return cls(y_roots=bands.endpoints, z_roots=np.asarray(z_roots, dtype=float))

    @property
    def N(self) -> int:
        return self.y_roots.size // 2

    def log_abs_Y(self, s) -> np.ndarray:
        return _log_abs_sum(np.asarray(s, dtype=float), self.y_roots)

    def log_abs_Y_off_band(self, s, band: int) -> np.ndarray:
        """log|Y(s)| without the two endpoint factors of `band` (0-based); finite on the closed band."""
        rest = np.delete(self.y_roots, [2 * band, 2 * band + 1])
        return _log_abs_sum(np.asarray(s, dtype=float), rest)

    def log_abs_Z(self, s) -> np.ndarray:
        return _log_abs_sum(np.asarray(s, dtype=float), self.z_roots)

    def eval_Y(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return _sign_prod(s, self.y_roots) * np.exp(self.log_abs_Y(s))

    def eval_Z(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return _sign_prod(s, self.z_roots) * np.exp(self.log_abs_Z(s))

    def dZ_at_roots(self) -> np.ndarray:
        """Z'(zeta_i) = prod over m != i of (zeta_i - zeta_m)."""
        z = self.z_roots
        if z.size == 0:
            return np.empty(0)
        diff = z[:, None] - z[None, :]
        np.fill_diagonal(diff, 1.0)
        signs = np.prod(np.sign(diff), axis=1)
        return signs * np.exp(np.log(np.abs(diff)).sum(axis=1))

    def sqrt_Y(self, z) -> np.ndarray:
        """Branch of sqrt(Y) with cuts on the bands, positive for large real z."""
        z = np.asarray(z, dtype=complex)
        out = np.ones(z.shape, dtype=complex)
        for a, b in zip(self.y_roots[0::2], self.y_roots[1::2]):
            out *= np.sqrt(z - a) * np.sqrt(z - b)
        return out

    def asymptotic_coefficients(self, center: float = 0.0) -> Tuple[float, float]:
        """
        (y1, y2) with sqrt(Y(z)) = w^N + y1 w^(N-1) + y2 w^(N-2) + ..., w = z - center.

        From the power sums p_k of the shifted roots: y1 = -p1/2, y2 = p1^2/8 - p2/4.
        """
        e = self.y_roots - center
        p1 = float(np.sum(e))
        p2 = float(np.sum(e * e))
        return -0.5 * p1, p1 * p1 / 8.0 - p2 / 4.0


def _rest_log(s: np.ndarray, y_roots: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """log|Y(s)| without the two endpoint factors of the interval each row of s lives on."""
    return _log_abs_sum(s, y_roots) - np.log(np.abs(s - left[:, None])) - np.log(np.abs(right[:, None] - s))


def _leave_one_out(values: np.ndarray, ufunc, identity: float) -> np.ndarray:
    """ufunc-reduction over the last axis excluding each position in turn."""
    pad = np.full(values.shape[:-1] + (1,), identity)
    prefix = np.concatenate([pad, ufunc.accumulate(values[..., :-1], axis=-1)], axis=-1)
    suffix = np.concatenate([ufunc.accumulate(values[..., :0:-1], axis=-1)[..., ::-1], pad], axis=-1)
    return ufunc(prefix, suffix)


def _gap_system(
    pp_roots: np.ndarray, zeta: np.ndarray, nodes: np.ndarray, jacobian: bool = True
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    F_i = int over gap i of Z / sqrt|Y| and, optionally, dF_i/dzeta_l.

    Returns:
        (F, J) with J None when `jacobian` is False.
    """
    left = pp_roots[1:-1:2]
    right = pp_roots[2::2]
    G = left.size
    P = nodes.size
    c = 0.5 * (left + right)
    r = 0.5 * (right - left)
    F = np.empty(G)
    J = np.empty((G, G)) if jacobian else None
    rows = max(1, _BLOCK // max(1, P * max(pp_roots.size, G)))
    with np.errstate(divide="ignore", over="ignore"):
        for start in range(0, G, rows):
            idx = np.arange(start, min(G, start + rows))
            s = c[idx, None] + r[idx, None] * nodes[None, :]
            half_log_rest = 0.5 * _rest_log(s, pp_roots, left[idx], right[idx])
            d = s[..., None] - zeta[None, None, :]
            logs = np.log(np.abs(d))
            signs = np.sign(d)
            z_sign = np.prod(signs, axis=-1)
            F[idx] = (np.pi / P) * np.sum(z_sign * np.exp(logs.sum(axis=-1) - half_log_rest), axis=-1)
            if jacobian:
                loo_log = _leave_one_out(logs, np.add, 0.0)
                loo_sign = _leave_one_out(signs, np.multiply, 1.0)
                J[idx, :] = -(np.pi / P) * np.sum(
                    loo_sign * np.exp(loo_log - half_log_rest[..., None]), axis=1
                )
    return F, J


def _band_values(pp: PolyPair, nodes: np.ndarray) -> np.ndarray:
    """f_i(t_k) = |Z(s)| / sqrt|Y_rest(s)| on band i at s = c_i + r_i t_k, shape (N, P)."""
    alpha = pp.y_roots[0::2]
    beta = pp.y_roots[1::2]
    c = 0.5 * (alpha + beta)
    r = 0.5 * (beta - alpha)
    s = c[:, None] + r[:, None] * nodes[None, :]
    log_f = _log_abs_sum(s, pp.z_roots) - 0.5 * _rest_log(s, pp.y_roots, alpha, beta)
    return np.exp(log_f)


def _chebyshev_coefficients(values: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients from samples at first-kind nodes, along the last axis."""
    P = values.shape[-1]
    coeffs = dct(values, type=2, axis=-1) / P
    coeffs[..., 0] *= 0.5
    return coeffs


@dataclass(frozen=True, eq=False)
class EquilibriumSolution:
    """
    Solved equilibrium problem.

    `cheb_coeffs[i]` expands the smooth density factor of band i so that
    d nu = (1/pi) sum_k c_k T_k(t) dt / sqrt(1 - t^2) with s = c_i + r_i t.
    """

    bands: IntervalUnion
    zeta: np.ndarray
    band_masses: np.ndarray
    frequencies: np.ndarray
    capacity: float
    energy: float
    cheb_coeffs: np.ndarray
    residual: float
    iterations: int
    quad_nodes: int

    @property
    def N(self) -> int:
        return self.bands.N

    @property
    def poly(self) -> PolyPair:
        return PolyPair.from_bands(self.bands, self.zeta)


def _newton(pp_roots: np.ndarray, nodes: np.ndarray, tol: float, max_iterations: int) -> Tuple[np.ndarray, float, int]:
    left = pp_roots[1:-1:2]
    right = pp_roots[2::2]
    widths = right - left
    zeta = 0.5 * (left + right)
    F, J = _gap_system(pp_roots, zeta, nodes)
    res = float(np.max(np.abs(F)))
    for it in range(1, max_iterations + 1):
        if res < tol:
            return zeta, res, it - 1
        try:
            step = linalg.solve(J, -F)
        except (linalg.LinAlgError, ValueError) as e:
            raise IsotorusNumericalError(f"Singular Jacobian at iteration {it}: {e}", residual=res) from e
        rel = float(np.max(np.abs(step) / widths))
        if rel < STEP_TOL:
            logger.debug(f"Newton step negligible at iteration {it} (residual {res:.3e})")
            return zeta, res, it - 1
        # longest step keeping every root strictly inside its gap
        room = np.where(step > 0, right - zeta, zeta - left)
        with np.errstate(divide="ignore"):
            t_max = float(np.min(np.where(step != 0, 0.95 * room / np.abs(step), np.inf)))
        t = min(1.0, t_max)
        accepted = False
        for _ in range(40):
            trial = zeta + t * step
            F_trial, _ = _gap_system(pp_roots, trial, nodes, jacobian=False)
            res_trial = float(np.max(np.abs(F_trial)))
            if res_trial < (1.0 - 1e-4 * t) * res or res_trial < tol:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            logger.debug(f"Backtracking failed at iteration {it}; taking the shortest step")
        zeta = trial
        F, J = _gap_system(pp_roots, zeta, nodes)
        res = float(np.max(np.abs(F)))
        logger.debug(f"Newton iteration {it}: residual {res:.3e}, step factor {t:.3e}")
    if res < tol:
        return zeta, res, max_iterations
    raise IsotorusNumericalError(
        f"Equilibrium solve did not converge in {max_iterations} iterations.", residual=res
    )


def solve_zeta(
    bands: IntervalUnion,
    tol: float = DEFAULT_TOL,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    quad_nodes: int = DEFAULT_QUAD_NODES,
) -> EquilibriumSolution:
    """
    Solves for the roots zeta (one per gap) and fills masses, frequencies and capacity.

    Args:
        bands: The set.
        tol: Bound on every gap residual.
        max_iterations: Newton iteration cap.
        quad_nodes: Gauss-Chebyshev nodes per gap and per band.

    Returns:
        EquilibriumSolution.

    Raises:
        IsotorusValidationError: On bad parameters.
        IsotorusNumericalError: If Newton does not converge; carries the last residual.
    """
    if not tol > 0:
        raise IsotorusValidationError(f"Tolerance must be positive, got {tol!r}.")
    if quad_nodes < 2:
        raise IsotorusValidationError(f"Need at least 2 quadrature nodes, got {quad_nodes}.")
    nodes = chebyshev_nodes(quad_nodes)
    roots = bands.endpoints
    if bands.N > 1:
        zeta, residual, iterations = _newton(roots, nodes, tol, max_iterations)
    else:
        zeta, residual, iterations = np.empty(0), 0.0, 0
    pp = PolyPair(y_roots=roots, z_roots=zeta)
    coeffs = _chebyshev_coefficients(_band_values(pp, nodes))
    masses = coeffs[:, 0].copy()
    if np.any(masses <= 0):
        raise IsotorusNumericalError("Non-positive band mass; the quadrature is under-resolved.", residual=residual)
    frequencies = np.cumsum(masses)[:-1]
    logger.debug(f"Band masses sum to {masses.sum()!r}")
    energy = _energy(bands, coeffs)
    logger.info(f"Equilibrium of {bands.N} bands: {iterations} Newton iterations, residual {residual:.3e}")
    return EquilibriumSolution(
        bands=bands,
        zeta=zeta,
        band_masses=masses,
        frequencies=frequencies,
        capacity=float(np.exp(-energy)),
        energy=energy,
        cheb_coeffs=coeffs,
        residual=residual,
        iterations=iterations,
        quad_nodes=quad_nodes,
    )


def _log_moment_sum(bands: IntervalUnion, coeffs: np.ndarray, z) -> np.ndarray:
    """sum over bands of int log|z - s| d nu_i(s), via closed-form logarithmic moments."""
    z = np.asarray(z, dtype=complex)
    total = np.zeros(z.shape, dtype=float)
    k = np.arange(coeffs.shape[1])
    k[0] = 1
    for c, r, cf in zip(bands.centers, bands.half_widths, coeffs):
        t0 = (z - c) / r
        w = t0 + np.sqrt(t0 - 1.0) * np.sqrt(t0 + 1.0)
        w = np.where(np.abs(w) < 1.0, 1.0 / w, w)
        scaled = cf / k
        scaled[0] = 0.0
        series = Poly.polyval(1.0 / w, scaled).real
        total += cf[0] * (np.log(r) + np.log(np.abs(w)) - np.log(2.0)) - series
    return total


def _energy(bands: IntervalUnion, coeffs: np.ndarray) -> float:
    Q = min(ENERGY_NODES, coeffs.shape[1])
    t = chebyshev_nodes(Q)
    energy = 0.0
    for c, r, cf in zip(bands.centers, bands.half_widths, coeffs):
        f = C.chebval(t, cf)
        V = -_log_moment_sum(bands, coeffs, c + r * t)
        energy += float(np.dot(V, f)) / Q
    return energy


def potential(sol: EquilibriumSolution, z) -> np.ndarray:
    """Logarithmic potential V(nu; z) = -int log|z - s| d nu(s), for real or complex z."""
    return -_log_moment_sum(sol.bands, sol.cheb_coeffs, z)


def green_function(sol: EquilibriumSolution, z, tol: float = GREEN_CLAMP_TOL) -> np.ndarray:
    """g(z) = energy - V(z); zero on the bands, positive off the set. Negative values are clamped to 0."""
    g = sol.energy - potential(sol, z)
    low = float(np.min(g)) if np.size(g) else 0.0
    if low < -tol:
        logger.warning(f"Green function came out at {low:.3e} below zero; clamped, but the equilibrium solve is inaccurate")
    return np.maximum(g, 0.0)


def equilibrium_density(sol: EquilibriumSolution, s) -> np.ndarray:
    """
    (1/pi) |Z(s)| / sqrt|Y(s)| at points of the bands.

    Raises:
        IsotorusValidationError: If some s lies outside every band.
    """
    s_arr = np.asarray(s, dtype=float)
    outside = sol.bands.locate(s_arr) < 0
    if np.any(outside):
        bad = np.atleast_1d(s_arr)[np.atleast_1d(outside)][0]
        raise IsotorusValidationError(f"Point {bad!r} lies outside the bands; the density vanishes there.")
    pp = sol.poly
    with np.errstate(divide="ignore"):
        return np.exp(pp.log_abs_Z(s_arr) - 0.5 * pp.log_abs_Y(s_arr)) / np.pi


def band_mass(sol: EquilibriumSolution, i: int) -> float:
    """Equilibrium mass of band i (1-based)."""
    if not 1 <= i <= sol.N:
        raise IsotorusValidationError(f"Band index {i} out of range 1..{sol.N}.")
    return float(sol.band_masses[i - 1])


def angular_frequencies(sol: EquilibriumSolution) -> np.ndarray:
    return 2.0 * np.pi * sol.frequencies


def discretize_equilibrium(sol: EquilibriumSolution, P: Optional[int] = None) -> DiscreteMeasure:
    """P first-kind Gauss-Chebyshev atoms per band, weights f(t_k)/P."""
    P = sol.quad_nodes if P is None else P
    if P < 1:
        raise IsotorusValidationError(f"Need at least one node per band, got {P}.")
    t = chebyshev_nodes(P)
    bands = sol.bands
    positions = (bands.centers[:, None] + bands.half_widths[:, None] * t[None, :]).ravel()
    if P == sol.quad_nodes:
        values = _band_values(sol.poly, t)
    else:
        values = np.stack([C.chebval(t, cf) for cf in sol.cheb_coeffs])
    order = np.argsort(positions, kind="stable")
    return DiscreteMeasure.normalized(positions[order], (values.ravel() / P)[order])


def write_equilibrium_csv(
    sol: EquilibriumSolution,
    gaps_path: str,
    bands_path: str,
    order: Optional[GapList] = None,
) -> Tuple[str, str]:
    """
    Writes (gap index, zeta, omega) and (band index, mass) tables.

    With `order` (a birth-ordered gap list) gap rows follow that order and
    `position` is the 1-based ascending gap position.
    """
    positions = np.arange(sol.N - 1) if order is None else np.asarray(order.order)
    angular = angular_frequencies(sol)
    gap_rows = (
        (i + 1, int(p) + 1, sol.zeta[p], sol.frequencies[p], angular[p])
        for i, p in enumerate(positions)
    )
    write_csv(gaps_path, ["index", "position", "zeta", "omega", "angular_omega"], gap_rows)
    band_rows = (
        (i + 1, a, b, m)
        for i, (a, b, m) in enumerate(zip(sol.bands.alpha, sol.bands.beta, sol.band_masses))
    )
    write_csv(bands_path, ["index", "alpha", "beta", "mass"], band_rows)
    return gaps_path, bands_path
