"""
Measures on the isospectral torus of a finite gap set.

A torus point puts one xi_i in every gap with a sign sigma_i. The degree-N
polynomial X with X(xi_i) = sigma_i sqrt(Y(xi_i)) and X - sqrt(Y) = O(z^(N-2))
defines the Markov function M = (X - sqrt(Y)) / Z of a measure made of the
density sqrt|Y| / (pi |Z|) on the bands plus an atom at every xi_i whose sign
disagrees with the branch of sqrt(Y) on its gap.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.interpolate import BarycentricInterpolator
from scipy.special import roots_chebyu

from isotorus import AtomBudgetError, IsotorusNumericalError, IsotorusValidationError, OrthogonalityLossError
from isotorus.equilibrium import PolyPair, chebyshev_nodes
from isotorus.ifs import (
    DEFAULT_ATOM_BUDGET,
    AffineIFS,
    DiscreteMeasure,
    GapList,
    IntervalUnion,
    iterate_bands,
    ordered_gaps,
)
from isotorus.jacobi import (
    DEFAULT_REORTH_MEMORY_MB,
    ErrorProfile,
    JacobiMatrix,
    add_point_mass,
    compare_sequences,
    jacobi_from_discrete,
)

logger = logging.getLogger(__name__)

POINT_RULES = ("midpoint-plus", "third-mixed", "random")
DEFAULT_POINT_RULE = "midpoint-plus"
DEFAULT_SEED = 20150101
ATOM_CLAMP = 1e-13
MASS_CHECK_NODES = 256
MASS_CHECK_TOL = 1e-8
DEFAULT_DISCRETIZE_START = 64
DEFAULT_DISCRETIZE_CAP = 2**18
DEFAULT_DISCRETIZE_TOL = 1e-12


def branch_sign(bands: IntervalUnion, gap_index: int) -> int:
    """Sign of the real branch of sqrt(Y) on gap i (1-based, ascending): (-1)^(N-i)."""
    N = bands.N
    if not 1 <= gap_index <= N - 1:
        raise IsotorusValidationError(f"Gap index {gap_index} out of range 1..{N - 1}.")
    return -1 if (N - gap_index) % 2 else 1


def branch_signs(N: int) -> np.ndarray:
    i = np.arange(1, N)
    return np.where((N - i) % 2, -1, 1)


@dataclass(frozen=True, eq=False)
class TorusPoint:
    """
    One xi per gap with a sign per gap.

    Entries follow the order of the gap list they were made for; `order[k]` is the
    ascending position of entry k (None when the entries are already ascending).
    """

    xi: np.ndarray
    sigma: np.ndarray
    order: Optional[np.ndarray] = None

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float)
        sigma = np.array(self.sigma, dtype=int)
        if xi.shape != sigma.shape or xi.ndim != 1:
            raise IsotorusValidationError("xi and sigma need one entry per gap.")
        if np.any(np.abs(sigma) != 1):
            raise IsotorusValidationError("Every sigma must be +1 or -1.")
        order = None
        if self.order is not None:
            order = np.array(self.order, dtype=int)
            if not np.array_equal(np.sort(order), np.arange(xi.size)):
                raise IsotorusValidationError("Gap order must be a permutation of the gap positions.")
            order.setflags(write=False)
        xi.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "order", order)

    def ascending(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.order is None:
            return self.xi, self.sigma
        xi = np.empty_like(self.xi)
        sigma = np.empty_like(self.sigma)
        xi[self.order] = self.xi
        sigma[self.order] = self.sigma
        return xi, sigma

    def validated(self, bands: IntervalUnion) -> Tuple[np.ndarray, np.ndarray]:
        """Ascending (xi, sigma), checked against the gaps of `bands`."""
        xi, sigma = self.ascending()
        if xi.size != bands.N - 1:
            raise IsotorusValidationError(f"{bands.N} bands need {bands.N - 1} torus coordinates, got {xi.size}.")
        left, right = bands.beta[:-1], bands.alpha[1:]
        outside = np.flatnonzero(~((left < xi) & (xi < right)))
        if outside.size:
            i = int(outside[0])
            raise IsotorusValidationError(
                f"xi = {xi[i]!r} is not strictly inside gap {i + 1} ({left[i]!r}, {right[i]!r})."
            )
        return xi, sigma

    @classmethod
    def from_rule(
        cls,
        gaps: GapList,
        rule: str = DEFAULT_POINT_RULE,
        seed: Optional[int] = DEFAULT_SEED,
    ) -> "TorusPoint":
        """
        Assigns (xi, sigma) gap by gap in the order of `gaps`.

        Rules:
            midpoint-plus: gap midpoint, sigma = +1.
            third-mixed: one third into the gap, sigma alternating +1, -1.
            random: uniform interior point and random sign; seed None draws OS entropy.
        """
        G = len(gaps)
        if rule == "midpoint-plus":
            xi = gaps.midpoints
            sigma = np.ones(G, dtype=int)
        elif rule == "third-mixed":
            xi = gaps.left + gaps.widths / 3.0
            sigma = np.where(np.arange(G) % 2, -1, 1)
        elif rule == "random":
            if seed is None:
                logger.warning("Drawing torus points from OS entropy; output is not reproducible")
            u = np.random.default_rng(seed).random((G, 2))
            xi = gaps.left + gaps.widths * (1e-3 + (1.0 - 2e-3) * u[:, 0])
            sigma = np.where(u[:, 1] < 0.5, -1, 1)
        else:
            raise IsotorusValidationError(f"Unknown point rule '{rule}', expected one of {POINT_RULES}.")
        return cls(xi=xi, sigma=sigma, order=gaps.order)


def load_torus_point(path: str, gaps: GapList, seed: Optional[int] = DEFAULT_SEED) -> TorusPoint:
    """Reads `{"xi": [...], "sigma": [...]}` (entries in the order of `gaps`) or `{"rule": name}`."""
    try:
        with open(path, "r") as f:
            config = json.load(f)
    except FileNotFoundError as e:
        raise IsotorusValidationError(f"Torus point file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise IsotorusValidationError(f"Error parsing torus point file {path}: {e}") from e
    if not isinstance(config, dict):
        raise IsotorusValidationError("Torus point file must hold a JSON object.")
    if "rule" in config:
        return TorusPoint.from_rule(gaps, config["rule"], seed=config.get("seed", seed))
    if "xi" not in config or "sigma" not in config:
        raise IsotorusValidationError("Torus point file needs 'xi' and 'sigma' lists or a 'rule'.")
    if len(config["xi"]) != len(gaps):
        raise IsotorusValidationError(f"Expected {len(gaps)} xi values, got {len(config['xi'])}.")
    return TorusPoint(xi=config["xi"], sigma=config["sigma"], order=gaps.order)


@dataclass(frozen=True, eq=False)
class XPolynomial:
    """
    X(z) = (z + q) Z(z) + L(z) with Z = prod (z - xi_i) and L the Lagrange
    interpolant of degree N-2 through (xi_i, sigma_i sqrt|Y(xi_i)|).
    """

    poly: PolyPair
    q: float
    node_values: np.ndarray

    def _lagrange(self, z: np.ndarray) -> np.ndarray:
        xi = self.poly.z_roots
        if xi.size == 0:
            return np.zeros(z.shape)
        if xi.size == 1:
            return np.full(z.shape, self.node_values[0])
        return BarycentricInterpolator(xi, self.node_values)(z)

    def __call__(self, z) -> np.ndarray:
        """Values at real points."""
        z = np.asarray(z, dtype=float)
        return (z + self.q) * self.poly.eval_Z(z) + self._lagrange(z)

    def chebyshev_values(self, P: int) -> Tuple[np.ndarray, np.ndarray]:
        """(points, values) at P first-kind Chebyshev points of the hull."""
        lo, hi = self.poly.y_roots[0], self.poly.y_roots[-1]
        points = 0.5 * (lo + hi) + 0.5 * (hi - lo) * chebyshev_nodes(P)
        return points, self(points)


def build_X(bands: IntervalUnion, point: TorusPoint) -> XPolynomial:
    """
    Raises:
        IsotorusValidationError: If xi leaves its gap or two xi coincide.
    """
    xi, sigma = point.validated(bands)
    if xi.size > 1 and np.min(np.diff(xi)) <= 0:
        raise IsotorusValidationError("Torus coordinates collide; the interpolation system is singular.")
    poly = PolyPair.from_bands(bands, xi)
    y1, _ = poly.asymptotic_coefficients()
    q = y1 + float(np.sum(xi))
    values = sigma * np.exp(0.5 * poly.log_abs_Y(xi))
    return XPolynomial(poly=poly, q=q, node_values=values)


def asymptotic_mass(bands: IntervalUnion, point: TorusPoint) -> float:
    """
    lim z M(z) for the unnormalized Markov function:
    -(y2 + y1 h1 + h2) + sum sigma_i sqrt|Y(xi_i)| / Z'(xi_i), in hull-centred coordinates.
    """
    xi, sigma = point.validated(bands)
    lo, hi = bands.hull
    center = 0.5 * (lo + hi)
    poly = PolyPair.from_bands(bands, xi)
    y1, y2 = poly.asymptotic_coefficients(center)
    xc = xi - center
    h1 = float(np.sum(xc))
    h2 = 0.5 * (h1 * h1 + float(np.sum(xc * xc)))
    residues = sigma * np.exp(0.5 * poly.log_abs_Y(xi)) / poly.dZ_at_roots() if xi.size else np.empty(0)
    return -(y2 + y1 * h1 + h2) + float(np.sum(residues))


@dataclass(frozen=True, eq=False)
class TorusMeasure:
    """
    Normalized torus measure: density ac_weight * sqrt|Y| / (pi |Z|) on the bands
    plus atoms at the xi whose sign disagrees with the branch.
    """

    bands: IntervalUnion
    point: TorusPoint
    X: XPolynomial
    ac_weight: float
    atom_positions: np.ndarray
    atom_weights: np.ndarray
    raw_total_mass: float
    total_mass: float = 1.0
    raw_atoms: np.ndarray = field(default=None)

    @property
    def poly(self) -> PolyPair:
        return self.X.poly

    def density(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        outside = self.bands.locate(s) < 0
        if np.any(outside):
            raise IsotorusValidationError("Density requested outside the bands.")
        with np.errstate(divide="ignore"):
            return self.ac_weight * np.exp(0.5 * self.poly.log_abs_Y(s) - self.poly.log_abs_Z(s)) / np.pi


def _ac_band_weights(poly: PolyPair, P: int) -> Tuple[np.ndarray, np.ndarray]:
    """Second-kind Gauss-Chebyshev nodes per band and unnormalized weights of the density."""
    t, w = roots_chebyu(P)
    alpha = poly.y_roots[0::2]
    beta = poly.y_roots[1::2]
    c = 0.5 * (alpha + beta)
    r = 0.5 * (beta - alpha)
    s = c[:, None] + r[:, None] * t[None, :]
    log_rest = np.stack([poly.log_abs_Y_off_band(row, i) for i, row in enumerate(s)])
    smooth = np.exp(0.5 * log_rest - poly.log_abs_Z(s))
    weights = w[None, :] * (r[:, None] ** 2 / np.pi) * smooth
    return s, weights


def torus_measure(bands: IntervalUnion, point: TorusPoint) -> TorusMeasure:
    """
    Builds the normalized torus measure of `point`.

    Raises:
        IsotorusNumericalError: If an atom comes out negative or the quadrature mass
            disagrees with the asymptotic mass.
    """
    X = build_X(bands, point)
    poly = X.poly
    xi, sigma = point.validated(bands)
    branch = branch_signs(bands.N)
    if xi.size:
        sqrt_abs = np.exp(0.5 * poly.log_abs_Y(xi))
        dZ = poly.dZ_at_roots()
        atoms = (X.node_values - branch * sqrt_abs) / dZ
        atoms[np.abs(atoms) < ATOM_CLAMP * sqrt_abs / np.abs(dZ)] = 0.0
    else:
        atoms = np.empty(0)
    negative = np.flatnonzero(atoms < 0)
    if negative.size:
        i = int(negative[0])
        raise IsotorusNumericalError(f"Atom at gap {i + 1} is negative ({atoms[i]:.3e}); branch signs are inconsistent.")
    T = asymptotic_mass(bands, point)
    if not T > 0:
        raise IsotorusNumericalError(f"Torus measure has non-positive total mass {T!r}.")
    for nodes in (MASS_CHECK_NODES, 4 * MASS_CHECK_NODES, 16 * MASS_CHECK_NODES):
        _, ac = _ac_band_weights(poly, nodes)
        quadrature_total = float(ac.sum() + atoms.sum())
        mismatch = abs(quadrature_total - T)
        if mismatch <= MASS_CHECK_TOL * T:
            break
    else:
        raise IsotorusNumericalError(
            f"Torus mass by quadrature {quadrature_total!r} differs from its asymptotic value {T!r}; "
            "points very close to a band edge need more quadrature nodes.",
            residual=mismatch / T,
        )
    keep = atoms > 0
    logger.debug(f"Torus measure on {bands.N} bands: {int(keep.sum())} atoms, raw mass {T:.6e}")
    return TorusMeasure(
        bands=bands,
        point=point,
        X=X,
        ac_weight=1.0 / T,
        atom_positions=xi[keep],
        atom_weights=atoms[keep] / T,
        raw_total_mass=T,
        raw_atoms=atoms,
    )


def markov_function(measure: TorusMeasure, z) -> np.ndarray:
    """
    Normalized Markov function int d theta(s) / (z - s) in closed form, for z off the real support.

    Accurate for moderate |z|; the leading terms cancel like 1/z^2 at large |z|.
    """
    z = np.asarray(z, dtype=complex)
    poly = measure.poly
    xi = poly.z_roots
    alpha = poly.y_roots[0::2]
    beta = poly.y_roots[1::2]
    # sqrt(Y) / Z as a product of per-gap ratios
    ratio = np.sqrt(z - alpha[-1]) * np.sqrt(z - beta[-1])
    for a, b, x in zip(alpha[:-1], beta[:-1], xi):
        ratio = ratio * (np.sqrt(z - a) * np.sqrt(z - b) / (z - x))
    M = z + measure.X.q - ratio
    if xi.size:
        residues = measure.X.node_values / poly.dZ_at_roots()
        M = M + np.sum(residues / (z[..., None] - xi), axis=-1)
    return measure.ac_weight * M


def power_moments(measure: TorusMeasure, kmax: int, center: float = 0.0, scale: float = 1.0) -> np.ndarray:
    """
    Moments of t = (s - center) / scale under the measure, k = 0..kmax, by adaptive
    quadrature with the square-root endpoint weight of every band.
    """
    poly = measure.poly
    moments = np.zeros(kmax + 1)
    k = np.arange(kmax + 1)
    for i, (a, b) in enumerate(zip(poly.y_roots[0::2], poly.y_roots[1::2])):

        def smooth(s, i=i):
            log_rest = poly.log_abs_Y_off_band(s, i)
            return measure.ac_weight * np.exp(0.5 * log_rest - poly.log_abs_Z(s)) / np.pi

        for kk in k:
            value, _ = integrate.quad(
                lambda s: smooth(s) * ((s - center) / scale) ** kk,
                a,
                b,
                weight="alg",
                wvar=(0.5, 0.5),
                epsabs=0.0,
                epsrel=1e-13,
                limit=200,
            )
            moments[kk] += value
    for x, w in zip(measure.atom_positions, measure.atom_weights):
        moments += w * ((x - center) / scale) ** k
    return moments


def discretize(measure: TorusMeasure, P: int) -> DiscreteMeasure:
    """P second-kind Gauss-Chebyshev atoms per band plus the torus atoms, normalized."""
    if P < 2:
        raise IsotorusValidationError(f"Need at least 2 nodes per band, got {P}.")
    s, w = _ac_band_weights(measure.poly, P)
    positions = np.concatenate([s.ravel(), measure.atom_positions])
    weights = np.concatenate([measure.ac_weight * w.ravel(), measure.atom_weights])
    order = np.argsort(positions, kind="stable")
    return DiscreteMeasure.normalized(positions[order], weights[order])


def _next_pow2(x: int) -> int:
    return 1 << max(0, int(x - 1).bit_length())


def torus_jacobi_at(
    measure: TorusMeasure,
    P: int,
    J: int,
    reorth_memory_mb: float = DEFAULT_REORTH_MEMORY_MB,
) -> JacobiMatrix:
    """
    Order-J Jacobi matrix of `discretize(measure, P)`.

    Lanczos runs on the band nodes alone; the torus atoms are folded in
    afterwards, one exact point-mass update each.
    """
    if P < 2:
        raise IsotorusValidationError(f"Need at least 2 nodes per band, got {P}.")
    s, w = _ac_band_weights(measure.poly, P)
    ac = measure.ac_weight * w.ravel()
    mass = float(ac.sum())
    jacobi = jacobi_from_discrete(DiscreteMeasure.normalized(s.ravel(), ac), J, reorth_memory_mb=reorth_memory_mb)
    for x, weight in zip(measure.atom_positions, measure.atom_weights):
        jacobi = add_point_mass(jacobi, float(x), float(weight) / (mass + weight))
        mass += weight
    return jacobi


def torus_jacobi(
    bands: IntervalUnion,
    point: TorusPoint,
    J: int,
    start: int = DEFAULT_DISCRETIZE_START,
    cap: int = DEFAULT_DISCRETIZE_CAP,
    tol: float = DEFAULT_DISCRETIZE_TOL,
    atom_budget: int = DEFAULT_ATOM_BUDGET,
    reorth_memory_mb: float = DEFAULT_REORTH_MEMORY_MB,
    measure: Optional[TorusMeasure] = None,
) -> Tuple[JacobiMatrix, int]:
    """
    Order-J Jacobi matrix of a torus measure with the per-band node count doubled
    until the first J coefficients move less than `tol`.

    Gauss nodes on a band integrate degree 2J polynomials against the density only
    once there are about J of them, so the count starts at the power of two above J.

    Returns:
        (jacobi, nodes per band used).

    Raises:
        AtomBudgetError: If the first discretization already exceeds the budget.
        IsotorusNumericalError: If the node cap or the atom budget is reached before
            the coefficients settle; `partial` holds the last estimate.
    """
    if J < 1:
        raise IsotorusValidationError(f"Order J must be at least 1, got {J}.")
    measure = torus_measure(bands, point) if measure is None else measure
    n_atoms = measure.atom_positions.size
    P = max(start, _next_pow2(J))
    prev = None
    lost = None
    delta = None
    while True:
        total = bands.N * P + n_atoms
        if total > atom_budget:
            if prev is None and lost is None:
                raise AtomBudgetError(
                    f"Order {J} on {bands.N} bands needs {total} atoms, above the budget of {atom_budget}; use a smaller n or J.",
                    requested=total,
                    budget=atom_budget,
                )
            raise IsotorusNumericalError(
                f"Order {J} not stabilized to {tol:g} within the budget of {atom_budget} atoms; use a smaller J.",
                residual=delta,
                partial=prev,
            ) from lost
        try:
            current = torus_jacobi_at(measure, P, J, reorth_memory_mb=reorth_memory_mb)
        except OrthogonalityLossError as e:
            lost = e
            if P >= cap:
                raise IsotorusNumericalError(
                    f"Node cap {cap} reached while the order-{J} Lanczos run kept losing orthogonality; raise reorth_memory_mb or discretize_cap.",
                    residual=e.residual,
                    partial=e.partial,
                ) from e
            logger.info(f"Torus discretization: {P} nodes per band lost orthogonality; doubling")
            P *= 2
            continue
        if prev is not None:
            delta = float(np.max(np.abs(current.b - prev.b)))
            logger.debug(f"Torus discretization: {P} nodes per band, change {delta:.3e}")
            if delta < tol:
                return current, P
        if P >= cap:
            raise IsotorusNumericalError(
                f"Node cap {cap} reached before the first {J} coefficients stabilized to {tol:g}; raise discretize_cap or use a smaller J.",
                residual=delta,
                partial=current,
            )
        prev = current
        P *= 2


@dataclass(frozen=True, eq=False)
class TorusLimitResult:
    """Per-level torus matrices and the stabilization table between consecutive levels."""

    jacobi: Dict[int, JacobiMatrix]
    profiles: Dict[int, ErrorProfile]
    eps: Tuple[float, ...]

    def stabilization(self) -> List[Tuple[int, float, List[int]]]:
        """Rows (n, max_j |b_j(theta_n) - b_j(theta_{n-1})|, [N(eps, n) per eps])."""
        rows = []
        for n in sorted(self.profiles):
            profile = self.profiles[n]
            max_diff = float(profile.eps[-1]) if profile.eps.size else 0.0
            rows.append((n, max_diff, [profile.stabilization_index(e) for e in self.eps]))
        return rows


def torus_point_for_level(
    ifs: AffineIFS, n: int, rule: str = DEFAULT_POINT_RULE, seed: Optional[int] = DEFAULT_SEED
) -> Tuple[IntervalUnion, TorusPoint]:
    """E^n and the rule's torus point, assigned along the birth ordering of the gaps."""
    bands = iterate_bands(ifs, n)
    if n == 0:
        return bands, TorusPoint(xi=[], sigma=[])
    return bands, TorusPoint.from_rule(ordered_gaps(ifs, n), rule, seed=seed)


def torus_limit_sequence(
    ifs: AffineIFS,
    n_max: int,
    J: int,
    eps: Sequence[float],
    rule: str = DEFAULT_POINT_RULE,
    seed: Optional[int] = DEFAULT_SEED,
    **discretize_kwargs,
) -> TorusLimitResult:
    """
    J(theta_n) for n = 1..n_max with the stabilization gauge between consecutive levels.
    """
    if n_max < 1:
        raise IsotorusValidationError(f"n_max must be at least 1, got {n_max}.")
    eps = tuple(float(e) for e in eps)
    if any(not e > 0 for e in eps):
        raise IsotorusValidationError("Every eps must be positive.")
    jacobi: Dict[int, JacobiMatrix] = {}
    profiles: Dict[int, ErrorProfile] = {}
    for n in range(1, n_max + 1):
        bands, point = torus_point_for_level(ifs, n, rule, seed)
        jacobi[n], P = torus_jacobi(bands, point, J, **discretize_kwargs)
        logger.info(f"theta_{n}: {bands.N} bands, {P} nodes per band")
        if n > 1:
            profiles[n] = compare_sequences(jacobi[n], jacobi[n - 1])
    return TorusLimitResult(jacobi=jacobi, profiles=profiles, eps=eps)
