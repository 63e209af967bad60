"""
Jacobi matrices of discrete measures and of IFS-iterated measures.

Order-J convention: a_0..a_{J-1} on the diagonal and b_1..b_{J-1} off it. `b` is
stored with b[0] = 0 so that b[j] is b_j. A discrete measure with at least J
atoms determines the order-J matrix.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import roots_chebyu, roots_legendre

from isotorus import AtomBudgetError, IsotorusNumericalError, IsotorusValidationError, OrthogonalityLossError
from isotorus.ifs import DEFAULT_ATOM_BUDGET, AffineIFS, DiscreteMeasure, pushforward_measure
from isotorus.utils import extract_column, read_csv_table, write_csv

logger = logging.getLogger(__name__)

DEFAULT_REORTH_MEMORY_MB = 256
DEFAULT_STABILIZATION_TOL = 1e-12
# b_j below this (in units of the support half-width) counts as lost positivity
POSITIVITY_TOL = 1e-14
INITIAL_MEASURES = ("a", "b")


@dataclass(frozen=True, eq=False)
class JacobiMatrix:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        if a.ndim != 1 or a.shape != b.shape or a.size == 0:
            raise IsotorusValidationError("Jacobi coefficients need matching non-empty a and b.")
        b[0] = 0.0
        bad = np.flatnonzero(~(b[1:] > 0))
        if bad.size:
            j = int(bad[0]) + 1
            raise IsotorusValidationError(f"Off-diagonal b_{j} = {b[j]!r} is not positive.")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def J(self) -> int:
        return int(self.a.size)

    @property
    def offdiag(self) -> np.ndarray:
        return self.b[1:]

    def truncated(self, J: int) -> "JacobiMatrix":
        if not 1 <= J <= self.J:
            raise IsotorusValidationError(f"Cannot truncate order {self.J} to {J}.")
        return JacobiMatrix(a=self.a[:J], b=self.b[:J])

    def to_dense(self) -> np.ndarray:
        return np.diag(self.a) + np.diag(self.b[1:], 1) + np.diag(self.b[1:], -1)


@dataclass(frozen=True, eq=False)
class ErrorProfile:
    """Pointwise |b_j(x) - b_j(y)| for j = 1.. and its running maximum eps_j."""

    j: np.ndarray
    diff: np.ndarray
    eps: np.ndarray

    def stabilization_index(self, eps: float) -> int:
        """N(eps): largest l with |x_j - y_j| <= eps for every 1 <= j <= l (0 if none)."""
        return int(np.searchsorted(self.eps, eps, side="right"))


def compensated_sum(values) -> float:
    """
    Sum over a fixed pairwise tree with the rounding error of every addition
    recovered (TwoSum) and added back once at the end.
    """
    s = np.asarray(values, dtype=float).ravel()
    if s.size == 0:
        return 0.0
    correction = 0.0
    while s.size > 1:
        if s.size % 2:
            s = np.append(s, 0.0)
        x, y = s[0::2], s[1::2]
        t = x + y
        z = t - x
        correction += float(np.sum((x - (t - z)) + (y - z)))
        s = t
    return float(s[0]) + correction


class _OrthogonalityMonitor:
    """
    Running estimates of |q_k . q_j| from the recurrence coefficients alone,
    for Lanczos runs that do not keep their basis. Semi-orthogonality
    (estimates below sqrt(eps)) keeps the computed coefficients accurate.
    """

    def __init__(self, J: int, n_atoms: int):
        eps = float(np.finfo(float).eps)
        self.eps1 = 0.5 * math.sqrt(n_atoms) * eps
        self.threshold = math.sqrt(eps)
        self.prev = np.zeros(J + 1)
        self.cur = np.zeros(J + 1)
        self.cur[0] = 1.0

    def advance(self, a: np.ndarray, b: np.ndarray, k: int) -> float:
        """Moves from q_k to q_{k+1} (b[k + 1] already set); returns the largest estimate against q_0..q_{k-1}."""
        b_new = b[k + 1]
        nxt = np.zeros_like(self.cur)
        level = 0.0
        if k:
            t = b[1 : k + 1] * self.cur[1 : k + 1] + (a[:k] - a[k]) * self.cur[:k] - b[k] * self.prev[:k]
            t[1:] += b[1:k] * self.cur[: k - 1]
            t += np.sign(t) * self.eps1 * (b[1 : k + 1] + b_new)
            nxt[:k] = t / b_new
            level = float(np.max(np.abs(nxt[:k])))
        nxt[k] = self.eps1
        nxt[k + 1] = 1.0
        self.prev, self.cur = self.cur, nxt
        return level


def jacobi_from_discrete(
    mu: DiscreteMeasure,
    J: int,
    reorth_memory_mb: float = DEFAULT_REORTH_MEMORY_MB,
) -> JacobiMatrix:
    """
    Order-J Jacobi matrix of a discrete measure.

    Lanczos tridiagonalization of diag(positions) started from sqrt(weights),
    with inner products in compensated summation. Two full reorthogonalization
    sweeps run per step while the stored basis fits in `reorth_memory_mb`;
    above that the basis is streamed and an orthogonality estimate is tracked
    instead.

    Raises:
        IsotorusValidationError: If J < 1 or J exceeds the atom count.
        IsotorusNumericalError: If some b_j loses positivity; the message names j.
        OrthogonalityLossError: If a streamed run loses semi-orthogonality; `partial`
            holds the coefficients computed before that step.
    """
    n_atoms = mu.size
    if J < 1:
        raise IsotorusValidationError(f"Order J must be at least 1, got {J}.")
    if J > n_atoms:
        raise IsotorusValidationError(
            f"Order {J} needs at least {J} atoms, the measure has {n_atoms}."
        )
    lo, hi = mu.hull
    center = 0.5 * (lo + hi)
    scale = 0.5 * (hi - lo) if hi > lo else 1.0
    x = (mu.positions - center) / scale

    store = J * n_atoms * 8 <= reorth_memory_mb * 2**20
    if store:
        basis = np.empty((J, n_atoms))
        monitor = None
    else:
        logger.info(f"Basis of {J} x {n_atoms} exceeds {reorth_memory_mb} MB; streaming it under an orthogonality estimate")
        basis = None
        monitor = _OrthogonalityMonitor(J, n_atoms)

    a = np.zeros(J)
    b = np.zeros(J)
    q = np.sqrt(mu.weights)
    q_prev = np.zeros(n_atoms)
    if store:
        basis[0] = q
    for j in range(J):
        v = x * q - b[j] * q_prev
        a[j] = compensated_sum(q * v)
        v -= a[j] * q
        if store:
            Q = basis[: j + 1]
            for _ in range(2):
                v -= Q.T @ (Q @ v)
        if j == J - 1:
            break
        beta = math.sqrt(compensated_sum(v * v))
        if not beta > POSITIVITY_TOL:
            raise IsotorusNumericalError(
                f"Off-diagonal b_{j + 1} lost positivity ({beta * scale:.3e}); the measure has too few distinct atoms."
            )
        b[j + 1] = beta
        if monitor is not None:
            level = monitor.advance(a, b, j)
            if level > monitor.threshold:
                raise OrthogonalityLossError(
                    f"Lanczos without stored basis lost orthogonality at b_{j + 1} (estimate {level:.1e}); "
                    f"use more nodes, a smaller J or a larger reorth_memory_mb.",
                    residual=level,
                    partial=JacobiMatrix(a=center + scale * a[: j + 1], b=scale * b[: j + 1]),
                )
        q_prev, q = q, v / beta
        if store:
            basis[j + 1] = q
    return JacobiMatrix(a=center + scale * a, b=scale * b)


def add_point_mass(jacobi: JacobiMatrix, x0: float, w: float) -> JacobiMatrix:
    """
    Order-J Jacobi matrix of (1 - w) mu + w delta_x0 from the order-J matrix of mu.

    The order-J matrix fixes the moments of mu through degree 2J - 1, which is all
    the result depends on. diag(x0, J(mu)) is rotated so that its first basis vector
    becomes (sqrt(w), sqrt(1 - w), 0, ...), and tridiagonal form is restored by
    chasing the bulge down with Givens rotations that leave that vector alone.

    Raises:
        IsotorusValidationError: If w is not in (0, 1).
    """
    if not 0.0 < w < 1.0:
        raise IsotorusValidationError(f"Point mass weight must lie in (0, 1), got {w!r}.")
    K = jacobi.J
    d = np.concatenate([[float(x0)], jacobi.a])
    # e[i] couples d[i] and d[i + 1]
    e = np.zeros(K + 1)
    e[1:K] = jacobi.b[1:]
    c, s = math.sqrt(w), math.sqrt(1.0 - w)
    a0 = d[1]
    d[0] = c * c * x0 + s * s * a0
    d[1] = s * s * x0 + c * c * a0
    e[0] = c * s * (a0 - x0)
    bulge = s * e[1]
    e[1] = c * e[1]
    for k in range(1, K):
        f, g = e[k - 1], bulge
        if g == 0.0:
            break
        r = math.hypot(f, g)
        cc, ss = f / r, g / r
        e[k - 1] = r
        dk, dk1, ek = d[k], d[k + 1], e[k]
        d[k] = cc * cc * dk + ss * ss * dk1 + 2.0 * cc * ss * ek
        d[k + 1] = ss * ss * dk + cc * cc * dk1 - 2.0 * cc * ss * ek
        e[k] = cc * ss * (dk1 - dk) + (cc * cc - ss * ss) * ek
        bulge = ss * e[k + 1]
        e[k + 1] = cc * e[k + 1]
    b = np.zeros(K)
    b[1:] = np.abs(e[: K - 1])
    return JacobiMatrix(a=d[:K], b=b)


def jacobi_from_moments(moments: Sequence[float], J: int, center: float = 0.0, scale: float = 1.0) -> JacobiMatrix:
    """
    Order-J Jacobi matrix from power moments via Cholesky of the Hankel matrix.

    `moments` are the moments of t = (s - center) / scale, indices 0..2J at least.
    Meant for small J only; the Hankel matrix is exponentially ill-conditioned.
    """
    m = np.asarray(moments, dtype=float)
    if m.size < 2 * J + 1:
        raise IsotorusValidationError(f"Order {J} needs {2 * J + 1} moments, got {m.size}.")
    H = linalg.hankel(m[: J + 1], m[J : 2 * J + 1]) / m[0]
    try:
        R = linalg.cholesky(H, lower=False)
    except linalg.LinAlgError as e:
        raise IsotorusNumericalError(f"Hankel matrix of order {J + 1} is not positive definite: {e}") from e
    d = np.diag(R)
    ratio = np.diag(R, 1) / d[:-1]
    a = ratio[:J].copy()
    a[1:] -= ratio[: J - 1]
    b = np.zeros(J)
    b[1:] = d[1:J] / d[: J - 1]
    return JacobiMatrix(a=center + scale * a, b=scale * b)


def compare_sequences(x: JacobiMatrix, y: JacobiMatrix) -> ErrorProfile:
    """|b_j(x) - b_j(y)| and its running maximum over the common range j >= 1."""
    J = min(x.J, y.J)
    j = np.arange(1, J)
    diff = np.abs(x.b[1:J] - y.b[1:J])
    eps = np.maximum.accumulate(diff) if diff.size else diff
    return ErrorProfile(j=j, diff=diff, eps=eps)


def loglog_slope(j: np.ndarray, values: np.ndarray, j_range: Optional[Tuple[float, float]] = None) -> float:
    """Least-squares slope of log(values) against log(j), positive entries only."""
    j = np.asarray(j, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (j > 0) & (values > 0)
    if j_range is not None:
        mask &= (j >= j_range[0]) & (j <= j_range[1])
    if mask.sum() < 2:
        raise IsotorusValidationError("Need at least two positive points for a log-log fit.")
    slope, _ = np.polyfit(np.log(j[mask]), np.log(values[mask]), 1)
    return float(slope)


def initial_measure(ifs: AffineIFS, initial: str, P: int) -> DiscreteMeasure:
    """
    P-node Gauss discretization of mu_0 on the hull: Legendre nodes for the
    normalized Lebesgue measure (case a), second-kind Chebyshev nodes for the
    semicircle measure (case b).
    """
    lo, hi = ifs.hull
    c, r = 0.5 * (lo + hi), 0.5 * (hi - lo)
    if initial == "a":
        t, w = roots_legendre(P)
    elif initial == "b":
        t, w = roots_chebyu(P)
    else:
        raise IsotorusValidationError(f"Unknown initial measure '{initial}', expected one of {INITIAL_MEASURES}.")
    return DiscreteMeasure.normalized(c + r * t, w)


def jacobi_mu_n(
    ifs: AffineIFS,
    initial: str,
    n: int,
    J: int,
    nodes: Optional[int] = None,
    tol: float = DEFAULT_STABILIZATION_TOL,
    atom_budget: int = DEFAULT_ATOM_BUDGET,
    reorth_memory_mb: float = DEFAULT_REORTH_MEMORY_MB,
) -> JacobiMatrix:
    """
    Jacobi matrix of mu_n = (T*)^n mu_0.

    Without `nodes`, the base node count starts at ceil(J / M^n) and doubles until
    the first J coefficients move less than `tol`. P >= J base nodes reproduce all
    moments the order-J matrix depends on, so doubling stops there unless a
    streamed Lanczos run lost orthogonality.

    Raises:
        AtomBudgetError: If even the first discretization exceeds the budget.
        IsotorusNumericalError: If the budget runs out before the coefficients settle;
            `partial` holds the last estimate.
    """
    if J < 1:
        raise IsotorusValidationError(f"Order J must be at least 1, got {J}.")
    blocks = ifs.M**n

    def compute(P: int) -> JacobiMatrix:
        mu = pushforward_measure(ifs, initial_measure(ifs, initial, P), n, atom_budget=atom_budget)
        return jacobi_from_discrete(mu, J, reorth_memory_mb=reorth_memory_mb)

    if nodes is not None:
        return compute(nodes)

    P = max(2, -(-J // blocks))
    prev = None
    lost = None
    delta = None
    while True:
        if blocks * P > atom_budget:
            if prev is None and lost is None:
                raise AtomBudgetError(
                    f"mu_{n} with order {J} needs {blocks * P} atoms, above the budget of {atom_budget}; use a smaller n or J.",
                    requested=blocks * P,
                    budget=atom_budget,
                )
            raise IsotorusNumericalError(
                f"mu_{n} not stabilized to {tol:g} within the budget of {atom_budget} atoms; use a smaller n or J.",
                residual=delta,
                partial=prev,
            ) from lost
        try:
            current = compute(P)
        except OrthogonalityLossError as e:
            logger.info(f"mu_{n}: {P} base nodes lost orthogonality; doubling")
            lost = e
            P *= 2
            continue
        if prev is not None:
            delta = float(np.max(np.abs(current.b - prev.b)))
            logger.debug(f"mu_{n}: {P} base nodes, change {delta:.3e}")
            if delta < tol:
                return current
        if P >= J:
            return current
        prev = current
        P = min(2 * P, J)


@dataclass(frozen=True, eq=False)
class BalancedJacobi:
    jacobi: JacobiMatrix
    n: int
    delta: float


def jacobi_balanced(
    ifs: AffineIFS,
    J: int,
    eps: float,
    base_nodes: int = 4,
    atom_budget: int = DEFAULT_ATOM_BUDGET,
    reorth_memory_mb: float = DEFAULT_REORTH_MEMORY_MB,
) -> BalancedJacobi:
    """
    Jacobi matrix of the balanced measure, approximated by mu_n from a small
    second-kind Chebyshev base with n increased until the first J off-diagonal
    coefficients move less than eps.

    Raises:
        IsotorusNumericalError: If the atom budget runs out first; `partial` holds
            the last BalancedJacobi.
    """
    if not eps > 0:
        raise IsotorusValidationError(f"eps must be positive, got {eps!r}.")
    if J < 1:
        raise IsotorusValidationError(f"Order J must be at least 1, got {J}.")
    n = 0
    while ifs.M**n * base_nodes < J:
        n += 1
    mu = pushforward_measure(ifs, initial_measure(ifs, "b", base_nodes), n, atom_budget=atom_budget)
    prev = jacobi_from_discrete(mu, J, reorth_memory_mb=reorth_memory_mb)
    delta = math.inf
    while True:
        if mu.size * ifs.M > atom_budget:
            raise IsotorusNumericalError(
                f"Balanced measure not stabilized to {eps:g} within the atom budget (reached n = {n}).",
                residual=delta,
                partial=BalancedJacobi(jacobi=prev, n=n, delta=delta),
            )
        mu = pushforward_measure(ifs, mu, 1, atom_budget=atom_budget)
        n += 1
        current = jacobi_from_discrete(mu, J, reorth_memory_mb=reorth_memory_mb)
        delta = float(np.max(np.abs(current.b - prev.b)))
        logger.debug(f"Balanced measure: n = {n}, change {delta:.3e}")
        if delta < eps:
            logger.info(f"Balanced measure stabilized at n = {n} (change {delta:.3e})")
            return BalancedJacobi(jacobi=current, n=n, delta=delta)
        prev = current


def write_jacobi_csv(jacobi: JacobiMatrix, path: str) -> str:
    rows = ((j, jacobi.a[j], jacobi.b[j]) for j in range(jacobi.J))
    return write_csv(path, ["j", "a_j", "b_j"], rows)


def read_jacobi_csv(path: str) -> JacobiMatrix:
    table = read_csv_table(path)
    a = np.asarray(extract_column(table, "a_j"), dtype=float)
    b = np.asarray(extract_column(table, "b_j"), dtype=float)
    return JacobiMatrix(a=a, b=b)


def write_error_profile_csv(profile: ErrorProfile, path: str) -> str:
    rows = zip(profile.j, profile.diff, profile.eps)
    return write_csv(path, ["j", "diff_b", "running_max"], (list(r) for r in rows))
