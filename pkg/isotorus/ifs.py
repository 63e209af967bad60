"""
Affine iterated function systems on the real line.

The maps are phi_j(s) = delta_j * (s - gamma_j) + gamma_j. The level-n set E^n is
the union of the images of the hull E^0 = [min gamma, max gamma] under all
length-n compositions; its complement in the hull is the set of gaps.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from isotorus import AtomBudgetError, IsotorusValidationError
from isotorus.utils import write_csv

logger = logging.getLogger(__name__)

DEFAULT_ATOM_BUDGET = 2**22
WEIGHT_SUM_TOL = 1e-12


def _frozen(values: Sequence[float], dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AffineIFS:
    """
    A fully disconnected system of increasing affine contractions.

    Maps are kept in the order given; `sorted()` returns the same system with the
    maps ordered by the position of their image of E^0, which is the order used
    for word enumeration.
    """

    deltas: np.ndarray
    gammas: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        deltas = _frozen(self.deltas)
        gammas = _frozen(self.gammas)
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "gammas", gammas)
        if deltas.ndim != 1 or deltas.shape != gammas.shape or deltas.size < 2:
            raise IsotorusValidationError(
                "An IFS needs at least two maps with one delta and one gamma each."
            )
        if not np.all(np.isfinite(deltas)) or not np.all(np.isfinite(gammas)):
            raise IsotorusValidationError("IFS parameters must be finite.")
        bad = np.flatnonzero((deltas <= 0) | (deltas >= 1))
        if bad.size:
            j = int(bad[0])
            raise IsotorusValidationError(
                f"Contraction ratio of map {j + 1} must lie in (0, 1), got {deltas[j]!r}."
            )
        if self.weights is not None:
            weights = _frozen(self.weights)
            object.__setattr__(self, "weights", weights)
            if weights.shape != deltas.shape:
                raise IsotorusValidationError(
                    f"Expected {deltas.size} weights, got {weights.size}."
                )
            if np.any(weights <= 0):
                raise IsotorusValidationError("IFS weights must be positive.")
            if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
                raise IsotorusValidationError(
                    f"IFS weights must sum to 1, got {weights.sum()!r}."
                )
        self._check_disjoint()

    def _check_disjoint(self):
        lo, hi = self.hull
        if not hi > lo:
            raise IsotorusValidationError("Fixed points must not all coincide.")
        left = self.apply(np.arange(self.M), lo)
        right = self.apply(np.arange(self.M), hi)
        order = np.argsort(left, kind="stable")
        for p, q in zip(order[:-1], order[1:]):
            # touching images are rejected as well
            if not right[p] < left[q]:
                raise IsotorusValidationError(
                    f"Images of maps {p + 1} and {q + 1} overlap: "
                    f"[{left[p]!r}, {right[p]!r}] and [{left[q]!r}, {right[q]!r}]."
                )

    @property
    def M(self) -> int:
        return int(self.deltas.size)

    @property
    def hull(self) -> Tuple[float, float]:
        return float(self.gammas.min()), float(self.gammas.max())

    @property
    def is_weighted(self) -> bool:
        return self.weights is not None

    def apply(self, j, s):
        """phi_j(s), vectorized over j and s with numpy broadcasting."""
        j = np.asarray(j)
        return self.deltas[j] * (np.asarray(s, dtype=float) - self.gammas[j]) + self.gammas[j]

    def sorted(self) -> "AffineIFS":
        lo, _ = self.hull
        order = np.argsort(self.apply(np.arange(self.M), lo), kind="stable")
        if np.array_equal(order, np.arange(self.M)):
            return self
        return AffineIFS(
            deltas=self.deltas[order],
            gammas=self.gammas[order],
            weights=None if self.weights is None else self.weights[order],
        )

    def with_weights(self, weights: Sequence[float]) -> "AffineIFS":
        return AffineIFS(deltas=self.deltas, gammas=self.gammas, weights=np.asarray(weights, dtype=float))

    def to_dict(self) -> Dict[str, Any]:
        config: Dict[str, Any] = {
            "maps": [{"delta": float(d), "gamma": float(g)} for d, g in zip(self.deltas, self.gammas)]
        }
        if self.weights is not None:
            config["weights"] = [float(w) for w in self.weights]
        return config

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "AffineIFS":
        if not isinstance(config, dict) or "maps" not in config:
            raise IsotorusValidationError("IFS definition must be an object with a 'maps' list.")
        try:
            deltas = [float(m["delta"]) for m in config["maps"]]
            gammas = [float(m["gamma"]) for m in config["maps"]]
        except (KeyError, TypeError, ValueError) as e:
            raise IsotorusValidationError(
                f"Each map needs numeric 'delta' and 'gamma' entries: {e}"
            ) from e
        weights = config.get("weights")
        if weights is not None:
            try:
                weights = [float(w) for w in weights]
            except (TypeError, ValueError) as e:
                raise IsotorusValidationError(f"Weights must be numbers: {e}") from e
        return cls(deltas=np.array(deltas), gammas=np.array(gammas), weights=weights)


BUILTIN_IFS: Dict[str, Dict[str, Any]] = {
    # E^1 = [-1, -0.32] U [-0.04, 1]
    "example1": {
        "maps": [{"delta": 0.34, "gamma": -1.0}, {"delta": 0.52, "gamma": 1.0}],
        "weights": [0.6, 0.4],
    },
    "cantor": {
        "maps": [{"delta": 1.0 / 3.0, "gamma": -1.0}, {"delta": 1.0 / 3.0, "gamma": 1.0}],
        "weights": [0.5, 0.5],
    },
}


def load_ifs(path: str) -> AffineIFS:
    """
    Reads an IFS from a JSON file `{"maps": [{"delta": r, "gamma": r}, ...], "weights": [...]}`.

    A name from BUILTIN_IFS that is not an existing file selects that system.
    """
    if path in BUILTIN_IFS and not os.path.exists(path):
        return AffineIFS.from_dict(BUILTIN_IFS[path])
    try:
        with open(path, "r") as f:
            config = json.load(f)
    except FileNotFoundError as e:
        raise IsotorusValidationError(f"IFS file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise IsotorusValidationError(f"Error parsing IFS file {path}: {e}") from e
    ifs = AffineIFS.from_dict(config)
    logger.debug(f"Loaded IFS with {ifs.M} maps from {path}")
    return ifs


@dataclass(frozen=True, eq=False)
class IntervalUnion:
    """Sorted disjoint closed bands [alpha_i, beta_i]."""

    alpha: np.ndarray
    beta: np.ndarray
    level: Optional[int] = None

    def __post_init__(self):
        alpha = _frozen(self.alpha)
        beta = _frozen(self.beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        if alpha.ndim != 1 or alpha.shape != beta.shape or alpha.size == 0:
            raise IsotorusValidationError("An interval union needs at least one band.")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise IsotorusValidationError("Band endpoints must be finite.")
        bad = np.flatnonzero(~(alpha < beta))
        if bad.size:
            i = int(bad[0])
            raise IsotorusValidationError(
                f"Band {i + 1} is empty or reversed: [{alpha[i]!r}, {beta[i]!r}]."
            )
        bad = np.flatnonzero(~(beta[:-1] < alpha[1:]))
        if bad.size:
            i = int(bad[0])
            raise IsotorusValidationError(
                f"Bands {i + 1} and {i + 2} are not disjoint and ascending."
            )

    @classmethod
    def from_bands(cls, bands: Sequence[Tuple[float, float]], level: Optional[int] = None) -> "IntervalUnion":
        arr = np.asarray(bands, dtype=float).reshape(-1, 2)
        return cls(alpha=arr[:, 0], beta=arr[:, 1], level=level)

    @property
    def N(self) -> int:
        return int(self.alpha.size)

    @property
    def hull(self) -> Tuple[float, float]:
        return float(self.alpha[0]), float(self.beta[-1])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.alpha + self.beta)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.beta - self.alpha)

    @property
    def bands(self) -> List[Tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.alpha, self.beta)]

    @property
    def endpoints(self) -> np.ndarray:
        """All 2N endpoints in ascending order."""
        return np.column_stack([self.alpha, self.beta]).ravel()

    def total_length(self) -> float:
        return float(np.sum(self.beta - self.alpha))

    def locate(self, s) -> np.ndarray:
        """0-based index of the band containing each s, or -1."""
        s = np.asarray(s, dtype=float)
        i = np.searchsorted(self.alpha, s, side="right") - 1
        inside = (i >= 0) & (s <= self.beta[np.clip(i, 0, None)])
        return np.where(inside, i, -1)

    def contains(self, other: "IntervalUnion") -> bool:
        idx = self.locate(other.alpha)
        if np.any(idx < 0):
            return False
        return bool(np.all(other.beta <= self.beta[idx]))


@dataclass(frozen=True, eq=False)
class GapList:
    """
    Open gaps (left_i, right_i).

    `birth_level[i]` is the level at which gap i first appears (-1 when unknown).
    `order[i]` is the 0-based ascending position of gap i on the line; for gaps
    listed in ascending order it is simply arange.
    """

    left: np.ndarray
    right: np.ndarray
    birth_level: np.ndarray
    order: np.ndarray = field(default=None)

    def __post_init__(self):
        left = _frozen(self.left)
        right = _frozen(self.right)
        birth = _frozen(self.birth_level, dtype=int)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "birth_level", birth)
        if self.order is None:
            order = np.argsort(np.argsort(left, kind="stable"), kind="stable")
        else:
            order = np.asarray(self.order, dtype=int)
        object.__setattr__(self, "order", _frozen(order, dtype=int))

    def __len__(self) -> int:
        return int(self.left.size)

    @property
    def widths(self) -> np.ndarray:
        return self.right - self.left

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.left + self.right)

    @property
    def gaps(self) -> List[Tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.left, self.right)]

    def up_to_level(self, m: int) -> "GapList":
        keep = self.birth_level <= m
        left = self.left[keep]
        return GapList(left=left, right=self.right[keep], birth_level=self.birth_level[keep])

    def ascending(self) -> "GapList":
        idx = np.argsort(self.order, kind="stable")
        return GapList(left=self.left[idx], right=self.right[idx], birth_level=self.birth_level[idx])


def iterate_bands(ifs: AffineIFS, n: int) -> IntervalUnion:
    """
    Returns E^n, the image of the hull under all length-n words, bands ascending.

    Words are enumerated left to right with the maps sorted by image, so the
    bands come out in ascending order without sorting.
    """
    if n < 0:
        raise IsotorusValidationError(f"Level must be non-negative, got {n}.")
    ifs = ifs.sorted()
    lo, hi = ifs.hull
    alpha = np.array([lo])
    beta = np.array([hi])
    for _ in range(n):
        alpha = ifs.apply(np.arange(ifs.M)[:, None], alpha[None, :]).ravel()
        beta = ifs.apply(np.arange(ifs.M)[:, None], beta[None, :]).ravel()
    return IntervalUnion(alpha=alpha, beta=beta, level=n)


def ordered_gaps(ifs: AffineIFS, n: int) -> GapList:
    """
    Gaps of E^n in birth order: the level-1 gaps H^1, then H^m = U_j phi_j(H^{m-1})
    for m = 2..n, each level ascending on the line.

    Args:
        ifs: The system.
        n: Level, at least 1.

    Returns:
        GapList with birth levels and the ascending position of every gap.
    """
    if n < 1:
        raise IsotorusValidationError(f"Ordered gaps need level n >= 1, got {n}.")
    ifs = ifs.sorted()
    lo, hi = ifs.hull
    maps = np.arange(ifs.M)
    level_left = ifs.apply(maps[:-1], hi)
    level_right = ifs.apply(maps[1:], lo)
    lefts = [level_left]
    rights = [level_right]
    births = [np.ones(level_left.size, dtype=int)]
    for m in range(2, n + 1):
        level_left = ifs.apply(maps[:, None], level_left[None, :]).ravel()
        level_right = ifs.apply(maps[:, None], level_right[None, :]).ravel()
        lefts.append(level_left)
        rights.append(level_right)
        births.append(np.full(level_left.size, m, dtype=int))
    left = np.concatenate(lefts)
    right = np.concatenate(rights)
    # ascending position: how many gap right ends lie left of each gap's midpoint
    midpoints = 0.5 * (left + right)
    order = np.searchsorted(np.sort(right), midpoints)
    return GapList(left=left, right=right, birth_level=np.concatenate(births), order=order)


def gaps_of(bands: IntervalUnion, ifs: Optional[AffineIFS] = None) -> GapList:
    """
    The N-1 open gaps of a union in ascending order.

    Birth levels are filled from `ifs` when given and the union carries its level.
    """
    left = bands.beta[:-1]
    right = bands.alpha[1:]
    birth = np.full(left.size, -1, dtype=int)
    if ifs is not None and bands.level is not None and bands.level >= 1:
        ordered = ordered_gaps(ifs, bands.level)
        if len(ordered) != left.size:
            raise IsotorusValidationError(
                f"Union has {left.size} gaps but level {bands.level} of the IFS has {len(ordered)}."
            )
        birth[ordered.order] = ordered.birth_level
    return GapList(left=left, right=right, birth_level=birth)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely many atoms with non-negative weights summing to one."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        positions = _frozen(self.positions)
        weights = _frozen(self.weights)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)
        if positions.ndim != 1 or positions.shape != weights.shape or positions.size == 0:
            raise IsotorusValidationError("A discrete measure needs matching non-empty positions and weights.")
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(weights))):
            raise IsotorusValidationError("Atom positions and weights must be finite.")
        if np.any(weights < 0):
            raise IsotorusValidationError("Atom weights must be non-negative.")
        total = weights.sum()
        if abs(total - 1.0) > 1e-12:
            raise IsotorusValidationError(f"Atom weights must sum to 1, got {total!r}.")

    @classmethod
    def normalized(cls, positions, weights) -> "DiscreteMeasure":
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if not total > 0:
            raise IsotorusValidationError("Cannot normalize a measure with zero total weight.")
        return cls(positions=np.asarray(positions, dtype=float), weights=weights / total)

    @classmethod
    def unit_atom(cls, position: float) -> "DiscreteMeasure":
        return cls(positions=np.array([position]), weights=np.array([1.0]))

    @property
    def size(self) -> int:
        return int(self.positions.size)

    @property
    def hull(self) -> Tuple[float, float]:
        return float(self.positions.min()), float(self.positions.max())

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.positions)))


def pushforward_measure(
    ifs: AffineIFS,
    base: DiscreteMeasure,
    n: int,
    atom_budget: int = DEFAULT_ATOM_BUDGET,
) -> DiscreteMeasure:
    """
    Applies the transfer operator n times: the sum over length-n words w of
    pi_w times base pushed through phi_w.

    Atoms come out in lexicographic word order (maps sorted by image).

    Raises:
        IsotorusValidationError: If the IFS carries no weights or n < 0.
        AtomBudgetError: If M^n times the base size exceeds `atom_budget`.
    """
    if not ifs.is_weighted:
        raise IsotorusValidationError("Pushing a measure forward needs IFS weights.")
    if n < 0:
        raise IsotorusValidationError(f"Level must be non-negative, got {n}.")
    requested = ifs.M**n * base.size
    if requested > atom_budget:
        raise AtomBudgetError(
            f"Level {n} needs {requested} atoms, above the budget of {atom_budget}; use a smaller n or fewer base nodes.",
            requested=requested,
            budget=atom_budget,
        )
    ifs = ifs.sorted()
    maps = np.arange(ifs.M)[:, None]
    x = base.positions
    w = base.weights
    for _ in range(n):
        x = ifs.apply(maps, x[None, :]).ravel()
        w = (ifs.weights[:, None] * w[None, :]).ravel()
    logger.debug(f"Pushed {base.size} atoms forward {n} times: {x.size} atoms")
    return DiscreteMeasure(positions=x, weights=w / w.sum())


def write_bands_csv(bands: IntervalUnion, path: str) -> str:
    level = -1 if bands.level is None else bands.level
    rows = ((level, i + 1, a, b) for i, (a, b) in enumerate(zip(bands.alpha, bands.beta)))
    return write_csv(path, ["level", "index", "alpha", "beta"], rows)


def write_gaps_csv(gaps: GapList, path: str, level: Optional[int] = None) -> str:
    """Gap rows in list order; `order` is the 1-based ascending position."""
    level = -1 if level is None else level
    rows = (
        (level, i + 1, gaps.left[i], gaps.right[i], int(gaps.birth_level[i]), int(gaps.order[i]) + 1)
        for i in range(len(gaps))
    )
    return write_csv(path, ["level", "index", "alpha", "beta", "birth_level", "order"], rows)
