"""Finite supports, probability vectors on them, and the two random primitives
used by every resampling scheme: multinomial resampling and the Gaussian limit
of the multinomial process.

Randomness always flows through an explicit :class:`numpy.random.Generator`.
:func:`replicate_rng` is the single place where a master seed is split into
per-replicate streams, so that results never depend on execution order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateSupportPoint,
    EmptySample,
    InvalidSize,
    SupportMismatch,
    UnknownSupportPoint,
    ValidationError,
)

WEIGHT_TOL = 1e-12

# Stream tags for replicate_rng; the numbers are part of the reproducibility
# contract and must not be renumbered.
STREAM_TAGS = {
    "derivative": 1,
    "mn": 2,
    "ub0": 3,
    "permutation": 4,
    "truth": 5,
    "trial": 6,
    "alternative": 7,
}


def canonical_coordinate(value) -> Decimal:
    """Parse one coordinate into a normalized :class:`~decimal.Decimal`.

    Floats go through ``repr`` so that ``5.0``, ``"5"`` and ``"5.00"`` all
    map to the same key.
    """
    if isinstance(value, Decimal):
        d = value
    elif isinstance(value, (bool, np.bool_)):
        raise ValidationError(f"boolean is not a coordinate: {value!r}")
    elif isinstance(value, (int, np.integer)):
        d = Decimal(int(value))
    elif isinstance(value, (float, np.floating)):
        d = Decimal(repr(float(value)))
    else:
        try:
            d = Decimal(str(value).strip())
        except InvalidOperation:
            raise ValidationError(f"not a number: {value!r}") from None
    if not d.is_finite():
        raise ValidationError(f"non-finite coordinate: {value!r}")
    d = d.normalize()
    if d == 0:
        d = Decimal(0)
    return d


def canonical_point(row) -> tuple[Decimal, ...]:
    if np.ndim(row) == 0:
        row = [row]
    return tuple(canonical_coordinate(v) for v in row)


class SupportSpace:
    """Ordered finite ground set ``{x_1, ..., x_N}`` in ``R^d``.

    Points must be pairwise distinct after canonical decimal parsing. The
    order given at construction is the index order used everywhere else
    (weights, cost tensors, dual vectors).
    """

    def __init__(self, points: Iterable):
        rows = [r for r in points]
        if not rows:
            raise EmptySample("a support needs at least one point")
        keys = [canonical_point(r) for r in rows]
        d = len(keys[0])
        if d == 0 or any(len(k) != d for k in keys):
            raise ValidationError("support points must share one positive dimension")
        index: dict[tuple, int] = {}
        for j, key in enumerate(keys):
            if key in index:
                raise DuplicateSupportPoint(
                    f"support point {tuple(str(c) for c in key)} listed twice "
                    f"(positions {index[key]} and {j})"
                )
            index[key] = j
        pts = np.array([[float(c) for c in key] for key in keys], dtype=float)
        pts.setflags(write=False)
        self._points = pts
        self._keys = tuple(keys)
        self._index = index

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def N(self) -> int:
        return self._points.shape[0]

    @property
    def d(self) -> int:
        return self._points.shape[1]

    def __len__(self):
        return self.N

    def __eq__(self, other):
        if not isinstance(other, SupportSpace):
            return NotImplemented
        return self is other or self._keys == other._keys

    def __hash__(self):
        return hash(self._keys)

    def __repr__(self):
        return f"SupportSpace(N={self.N}, d={self.d})"

    def index_of(self, row) -> int:
        try:
            return self._index[canonical_point(row)]
        except KeyError:
            raise UnknownSupportPoint(f"row {row!r} is not a support point") from None

    def indices_of(self, rows: Iterable) -> np.ndarray:
        return np.fromiter((self.index_of(r) for r in rows), dtype=np.int64)

    @cached_property
    def sq_dists(self) -> np.ndarray:
        """Matrix of squared Euclidean distances ``||x_i - x_j||^2``."""
        diff = self._points[:, None, :] - self._points[None, :, :]
        D = np.einsum("ijk,ijk->ij", diff, diff)
        D.setflags(write=False)
        return D

    @property
    def diameter_sq(self) -> float:
        return float(self.sq_dists.max())

    def scaled(self, s: float) -> "SupportSpace":
        return SupportSpace(self._points * s)

    def labels(self) -> list[str]:
        return [" ".join(str(c) for c in key) for key in self._keys]


@dataclass(frozen=True, eq=False)
class Measure:
    """Probability vector over a :class:`SupportSpace`.

    ``sample_size`` is the number of observations behind an empirical
    measure, or ``None`` for a population measure.
    """

    weights: np.ndarray
    support: SupportSpace
    sample_size: int | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != self.support.N:
            raise SupportMismatch(
                f"{w.shape[0]} weights for a support of {self.support.N} points"
            )
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"weights sum to {w.sum()!r}, not 1")
        if self.sample_size is not None and int(self.sample_size) < 1:
            raise InvalidSize("sample_size must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_counts(cls, counts, support: SupportSpace) -> "Measure":
        counts = np.asarray(counts)
        n = int(counts.sum())
        if n == 0:
            raise EmptySample("no observations")
        return cls(counts / n, support, n)

    @classmethod
    def normalized(cls, weights, support, sample_size=None) -> "Measure":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum(), support, sample_size)

    @property
    def N(self) -> int:
        return self.support.N

    def is_point_mass(self) -> bool:
        return bool(np.count_nonzero(self.weights) == 1)

    def covariance(self) -> np.ndarray:
        """``diag(mu) - mu mu'``, the multinomial limit covariance."""
        w = self.weights
        return np.diag(w) - np.outer(w, w)

    def __repr__(self):
        return f"Measure(N={self.N}, n={self.sample_size})"


@dataclass(frozen=True, eq=False)
class MeasureCollection:
    """``k >= 2`` measures over one shared support."""

    measures: tuple[Measure, ...]
    names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        ms = tuple(self.measures)
        if len(ms) < 2:
            raise ValidationError("a collection needs k >= 2 measures")
        sup = ms[0].support
        for m in ms[1:]:
            if m.support != sup:
                raise SupportMismatch("all measures must share one support")
        object.__setattr__(self, "measures", ms)
        if self.names is not None:
            names = tuple(str(n) for n in self.names)
            if len(names) != len(ms):
                raise ValidationError("one name per measure")
            object.__setattr__(self, "names", names)

    @property
    def k(self) -> int:
        return len(self.measures)

    @property
    def support(self) -> SupportSpace:
        return self.measures[0].support

    @property
    def N(self) -> int:
        return self.support.N

    @property
    def sizes(self) -> tuple[int, ...]:
        """Sample sizes ``(n_1, ..., n_k)``; raises if any is unknown."""
        out = []
        for i, m in enumerate(self.measures):
            if m.sample_size is None:
                raise InvalidSize(f"measure {i} carries no sample size")
            out.append(int(m.sample_size))
        return tuple(out)

    def weights(self) -> np.ndarray:
        """``(k, N)`` array of weights."""
        return np.stack([m.weights for m in self.measures])

    def __getitem__(self, i) -> Measure:
        return self.measures[i]

    def __len__(self):
        return self.k

    def reordered(self, order: Sequence[int]) -> "MeasureCollection":
        names = None if self.names is None else tuple(self.names[i] for i in order)
        return MeasureCollection(tuple(self.measures[i] for i in order), names)


def empirical_measure(rows: Sequence, support: SupportSpace) -> Measure:
    """Frequency vector of ``rows`` over ``support``.

    Every row must equal a support point exactly after canonical decimal
    parsing; there is no tolerance-based merging.
    """
    rows = list(rows)
    if not rows:
        raise EmptySample("cannot build an empirical measure from zero rows")
    idx = support.indices_of(rows)
    return Measure.from_counts(np.bincount(idx, minlength=support.N), support)


def multinomial_resample(mu: Measure, m: int, rng: np.random.Generator) -> Measure:
    """One multinomial(m, mu) draw, returned as the frequency vector counts/m."""
    m = int(m)
    if m < 1:
        raise InvalidSize(f"resample size must be >= 1, got {m}")
    counts = rng.multinomial(m, mu.weights)
    return Measure(counts / m, mu.support, m)


def gaussian_limit_sample(mu: Measure | np.ndarray, rng: np.random.Generator,
                          size: int | None = None) -> np.ndarray:
    """Draw from ``N(0, diag(mu) - mu mu')``.

    Uses ``g = sqrt(mu) * Z - (sqrt(mu) . Z) mu`` with ``Z`` standard normal,
    whose covariance is exactly ``diag(mu) - mu mu'``; this sidesteps
    factorizing the rank-deficient covariance. Components of every draw sum
    to zero up to rounding.

    Returns shape ``(N,)`` when ``size`` is None, else ``(size, N)``.
    """
    w = mu.weights if isinstance(mu, Measure) else np.asarray(mu, dtype=float)
    s = np.sqrt(w)
    z = rng.standard_normal(w.shape[0] if size is None else (size, w.shape[0]))
    proj = z @ s
    return s * z - np.multiply.outer(proj, w)


def replicate_rng(seed: int, tag: str | int, index: int, *extra: int) -> np.random.Generator:
    """Independent, reproducible stream for one replicate.

    The stream is ``PCG64(SeedSequence(seed, spawn_key=(tag, index, *extra)))``.
    Identical arguments give bit-identical streams; distinct ``index`` values
    give statistically independent streams. Nothing depends on the order in
    which replicates are executed.
    """
    code = STREAM_TAGS[tag] if isinstance(tag, str) else int(tag)
    ss = np.random.SeedSequence(int(seed), spawn_key=(code, int(index), *map(int, extra)))
    return np.random.Generator(np.random.PCG64(ss))
