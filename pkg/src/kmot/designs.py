"""Synthetic study designs on the 12-point ``{0,1} x {0,1} x {0,1,2}`` grid.

The grid models counts at three sites of an organism: two sites with 0 or 1
events and one with 0, 1 or 2. Measures are products of per-site laws.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DivisibilityViolation, ValidationError
from .inference import BootstrapConfig, test_h0
from .measures import Measure, MeasureCollection, SupportSpace, replicate_rng

# per-site laws for the two "strains" used by the alternative designs
SITE_A = ((0.7, 0.3), (0.5, 0.5), (0.6, 0.3, 0.1))
SITE_B = ((0.7, 0.3), (0.5, 0.5), (0.2, 0.4, 0.4))


def experiment_support() -> SupportSpace:
    return SupportSpace([p for p in itertools.product((0, 1), (0, 1), (0, 1, 2))])


def product_measure(sites, support: SupportSpace | None = None) -> Measure:
    """Product of per-coordinate laws on the grid (C order over the sites)."""
    support = support or experiment_support()
    w = np.ones(1)
    for s in sites:
        w = np.multiply.outer(w, np.asarray(s, dtype=float)).reshape(-1)
    return Measure.normalized(w, support)


def strain_measures(shift: float = 1.0) -> tuple[Measure, Measure]:
    """The two strain laws; ``shift`` in [0, 1] interpolates the third site of
    the second law between ``SITE_A`` (0) and ``SITE_B`` (1)."""
    if not 0 <= shift <= 1:
        raise ValidationError("shift must lie in [0, 1]")
    third = (1 - shift) * np.array(SITE_A[2]) + shift * np.array(SITE_B[2])
    return product_measure(SITE_A), product_measure((*SITE_B[:2], tuple(third)))


def null_collection(k: int, mu: Measure | None = None) -> MeasureCollection:
    mu = mu or strain_measures()[0]
    return MeasureCollection(tuple([mu] * k))


def clustered_collection(representatives, k: int) -> MeasureCollection:
    """``k / C`` consecutive copies of each of the ``C`` representatives."""
    reps = list(representatives)
    if k % len(reps):
        raise DivisibilityViolation(f"{len(reps)} clusters do not divide k = {k}")
    return MeasureCollection(tuple(m for m in reps for _ in range(k // len(reps))))


def sparse_collection(mu_a: Measure, mu_b: Measure, k: int) -> MeasureCollection:
    """``k - 1`` copies of ``mu_a`` followed by one ``mu_b``."""
    return MeasureCollection(tuple([mu_a] * (k - 1) + [mu_b]))


def family_collection(family: str, k: int, shift: float = 1.0) -> MeasureCollection:
    mu_a, mu_b = strain_measures(shift)
    if family == "clustered":
        return clustered_collection((mu_a, mu_b), k)
    if family == "sparse":
        return sparse_collection(mu_a, mu_b, k)
    if family == "null":
        return null_collection(k, mu_a)
    raise ValidationError(f"unknown family {family!r}")


def sample_groups(truth: MeasureCollection, sizes, rng: np.random.Generator) -> list[np.ndarray]:
    """Raw observations (support indices) drawn from each true measure."""
    sizes = _sizes(sizes, truth.k)
    return [rng.choice(truth.N, size=n, p=m.weights) for m, n in zip(truth.measures, sizes)]


def sample_collection(truth: MeasureCollection, sizes, rng: np.random.Generator) -> MeasureCollection:
    """Empirical measures from multinomial counts at the given sizes."""
    sizes = _sizes(sizes, truth.k)
    return MeasureCollection(tuple(
        Measure.from_counts(rng.multinomial(n, m.weights), truth.support)
        for m, n in zip(truth.measures, sizes)
    ), truth.names)


def _sizes(sizes, k):
    if np.ndim(sizes) == 0:
        return (int(sizes),) * k
    sizes = tuple(int(v) for v in sizes)
    if len(sizes) != k:
        raise ValidationError("one sample size per measure")
    return sizes


def trial_seed(seed: int, index: int) -> int:
    """Bootstrap seed for one simulated experiment."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(6, int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class RejectionStudy:
    sizes: tuple[int, ...]
    trials: int
    rejections: int
    statistics: np.ndarray
    cutoffs: np.ndarray

    @property
    def rate(self) -> float:
        return self.rejections / self.trials


def rejection_rate(truth: MeasureCollection, sizes, trials: int, alpha: float = 0.05,
                   method: str = "derivative", cfg: BootstrapConfig | None = None,
                   seed: int = 0) -> RejectionStudy:
    """Fraction of simulated experiments in which ``H0`` is rejected.

    Experiment ``t`` draws its data from stream ``("truth", t)`` and runs
    the test with bootstrap seed :func:`trial_seed` ``(seed, t)``.
    """
    cfg = cfg or BootstrapConfig()
    sizes = _sizes(sizes, truth.k)
    stats, cuts, rej = [], [], 0
    for t in range(int(trials)):
        rng = replicate_rng(seed, "truth", t)
        tcfg = BootstrapConfig(**{**cfg.__dict__, "seed": trial_seed(seed, t)})
        if method == "permutation":
            groups = sample_groups(truth, sizes, rng)
            data = MeasureCollection(tuple(
                Measure.from_counts(np.bincount(g, minlength=truth.N), truth.support) for g in groups
            ))
            res = test_h0(data, alpha, method, tcfg, groups=groups)
        else:
            res = test_h0(sample_collection(truth, sizes, rng), alpha, method, tcfg)
        stats.append(res.statistic)
        cuts.append(res.cutoff)
        rej += res.reject
    return RejectionStudy(sizes, int(trials), rej, np.array(stats), np.array(cuts))
