"""Differential-evolution design of burst degree distributions.

Candidates are probability vectors over degrees ``min_degree..d_max``. Every
trial vector is repaired onto the feasible set (nonnegative, unit sum, fixed
average degree) before its decoding threshold is evaluated, so no penalty
weights are needed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .capture import ChannelModel
from .de import DeConfig, NumericalDiagnostic, ThresholdSearch, decoding_threshold
from .degree import DegreeDistribution

log = logging.getLogger(__name__)

MEAN_TOL = 1e-9


@dataclass(frozen=True)
class OptConstraints:
    target_avg_degree: float
    d_max: int = 16
    min_degree: int = 2
    plr_target: float = 1e-2
    avg_degree_is_upper_bound: bool = False

    def __post_init__(self):
        if not 2 <= self.min_degree <= self.d_max:
            raise ValueError("need 2 <= min_degree <= d_max")
        if not self.min_degree <= self.target_avg_degree <= self.d_max:
            raise ValueError(f"average degree {self.target_avg_degree} infeasible for "
                             f"degrees {self.min_degree}..{self.d_max}")
        if not 0.0 < self.plr_target < 1.0:
            raise ValueError("plr_target must be in (0, 1)")

    @property
    def degrees(self) -> np.ndarray:
        return np.arange(self.min_degree, self.d_max + 1)


@dataclass(frozen=True)
class OptConfig:
    population_size: int = 40
    max_generations: int = 500
    mutation_factor: float = 0.5
    dither: float = 0.5  # per-generation F drawn from [F, F + dither]
    crossover_rate: float = 0.9
    seed: int = 0
    de: DeConfig = field(default_factory=DeConfig)
    search: ThresholdSearch = field(default_factory=lambda: ThresholdSearch(resolution=0.01))
    final_resolution: float = 1e-3
    stop_at: float | None = None  # stop once the best threshold reaches this
    cache_grid: float = 1e-4

    def __post_init__(self):
        if self.population_size < 8:
            raise ValueError("population_size must be >= 8")
        if not 0.0 < self.mutation_factor <= 2.0:
            raise ValueError("mutation_factor must be in (0, 2]")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must be in [0, 1]")
        if self.max_generations < 0:
            raise ValueError("max_generations must be nonnegative")


@dataclass
class OptResult:
    distribution: DegreeDistribution
    threshold: float
    history: list[float]
    evaluations: int


def _shift_mean(w: np.ndarray, degs: np.ndarray, target: float) -> np.ndarray:
    """Move mass between the lowest and highest support points toward ``target``."""
    support = np.flatnonzero(w > 0)
    if support.size < 2:
        return w
    lo, hi = support[0], support[-1]
    gap = target - float(w @ degs)
    span = degs[hi] - degs[lo]
    delta = gap / span  # mass moved from lo to hi
    delta = min(delta, w[lo]) if delta > 0 else max(delta, -w[hi])
    w = w.copy()
    w[lo] -= delta
    w[hi] += delta
    return w


def repair(x: np.ndarray, c: OptConstraints) -> np.ndarray:
    """Project a raw DE vector onto the feasible set.

    Clip negatives, renormalize, then fix the mean by shifting mass between
    the extreme support points (twice). Whatever gap remains is closed by
    mixing in a point mass at ``d_max`` or ``min_degree``, which always
    succeeds because the target lies inside the degree range.
    """
    degs = c.degrees.astype(float)
    w = np.clip(np.asarray(x, dtype=float), 0.0, None)
    if not w.sum() > 0:
        w = np.ones_like(degs)
    w = w / w.sum()
    target = c.target_avg_degree
    if c.avg_degree_is_upper_bound and w @ degs <= target:
        return w
    for _ in range(2):
        w = _shift_mean(w, degs, target)
        w = np.clip(w, 0.0, None)
        w /= w.sum()
    mean = float(w @ degs)
    if abs(mean - target) > MEAN_TOL:
        edge = len(degs) - 1 if mean < target else 0
        alpha = (target - mean) / (degs[edge] - mean)
        w = (1.0 - alpha) * w
        w[edge] += alpha
    w = np.clip(w, 0.0, None)
    return w / w.sum()


def vector_to_distribution(w: np.ndarray, c: OptConstraints) -> DegreeDistribution:
    return DegreeDistribution.normalized({int(d): float(p) for d, p in zip(c.degrees, w) if p > 0})


def evaluate_candidate(dist: DegreeDistribution, ch: ChannelModel, constraints: OptConstraints,
                       de_cfg: DeConfig = DeConfig(),
                       search: ThresholdSearch = ThresholdSearch()) -> float:
    """Decoding threshold of ``dist``; 0 when the search cannot produce one."""
    try:
        return decoding_threshold(dist, ch, constraints.plr_target, de_cfg, search)
    except NumericalDiagnostic as exc:
        log.warning("threshold search failed (%s); fitness 0", exc)
        return 0.0


class _Fitness:
    def __init__(self, ch, constraints, cfg):
        self.ch = ch
        self.c = constraints
        self.cfg = cfg
        self.cache: dict[tuple, float] = {}
        self.evaluations = 0

    def __call__(self, w: np.ndarray) -> float:
        key = tuple(np.round(w / self.cfg.cache_grid).astype(np.int64).tolist())
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        self.evaluations += 1
        val = evaluate_candidate(vector_to_distribution(w, self.c), self.ch, self.c,
                                 self.cfg.de, self.cfg.search)
        self.cache[key] = val
        return val


def _sparse_start(rng: np.random.Generator, dim: int) -> np.ndarray:
    # optimized designs have few support points; always include the lowest degree
    k = int(rng.integers(2, min(4, dim) + 1)) if dim > 1 else 1
    support = np.concatenate([[0], rng.choice(np.arange(1, dim), k - 1, replace=False)]) if k > 1 else [0]
    x = np.zeros(dim)
    x[support] = rng.random(len(support))
    return x


def optimize_distribution(constraints: OptConstraints, ch: ChannelModel,
                          cfg: OptConfig = OptConfig()) -> OptResult:
    """DE/rand/1/bin maximizing the decoding threshold.

    ``history[g]`` is the best threshold after generation ``g`` (entry 0 is
    the initial population). Selection is greedy per slot, so the history is
    nondecreasing. The winner is re-evaluated at ``final_resolution``.
    """
    rng = np.random.default_rng(cfg.seed)
    dim = constraints.d_max - constraints.min_degree + 1
    fitness = _Fitness(ch, constraints, cfg)
    n_pop = cfg.population_size

    pop = np.array([repair(_sparse_start(rng, dim), constraints) for _ in range(n_pop)])
    fit = np.array([fitness(w) for w in pop])
    history = [float(fit.max())]

    if dim > 1:
        for gen in range(cfg.max_generations):
            if cfg.stop_at is not None and history[-1] >= cfg.stop_at:
                break
            # all randomness for the generation is drawn before any evaluation
            trials = np.empty_like(pop)
            f_gen = cfg.mutation_factor + cfg.dither * rng.random()
            for i in range(n_pop):
                r1, r2, r3 = rng.choice(np.delete(np.arange(n_pop), i), 3, replace=False)
                mutant = pop[r1] + f_gen * (pop[r2] - pop[r3])
                cross = rng.random(dim) < cfg.crossover_rate
                cross[rng.integers(dim)] = True
                trials[i] = repair(np.where(cross, mutant, pop[i]), constraints)
            trial_fit = np.array([fitness(w) for w in trials])
            better = trial_fit >= fit
            pop[better] = trials[better]
            fit[better] = trial_fit[better]
            history.append(float(fit.max()))
            if gen % 50 == 0:
                log.info("generation %d: best threshold %.4f (%d evaluations)", gen, history[-1],
                         fitness.evaluations)

    best = vector_to_distribution(pop[int(fit.argmax())], constraints)
    final = evaluate_candidate(best, ch, constraints, cfg.de,
                               replace(cfg.search, resolution=cfg.final_resolution))
    return OptResult(distribution=best, threshold=final, history=history,
                     evaluations=fitness.evaluations)
