"""Asymptotic density evolution, packet loss rate, and decoding threshold.

Erasure probabilities on the frame graph evolve as

    q_i = f_b(p_{i-1})    (burst node -> slot node)
    p_i = f_s(q_i)        (slot node -> burst node)

starting from ``p_0 = f_s(1)``. The slot update uses the closed-form series
over intra-slot decoding steps, valid for Poisson slot degrees.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _kernels as K
from .capture import ChannelModel, capture_prob_table
from .degree import DegreeDistribution, EdgeDistribution, poisson_slot_edge_dist, to_edge_perspective

log = logging.getLogger(__name__)


class NumericalDiagnostic(RuntimeError):
    """A numerical procedure could not produce a trustworthy answer."""


class SeriesTruncationError(NumericalDiagnostic):
    pass


class MonotonicityError(NumericalDiagnostic):
    pass


@dataclass(frozen=True)
class DeConfig:
    max_iterations: int = 10_000
    convergence_eps: float = 1e-12
    series_term_tol: float = 1e-15
    series_max_terms: int = 256

    def __post_init__(self):
        if self.max_iterations <= 0 or self.series_max_terms <= 0:
            raise ValueError("iteration and term limits must be positive")
        if not (self.convergence_eps > 0 and self.series_term_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class DeResult:
    p_inf: float
    plr: float
    iterations_used: int
    converged: bool


@dataclass(frozen=True)
class ThresholdSearch:
    """Load bracket and resolution for the threshold search.

    ``coarse_step`` sets the pre-scan used to bracket the waterfall and to
    check that the PLR does not come back below target at higher loads.
    """

    g_lo: float = 0.0
    g_hi: float = 5.0
    resolution: float = 1e-3
    coarse_step: float = 0.05

    def __post_init__(self):
        if not (0.0 <= self.g_lo < self.g_hi):
            raise ValueError("need 0 <= g_lo < g_hi")
        if not (self.resolution > 0 and self.coarse_step > 0):
            raise ValueError("resolution and coarse_step must be positive")


DEFAULT_CONFIG = DeConfig()


def _check_status(status: int, what: str) -> None:
    if status == K.SERIES_TRUNCATED:
        raise SeriesTruncationError(f"{what}: series did not reach term tolerance within the term limit")
    if status == K.NOT_MONOTONE:
        raise MonotonicityError(f"{what}: DE sequence increased between iterations")


def f_b(p: float, lambda_edge: EdgeDistribution) -> float:
    """Burst-node update: sum_d lambda_d p^(d-1)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    return float(K.fb_value(float(p), lambda_edge.degrees, lambda_edge.weights))


def f_s(q: float, offered: float, ch: ChannelModel, cfg: DeConfig = DEFAULT_CONFIG) -> float:
    """Slot-node update for Poisson slot degrees with mean ``offered`` = G/R.

    ``1 - sum_t (a q)^(t-1) z_t^(-(t-1)/2) exp(-(z_t - 1)(1/B + a q / z_t))``
    with ``z_t = (1+b)^t``.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    if offered < 0.0:
        raise ValueError(f"offered load must be nonnegative, got {offered}")
    p, status = K.fs_value(offered * q, 1.0 / ch.avg_snr_linear, math.log1p(ch.threshold_linear),
                           cfg.series_term_tol, cfg.series_max_terms)
    _check_status(status, "f_s")
    return float(p)


def f_s_reference(q: float, offered: float, ch: ChannelModel, truncation: int | None = None) -> float:
    """Slot update as the unsimplified double sum over slot degree and reduced degree.

    ``1 - sum_c rho_c sum_{r<=c} D(r) Binom(r-1; c-1, q)``. Slow; a
    cross-check for :func:`f_s` only.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    if offered < 0.0:
        raise ValueError(f"offered load must be nonnegative, got {offered}")
    if offered == 0.0:
        rho = EdgeDistribution({1: 1.0})
    else:
        rho = poisson_slot_edge_dist(offered, truncation)
    c_max = rho.max_degree
    D = capture_prob_table(c_max, ch)
    acc = []
    for c, rc in rho.probs.items():
        r = np.arange(1, c + 1)
        w = stats.binom.pmf(r - 1, c - 1, q)
        acc.append(rc * math.fsum((D[r - 1] * w).tolist()))
    return min(1.0, max(0.0, 1.0 - math.fsum(acc)))


def _arrays(dist: DegreeDistribution):
    lam = to_edge_perspective(dist)
    if lam.min_degree < 1 or dist.min_degree < 1:
        raise ValueError("burst degree distribution must have min degree >= 1")
    return dist.degrees, lam.weights, dist.weights


def plr_from_p(dist: DegreeDistribution, p: float) -> float:
    return float(K.plr_value(float(p), dist.degrees, dist.weights))


def zero_load_plr(dist: DegreeDistribution, ch: ChannelModel) -> float:
    """PLR as load -> 0: every replica sits alone, lost with prob 1 - D(1)."""
    e = -math.expm1(-ch.threshold_linear / ch.avg_snr_linear)
    return math.fsum(p * e ** d for d, p in dist.probs.items())


def de_fixed_point(dist: DegreeDistribution, load: float, ch: ChannelModel,
                   cfg: DeConfig = DEFAULT_CONFIG) -> DeResult:
    """Run the p-recursion at system load ``load`` (users per slot)."""
    if load < 0.0:
        raise ValueError(f"load must be nonnegative, got {load}")
    degs, lam, node = _arrays(dist)
    offered = load * dist.avg_degree()
    p, iters, conv, status, _ = K.fixed_point(
        degs, lam, node, offered, 1.0 / ch.avg_snr_linear, math.log1p(ch.threshold_linear),
        cfg.series_term_tol, cfg.series_max_terms, cfg.max_iterations, cfg.convergence_eps, -1.0)
    _check_status(status, f"DE at load {load}")
    if not conv:
        log.debug("DE at load %.6g did not converge in %d iterations", load, iters)
    return DeResult(p_inf=float(p), plr=plr_from_p(dist, p), iterations_used=int(iters), converged=bool(conv))


class _PlrOracle:
    """Decides ``PLR(load) < target`` with the early exit enabled."""

    def __init__(self, dist, ch, target, cfg):
        self.degs, self.lam, self.node = _arrays(dist)
        self.avg = dist.avg_degree()
        self.inv_snr = 1.0 / ch.avg_snr_linear
        self.lb = math.log1p(ch.threshold_linear)
        self.target = target
        self.cfg = cfg

    def meets(self, load: float) -> bool:
        cfg = self.cfg
        p, iters, conv, status, early = K.fixed_point(
            self.degs, self.lam, self.node, load * self.avg, self.inv_snr, self.lb,
            cfg.series_term_tol, cfg.series_max_terms, cfg.max_iterations, cfg.convergence_eps,
            self.target)
        _check_status(status, f"DE at load {load}")
        if early:
            return True
        # p_i is an upper bound on the limit, so an unconverged run only errs low
        return K.plr_value(p, self.degs, self.node) < self.target


def decoding_threshold(dist: DegreeDistribution, ch: ChannelModel, plr_target: float = 1e-2,
                       cfg: DeConfig = DEFAULT_CONFIG,
                       search: ThresholdSearch = ThresholdSearch()) -> float:
    """Largest load (within ``search.resolution``) whose asymptotic PLR is below target.

    A coarse scan over ``[g_lo, g_hi]`` brackets the waterfall, then the
    bracket is bisected. Returns 0.0 when even ``g_lo`` misses the target
    (the channel alone loses too many singleton replicas). Raises
    :class:`MonotonicityError` if the scan finds the target met again above
    a load where it was missed.
    """
    if not 0.0 < plr_target < 1.0:
        raise ValueError("plr_target must be in (0, 1)")
    oracle = _PlrOracle(dist, ch, plr_target, cfg)
    if not oracle.meets(search.g_lo):
        log.warning("PLR at load %g already >= target %g (zero-load floor %.3g); threshold is 0",
                    search.g_lo, plr_target, zero_load_plr(dist, ch))
        return 0.0

    n_steps = int(math.ceil((search.g_hi - search.g_lo) / search.coarse_step - 1e-9))
    grid = [min(search.g_lo + k * search.coarse_step, search.g_hi) for k in range(n_steps + 1)]
    lo, hi = grid[0], None
    for g in grid[1:]:
        ok = oracle.meets(g)
        if hi is None:
            if ok:
                lo = g
            else:
                hi = g
        elif ok:
            raise MonotonicityError(
                f"PLR below target at load {g} after missing it at {hi}; threshold is ambiguous")
    if hi is None:
        log.warning("target met over the whole scan; threshold >= g_hi=%g", search.g_hi)
        return search.g_hi

    while hi - lo > search.resolution:
        mid = 0.5 * (lo + hi)
        if oracle.meets(mid):
            lo = mid
        else:
            hi = mid
    return lo
