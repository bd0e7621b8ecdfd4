"""Capture probabilities for intra-slot SIC over Rayleigh block fading.

A replica is decoded when ``snr / (1 + sum of the other residual snrs)``
reaches the capture threshold. With a threshold of at least 1 only one
replica can qualify at a time, so decoding inside a slot is a sequence of
single captures.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

# exp(-x) underflows to 0 for x beyond this
_EXP_LIMIT = 700.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class ChannelModel:
    """Average SNR and capture threshold, both as linear power ratios."""

    avg_snr_linear: float
    threshold_linear: float

    def __post_init__(self):
        if not self.avg_snr_linear > 0.0:
            raise ValueError(f"average SNR must be positive, got {self.avg_snr_linear}")
        if not self.threshold_linear >= 1.0:
            raise ValueError(f"capture threshold must be >= 1 (0 dB), got {self.threshold_linear}")

    @classmethod
    def from_db(cls, snr_db: float, threshold_db: float) -> "ChannelModel":
        return cls(db_to_linear(snr_db), db_to_linear(threshold_db))

    @property
    def snr_db(self) -> float:
        return linear_to_db(self.avg_snr_linear)

    @property
    def threshold_db(self) -> float:
        return linear_to_db(self.threshold_linear)


def log_capture_step_prob(r: int, t: int, ch: ChannelModel) -> float:
    if not 1 <= t <= r:
        raise ValueError(f"need 1 <= t <= r, got r={r}, t={t}")
    lb = math.log1p(ch.threshold_linear)
    if t * lb > _EXP_LIMIT:
        return -math.inf
    z = math.exp(t * lb)
    return (
        math.lgamma(r)
        - math.lgamma(r - t + 1)
        - (z - 1.0) / ch.avg_snr_linear
        - t * (r - (t + 1) / 2.0) * lb
    )


def capture_step_prob(r: int, t: int, ch: ChannelModel) -> float:
    """Probability that a reference replica among ``r`` is decoded at step ``t``.

    Evaluated in the log domain; factorial ratios and ``(1+b)^t`` overflow
    long before the probability itself stops being representable.
    """
    lp = log_capture_step_prob(r, t, ch)
    return 0.0 if lp < -_EXP_LIMIT else min(1.0, math.exp(lp))


def capture_prob(r: int, ch: ChannelModel) -> float:
    """D(r): the reference replica among ``r`` is eventually decoded by intra-slot SIC."""
    if r < 1:
        raise ValueError(f"slot degree must be >= 1, got {r}")
    return min(1.0, math.fsum(capture_step_prob(r, t, ch) for t in range(1, r + 1)))


def capture_prob_table(r_max: int, ch: ChannelModel) -> np.ndarray:
    """Array ``D`` with ``D[r-1] = capture_prob(r)`` for ``r = 1..r_max``."""
    return np.array([capture_prob(r, ch) for r in range(1, r_max + 1)])


@dataclass(frozen=True)
class OracleEstimate:
    r: int
    samples: int
    estimates: np.ndarray  # index t-1 -> empirical D(r, t)
    stderr: np.ndarray

    @property
    def total(self) -> float:
        return float(self.estimates.sum())

    @property
    def total_stderr(self) -> float:
        p = self.total
        return math.sqrt(p * (1.0 - p) / self.samples)

    def rows(self) -> Iterable[tuple[int, int, float, float]]:
        for t in range(1, self.r + 1):
            yield self.r, t, float(self.estimates[t - 1]), float(self.stderr[t - 1])


def capture_oracle(r: int, ch: ChannelModel, samples: int, seed=None,
                   chunk: int = 250_000) -> OracleEstimate:
    """Monte Carlo estimate of D(r, t) for t = 1..r by direct SIC simulation.

    Each sample draws ``r`` i.i.d. exponential SNRs, tags a uniformly chosen
    reference replica, and runs intra-slot SIC: any replica meeting the
    threshold is decoded and cancelled, until none qualifies.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    b = ch.threshold_linear
    counts = np.zeros(r + 1, dtype=np.int64)  # counts[t] for t=1..r
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        snr = rng.exponential(ch.avg_snr_linear, size=(k, r))
        ref = rng.integers(0, r, size=k)
        alive = np.ones((k, r), dtype=bool)
        step = np.zeros(k, dtype=np.int64)
        rows = np.arange(k)
        for s in range(1, r + 1):
            live = np.where(alive, snr, 0.0)
            interference = live.sum(axis=1, keepdims=True) - live
            ok = alive & (snr >= b * (1.0 + interference))
            n_ok = ok.sum(axis=1)
            if n_ok.max(initial=0) > 1:
                raise AssertionError("more than one replica met the capture threshold at once")
            hit = n_ok == 1
            if not hit.any():
                break
            idx = ok.argmax(axis=1)
            step[hit & (idx == ref) & (step == 0)] = s
            alive[rows[hit], idx[hit]] = False
        counts += np.bincount(step, minlength=r + 1)
        done += k
    est = counts[1:] / samples
    se = np.sqrt(est * (1.0 - est) / samples)
    return OracleEstimate(r=r, samples=samples, estimates=est, stderr=se)


def write_oracle_csv(results: Iterable[OracleEstimate], fh: TextIO) -> None:
    w = csv.writer(fh)
    w.writerow(["r", "t", "estimate", "stderr"])
    for res in results:
        for row in res.rows():
            w.writerow(row)
