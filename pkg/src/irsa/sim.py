"""Finite-frame Monte Carlo simulation of IRSA with a capture-enabled SIC receiver."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence, TextIO

import numpy as np

from . import _kernels as K
from .capture import ChannelModel
from .degree import DegreeDistribution

THREADS_ENV = "IRSA_THREADS"


class Termination(Enum):
    SUCCESS = K.SUCCESS
    STALLED = K.STALLED
    MAX_ITERS = K.MAX_ITERS


@dataclass(frozen=True)
class FrameRealization:
    """One MAC frame: replica slots and SNRs for every user.

    Replicas are stored flat; user ``u`` owns ``slots[user_ptr[u]:user_ptr[u+1]]``
    and the matching ``snr`` entries (linear).
    """

    n_slots: int
    user_ptr: np.ndarray
    slots: np.ndarray
    snr: np.ndarray

    @classmethod
    def from_users(cls, n_slots: int, users: Sequence[tuple[Sequence[int], Sequence[float]]]):
        ptr = np.zeros(len(users) + 1, dtype=np.int64)
        slots, snrs = [], []
        for u, (s, b) in enumerate(users):
            if len(s) != len(b) or len(s) == 0:
                raise ValueError(f"user {u} needs one SNR per replica and at least one replica")
            if len(set(s)) != len(s):
                raise ValueError(f"user {u} has repeated slots {list(s)}")
            ptr[u + 1] = ptr[u] + len(s)
            slots.extend(int(x) for x in s)
            snrs.extend(float(x) for x in b)
        frame = cls(n_slots, ptr, np.array(slots, dtype=np.int64), np.array(snrs, dtype=np.float64))
        frame.validate()
        return frame

    @property
    def n_users(self) -> int:
        return len(self.user_ptr) - 1

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.user_ptr)

    @property
    def users(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.slots[a:b], self.snr[a:b]) for a, b in zip(self.user_ptr[:-1], self.user_ptr[1:])]

    def slot_degrees(self) -> np.ndarray:
        return np.bincount(self.slots, minlength=self.n_slots)

    def validate(self) -> None:
        if self.n_slots < 1:
            raise ValueError("frame needs at least one slot")
        if np.any(self.degrees < 1):
            raise ValueError("every user needs at least one replica")
        if self.slots.size and (self.slots.min() < 0 or self.slots.max() >= self.n_slots):
            raise ValueError("slot index out of range")
        if np.any(self.snr <= 0):
            raise ValueError("SNRs must be positive")
        for s, _ in self.users:
            if np.unique(s).size != s.size:
                raise ValueError("a user has two replicas in one slot")


@dataclass(frozen=True)
class SimConfig:
    n_slots: int
    channel: ChannelModel
    n_frames: int = 1000
    load: float | None = None
    n_users: int | None = None
    max_sic_iterations: int = 20
    seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        if self.n_slots < 1 or self.n_frames < 1 or self.max_sic_iterations < 1:
            raise ValueError("n_slots, n_frames and max_sic_iterations must be positive")
        if (self.load is None) == (self.n_users is None):
            raise ValueError("give exactly one of load or n_users")
        if self.load is not None and self.load < 0:
            raise ValueError("load must be nonnegative")
        if self.n_users is not None and self.n_users < 0:
            raise ValueError("n_users must be nonnegative")

    @property
    def users_per_frame(self) -> int:
        if self.n_users is not None:
            return self.n_users
        return int(round(self.load * self.n_slots))

    @property
    def effective_load(self) -> float:
        return self.users_per_frame / self.n_slots


@dataclass(frozen=True)
class DecodeResult:
    decoded: np.ndarray
    iterations: int
    termination: Termination
    first_pass_degree: np.ndarray = field(repr=False)
    first_pass_decoded: np.ndarray = field(repr=False)

    @property
    def n_decoded(self) -> int:
        return int(self.decoded.sum())


@dataclass(frozen=True)
class SimStats:
    load: float
    n_slots: int
    n_frames: int
    n_users: int
    decoded_per_frame: np.ndarray = field(repr=False)
    iterations_per_frame: np.ndarray = field(repr=False)
    probe_lost: int = 0
    probe_offered: int = 0

    @property
    def throughput(self) -> float:
        return float(self.decoded_per_frame.sum()) / (self.n_slots * self.n_frames)

    @property
    def throughput_stderr(self) -> float:
        return _stderr(self.decoded_per_frame / self.n_slots)

    @property
    def plr(self) -> float:
        if self.n_users == 0:
            return self.probe_lost / self.probe_offered if self.probe_offered else math.nan
        return 1.0 - float(self.decoded_per_frame.sum()) / (self.n_users * self.n_frames)

    @property
    def plr_stderr(self) -> float:
        if self.n_users == 0:
            if not self.probe_offered:
                return math.nan
            p = self.plr
            return math.sqrt(p * (1 - p) / self.probe_offered)
        return _stderr(1.0 - self.decoded_per_frame / self.n_users)

    @property
    def avg_sic_iterations(self) -> float:
        return float(self.iterations_per_frame.mean())

    def row(self) -> dict:
        return {
            "load": self.load,
            "n_slots": self.n_slots,
            "n_frames": self.n_frames,
            "throughput": self.throughput,
            "throughput_stderr": self.throughput_stderr,
            "plr": self.plr,
            "plr_stderr": self.plr_stderr,
            "avg_sic_iterations": self.avg_sic_iterations,
        }


CSV_COLUMNS = ["load", "n_slots", "n_frames", "throughput", "throughput_stderr",
               "plr", "plr_stderr", "avg_sic_iterations"]


def _stderr(x: np.ndarray) -> float:
    if x.size < 2:
        return math.nan
    return float(x.std(ddof=1) / math.sqrt(x.size))


def frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    """Per-frame stream; independent of how frames are split across workers."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(frame_index)]))


def generate_frame(n_slots: int, n_users: int, dist: DegreeDistribution, ch: ChannelModel,
                   rng: np.random.Generator) -> FrameRealization:
    """Draw one frame.

    Each user samples a degree from ``dist``, picks that many distinct slots
    uniformly at random, and gets an independent exponential SNR per replica.
    """
    if dist.min_degree < 1:
        raise ValueError("users must send at least one replica")
    if dist.max_degree > n_slots:
        raise ValueError(f"degree {dist.max_degree} exceeds frame size {n_slots}")
    cdf = np.cumsum(dist.weights)
    idx = np.searchsorted(cdf, rng.random(n_users) * cdf[-1], side="right")
    degrees = dist.degrees[np.minimum(idx, cdf.size - 1)]
    ptr = np.zeros(n_users + 1, dtype=np.int64)
    np.cumsum(degrees, out=ptr[1:])
    total = int(ptr[-1])
    slots = K.floyd_slots(degrees.astype(np.int64), rng.random(total), n_slots)
    snr = rng.exponential(ch.avg_snr_linear, size=total)
    return FrameRealization(n_slots, ptr, slots, snr)


def decode_frame(frame: FrameRealization, ch: ChannelModel, max_iters: int = 20) -> DecodeResult:
    """Run the SIC receiver on ``frame``; deterministic, no randomness."""
    decoded, iters, cause, deg, dec = K.sic_decode(
        frame.n_slots, frame.user_ptr, frame.slots, frame.snr, ch.threshold_linear, max_iters)
    return DecodeResult(decoded, int(iters), Termination(int(cause)), deg, dec)


def _run_frames(args):
    cfg, dist, start, stop, n_users = args
    ch = cfg.channel
    b = ch.threshold_linear
    decoded = np.empty(stop - start, dtype=np.int64)
    iters = np.empty(stop - start, dtype=np.int64)
    for i, f in enumerate(range(start, stop)):
        frame = generate_frame(cfg.n_slots, n_users, dist, ch, frame_rng(cfg.seed, f))
        dec, it, _, _, _ = K.sic_decode(frame.n_slots, frame.user_ptr, frame.slots, frame.snr,
                                        b, cfg.max_sic_iterations)
        decoded[i] = dec.sum()
        iters[i] = it
    return decoded, iters


def _workers(cfg: SimConfig) -> int:
    if cfg.workers is not None:
        return max(1, cfg.workers)
    return max(1, int(os.environ.get(THREADS_ENV, "1")))


def _map_frames(cfg, dist, n_users):
    workers = _workers(cfg)
    n = cfg.n_frames
    if workers == 1 or n < 2 * workers:
        return _run_frames((cfg, dist, 0, n, n_users))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    jobs = [(cfg, dist, int(a), int(b), n_users) for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_run_frames, jobs))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def run_simulation(cfg: SimConfig, dist: DegreeDistribution) -> SimStats:
    """Aggregate ``cfg.n_frames`` independent frames.

    At zero users the throughput is exactly 0 and the PLR is estimated from
    single-user frames instead (the small-load limit), since there is
    nothing to lose otherwise.
    """
    m = cfg.users_per_frame
    decoded, iters = _map_frames(cfg, dist, m)
    lost = offered = 0
    if m == 0:
        probe, _ = _map_frames(cfg, dist, 1)
        offered = int(probe.size)
        lost = offered - int(probe.sum())
    return SimStats(load=cfg.effective_load, n_slots=cfg.n_slots, n_frames=cfg.n_frames, n_users=m,
                    decoded_per_frame=decoded, iterations_per_frame=iters,
                    probe_lost=lost, probe_offered=offered)


def load_sweep(cfg: SimConfig, dist: DegreeDistribution, loads: Iterable[float]) -> list[SimStats]:
    """One :class:`SimStats` per load, in input order; ``cfg.load`` is overridden."""
    out = []
    for g in loads:
        out.append(run_simulation(replace(cfg, load=float(g), n_users=None), dist))
    return out


def write_sweep_csv(rows: Iterable[SimStats], fh: TextIO) -> None:
    w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for s in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in s.row().items()})
