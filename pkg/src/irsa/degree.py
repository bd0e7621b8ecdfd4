"""Node- and edge-perspective degree distributions.

Distributions are stored sparsely as ``{degree: probability}``; optimized
designs have only a handful of support points.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)

SUM_TOL = 1e-12
PARSE_SUM_TOL = 1e-6
POISSON_TAIL = 1e-12

# Designs for avg SNR 20 dB, capture threshold 3 dB, target PLR 1e-2.
KNOWN_DISTRIBUTIONS = {
    "L1": "0.59 x^2 + 0.27 x^3 + 0.02 x^5 + 0.12 x^16",
    "L2": "0.61 x^2 + 0.25 x^3 + 0.03 x^6 + 0.02 x^7 + 0.07 x^8 + 0.02 x^10",
    "L3": "0.66 x^2 + 0.16 x^3 + 0.18 x^4",
    "L4": "0.65 x^2 + 0.33 x^3 + 0.02 x^4",
    "L5": "0.49 x^2 + 0.25 x^3 + 0.01 x^4 + 0.03 x^5 + 0.13 x^6 + 0.01 x^13 + 0.02 x^14 + 0.06 x^16",
}


def _freeze(probs: Mapping[int, float]) -> Mapping[int, float]:
    items = []
    for d, p in probs.items():
        if isinstance(d, bool) or int(d) != d:
            raise ValueError(f"degree must be an integer, got {d!r}")
        p = float(p)
        if not math.isfinite(p) or p < 0.0:
            raise ValueError(f"probability for degree {d} must be finite and nonnegative, got {p}")
        if int(d) < 0:
            raise ValueError(f"degree must be nonnegative, got {d}")
        if p > 0.0:
            items.append((int(d), p))
    if not items:
        raise ValueError("distribution has no mass")
    total = math.fsum(p for _, p in items)
    if abs(total - 1.0) > SUM_TOL:
        raise ValueError(f"probabilities sum to {total!r}, not 1")
    return MappingProxyType(dict(sorted(items)))


@dataclass(frozen=True)
class _Pmf:
    probs: Mapping[int, float]
    _degrees: np.ndarray = field(init=False, repr=False, compare=False)
    _weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        probs = _freeze(self.probs)
        object.__setattr__(self, "probs", probs)
        degs = np.fromiter(probs.keys(), dtype=np.int64)
        w = np.fromiter(probs.values(), dtype=np.float64)
        degs.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "_degrees", degs)
        object.__setattr__(self, "_weights", w)

    def __hash__(self):
        return hash(tuple(self.probs.items()))

    def __reduce__(self):
        # mappingproxy does not pickle; rebuild from a plain dict
        return (type(self), (dict(self.probs),))

    @classmethod
    def normalized(cls, probs: Mapping[int, float]):
        """Build from unnormalized nonnegative weights."""
        total = math.fsum(float(p) for p in probs.values())
        if not total > 0.0:
            raise ValueError("weights must have positive total")
        return cls({d: float(p) / total for d, p in probs.items()})

    @property
    def degrees(self) -> np.ndarray:
        return self._degrees

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def min_degree(self) -> int:
        return int(self._degrees[0])

    @property
    def max_degree(self) -> int:
        return int(self._degrees[-1])

    def pmf(self, d: int) -> float:
        return self.probs.get(d, 0.0)

    def mean(self) -> float:
        return math.fsum(d * p for d, p in self.probs.items())

    def to_json(self) -> str:
        return json.dumps({"dist": {str(d): p for d, p in self.probs.items()}})

    @classmethod
    def from_json(cls, text: str):
        data = json.loads(text)
        return cls({int(d): float(p) for d, p in data["dist"].items()})


class DegreeDistribution(_Pmf):
    """Node-perspective degree pmf ``{Lambda_d}``.

    Burst-side designs live on degrees >= 2, but the algebra accepts any
    nonnegative degree so that slot-side pmfs (which include empty slots)
    share the type.
    """

    def avg_degree(self) -> float:
        avg = self.mean()
        if avg <= 0.0:
            raise ValueError("average degree must be positive")
        return avg

    def rate(self) -> float:
        return 1.0 / self.avg_degree()


class EdgeDistribution(_Pmf):
    """Edge-perspective degree pmf (``lambda_d`` or ``rho_c``)."""

    def to_node_perspective(self) -> DegreeDistribution:
        if self.min_degree < 1:
            raise ValueError("degree-0 nodes carry no edges")
        return DegreeDistribution.normalized({d: p / d for d, p in self.probs.items()})


def to_edge_perspective(dist: DegreeDistribution) -> EdgeDistribution:
    """lambda_d = d Lambda_d / avg_degree."""
    avg = dist.avg_degree()
    return EdgeDistribution({d: d * p / avg for d, p in dist.probs.items() if d > 0})


def poisson_slot_edge_dist(offered: float, c_max: int | None = None) -> EdgeDistribution:
    """Edge-perspective slot degree pmf in the large-frame limit.

    ``rho_c = exp(-a) a^(c-1) / (c-1)!`` with ``a = G/R`` the mean number of
    replicas per slot. Truncated where the tail falls below ``1e-12`` and
    renormalized. An explicit ``c_max`` that leaves a larger tail raises.
    """
    if not offered > 0.0:
        raise ValueError(f"offered load G/R must be positive, got {offered}")
    if c_max is None:
        c_max = 1
        while stats.poisson.sf(c_max - 1, offered) >= POISSON_TAIL:
            c_max += 1
    elif stats.poisson.sf(c_max - 1, offered) >= POISSON_TAIL:
        raise ValueError(f"c_max={c_max} leaves tail mass >= {POISSON_TAIL} at offered={offered}")
    c = np.arange(1, c_max + 1)
    rho = stats.poisson.pmf(c - 1, offered)
    return EdgeDistribution.normalized(dict(zip(c.tolist(), rho.tolist())))


def binomial_slot_dist(m: int, n: int, dist: DegreeDistribution) -> DegreeDistribution:
    """Node-perspective slot degree pmf for ``m`` users over ``n`` slots.

    Each user lands a replica in a given slot with probability ``avg_degree/n``,
    so the slot degree is Binomial(m, avg_degree/n). Degree 0 (empty slot) is
    part of the support.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    p = dist.avg_degree() / n
    if p > 1.0:
        raise ValueError(f"average degree {dist.avg_degree()} exceeds frame size {n}")
    c = np.arange(0, m + 1)
    pc = stats.binom.pmf(c, m, p)
    return DegreeDistribution.normalized(dict(zip(c.tolist(), pc.tolist())))


_TERM = re.compile(
    r"""^\s*
    (?P<coef>[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)?
    \s*\*?\s*
    (?:(?P<x>x)(?:\s*\^\s*(?P<exp>[0-9]+))?)?
    \s*$""",
    re.VERBOSE,
)


def parse_polynomial(text: str, tol: float = PARSE_SUM_TOL) -> DegreeDistribution:
    """Parse ``"0.59 x^2 + 0.27 x^3 + ..."`` into a distribution.

    Coefficients that sum to 1 within ``tol`` are renormalized to sum exactly
    to 1; the adjustment is logged at debug level.
    """
    if not text or not text.strip():
        raise ValueError("empty polynomial")
    if re.search(r"-", text.replace("e-", "e")):
        raise ValueError(f"negative coefficient in {text!r}")
    probs: dict[int, float] = {}
    for raw in text.split("+"):
        m = _TERM.match(raw)
        if m is None or (m.group("coef") is None and m.group("x") is None):
            raise ValueError(f"malformed term {raw.strip()!r} in {text!r}")
        coef = float(m.group("coef")) if m.group("coef") is not None else 1.0
        if m.group("x") is None:
            deg = 0
        else:
            deg = int(m.group("exp")) if m.group("exp") is not None else 1
        if deg in probs:
            raise ValueError(f"degree {deg} appears twice in {text!r}")
        probs[deg] = coef
    total = math.fsum(probs.values())
    if abs(total - 1.0) > tol:
        raise ValueError(f"coefficients sum to {total}, expected 1 within {tol}")
    if total != 1.0:
        log.debug("renormalized polynomial %r by %+.3e", text, total - 1.0)
    return DegreeDistribution.normalized(probs)


def format_polynomial(dist: _Pmf, digits: int = 12) -> str:
    terms = []
    for d, p in dist.probs.items():
        coef = f"{p:.{digits}g}"
        if d == 0:
            terms.append(coef)
            continue
        mono = "x" if d == 1 else f"x^{d}"
        terms.append(mono if coef == "1" else f"{coef} {mono}")
    return " + ".join(terms)


def known_distribution(name: str) -> DegreeDistribution:
    return parse_polynomial(KNOWN_DISTRIBUTIONS[name])


def resolve_distribution(spec: str) -> DegreeDistribution:
    """Accept a known design name (``L1``..``L5``), JSON, or polynomial text."""
    spec = spec.strip()
    if spec in KNOWN_DISTRIBUTIONS:
        return known_distribution(spec)
    if spec.startswith("{"):
        return DegreeDistribution.from_json(spec)
    return parse_polynomial(spec)
