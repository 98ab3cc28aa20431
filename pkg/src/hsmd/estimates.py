"""Collision-strength functionals evaluated on event logs.

Per-collision terms measure how strongly a collision deflects the two
velocities, normalized by the conserved mass ``M`` and energy ``E``. Their sums
over a log, divided by ``M*E`` (binary) or ``M**0.5 * E**0.75`` (ternary), are
expected to stay bounded uniformly in the number of particles; the reports
expose these ratios rather than any absolute constant.

Sums use ``math.fsum`` over entries in event order, which is deterministic and
correctly rounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .dynamics import CollisionRecord, Scenario, totals
from .exterior import wedge_norm_sq

DEFAULT_EPSILONS = (0.01, 0.1, 1.0)


class DegenerateScenarioError(ValueError):
    """A normalizing denominator vanishes (E = 0 together with a zero velocity)."""


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


def _sq(x: np.ndarray) -> float:
    return float(np.dot(x, x))


def _wedge_sq(*vectors) -> float:
    """Squared wedge norm; zero when there are more vectors than dimensions."""
    if len(vectors) > len(vectors[0]):
        return 0.0
    return wedge_norm_sq(vectors)


def binary_term(v, v_prime, M: float, E: float) -> float:
    v, vp = _vec(v), _vec(v_prime)
    den = math.sqrt((E + M * _sq(v)) * (E + M * _sq(vp)))
    if not den > 0.0:
        raise DegenerateScenarioError("degenerate scenario: zero denominator in binary term")
    return (E * _sq(vp - v) + M * _wedge_sq(v, vp)) / den


def corollary_term(v, v_prime) -> float:
    """|v ^ v'|^2 / (|v| |v'|), extended by 0 where a speed vanishes."""
    v, vp = _vec(v), _vec(v_prime)
    prod = math.sqrt(_sq(v)) * math.sqrt(_sq(vp))
    if prod == 0.0:
        return 0.0
    w = _wedge_sq(v, vp)
    if w <= 0.0:
        return 0.0
    return w / prod


def ternary_term(v, v1, v_prime, v1_prime, m: float, M: float, E: float) -> float:
    v, v1, vp, v1p = _vec(v), _vec(v1), _vec(v_prime), _vec(v1_prime)
    A = math.sqrt(E * _wedge_sq(vp - v, v1 - v) + M * _wedge_sq(v, vp, v1))
    B = (4.0 * E + M * (_sq(v) + _sq(vp) + _sq(v1) + _sq(v1p))) ** 0.25
    C = ((E + M * _sq(v)) * (E + M * _sq(vp)) * (E + M * _sq(v1)) * (E + M * _sq(v1p))) ** 0.25
    if not C > 0.0:
        raise DegenerateScenarioError("degenerate scenario: zero denominator in ternary term")
    return m**1.5 * A * B / C


def _pairs(r: CollisionRecord):
    return (r.vi, r.vi_out), (r.vj, r.vj_out)


def binary_sum(events: Sequence[CollisionRecord], m: float, M: float, E: float) -> float:
    terms = []
    for r in events:
        for v, vp in _pairs(r):
            terms.append(binary_term(v, vp, M, E))
    return m * m * math.fsum(terms)


def ternary_sum(events: Sequence[CollisionRecord], m: float, M: float, E: float) -> float:
    return math.fsum(ternary_term(r.vi, r.vj, r.vi_out, r.vj_out, m, M, E) for r in events)


class StrongCount(NamedTuple):
    per_pair: int
    per_collision: int
    # sum of corollary_term over the counted pairs; per_pair <= this / (eps * v_typ**2)
    corollary_sum_pairs: float


def strong_collision_count(events: Sequence[CollisionRecord], epsilon: float, M: float, E: float) -> StrongCount:
    """Count collisions with |v ^ v'|^2 >= eps * vtyp^2 * |v| |v'| for some particle.

    Pairs where either speed is zero are never counted: the inequality holds
    trivially there but carries no deflection, and excluding them keeps the
    Markov-type bound on ``per_pair`` exact.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    thresh = epsilon * E / M
    pairs = collisions = 0
    counted = []
    for r in events:
        hit = False
        for v, vp in _pairs(r):
            v, vp = _vec(v), _vec(vp)
            prod = math.sqrt(_sq(v)) * math.sqrt(_sq(vp))
            if prod == 0.0:
                continue
            w = _wedge_sq(v, vp)
            if w >= thresh * prod:
                pairs += 1
                hit = True
                counted.append(corollary_term(v, vp))
        collisions += hit
    return StrongCount(pairs, collisions, math.fsum(counted))


def ternary_strong_count(events: Sequence[CollisionRecord], epsilon: float, A_cap: float,
                         M: float, E: float) -> int:
    """Collisions with |(v'-v) ^ (v1-v)| >= eps vtyp^2 and all four speeds <= A_cap vtyp."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not A_cap > epsilon:
        raise ValueError("A_cap must exceed epsilon")
    vt2 = E / M
    cap2 = A_cap * A_cap * vt2
    count = 0
    for r in events:
        v, v1, vp, v1p = _vec(r.vi), _vec(r.vj), _vec(r.vi_out), _vec(r.vj_out)
        if max(_sq(v), _sq(v1), _sq(vp), _sq(v1p)) > cap2:
            continue
        if math.sqrt(_wedge_sq(vp - v, v1 - v)) >= epsilon * vt2:
            count += 1
    return count


@dataclass
class CollisionTerms:
    k: int
    binary_i: float
    binary_j: float
    corollary_i: float
    corollary_j: float
    ternary: float | None


@dataclass
class EstimateReport:
    n: int
    N: int
    m: float
    M: float
    E: float
    v_typ: float
    per_collision: list[CollisionTerms]
    binary_sum: float
    corollary_sum: float
    ternary_sum: float | None
    binary_ratio: float | None
    ternary_ratio: float | None
    strong_counts: dict[float, StrongCount] = field(default_factory=dict)
    ternary_strong_counts: dict[float, int] = field(default_factory=dict)

    def summary(self) -> dict:
        """Flat scalar view used by the CLI."""
        out = {
            "n": self.n, "N": self.N, "events": len(self.per_collision), "m": self.m, "M": self.M,
            "E": self.E, "v_typ": self.v_typ, "binary_sum": self.binary_sum,
            "corollary_sum": self.corollary_sum, "ternary_sum": self.ternary_sum,
            "binary_ratio": self.binary_ratio, "ternary_ratio": self.ternary_ratio,
        }
        for eps, c in self.strong_counts.items():
            out[f"strong_pairs[{eps:g}]"] = c.per_pair
            out[f"strong_collisions[{eps:g}]"] = c.per_collision
        for eps, c in self.ternary_strong_counts.items():
            out[f"ternary_strong[{eps:g}]"] = c
        return out


def report_from_totals(events: Sequence[CollisionRecord], n: int, N: int, m: float, M: float, E: float,
                       epsilons: Sequence[float] = DEFAULT_EPSILONS, A_cap: float = 10.0) -> EstimateReport:
    """Build a report from scenario scalars (e.g. a log's meta line)."""
    has_energy = E > 0
    ternary = n >= 2
    rows = []
    for r in events:
        rows.append(CollisionTerms(
            k=r.k,
            binary_i=binary_term(r.vi, r.vi_out, M, E),
            binary_j=binary_term(r.vj, r.vj_out, M, E),
            corollary_i=corollary_term(r.vi, r.vi_out),
            corollary_j=corollary_term(r.vj, r.vj_out),
            ternary=ternary_term(r.vi, r.vj, r.vi_out, r.vj_out, m, M, E) if ternary else None,
        ))
    b = m * m * math.fsum(x for row in rows for x in (row.binary_i, row.binary_j))
    c = m * m * math.fsum(x for row in rows for x in (row.corollary_i, row.corollary_j))
    t = math.fsum(row.ternary for row in rows) if ternary else None
    rep = EstimateReport(
        n=n, N=N, m=m, M=M, E=E, v_typ=math.sqrt(E / M),
        per_collision=rows, binary_sum=b, corollary_sum=c, ternary_sum=t,
        binary_ratio=b / (M * E) if has_energy else None,
        ternary_ratio=t / (math.sqrt(M) * E**0.75) if (has_energy and ternary) else None,
    )
    if has_energy:
        for eps in epsilons:
            rep.strong_counts[eps] = strong_collision_count(events, eps, M, E)
            if ternary and A_cap > eps:
                rep.ternary_strong_counts[eps] = ternary_strong_count(events, eps, A_cap, M, E)
    return rep


def build_report(events: Sequence[CollisionRecord], scenario: Scenario,
                 epsilons: Sequence[float] = DEFAULT_EPSILONS, A_cap: float = 10.0) -> EstimateReport:
    M, E, _ = totals(scenario.particles, scenario.mass)
    return report_from_totals(events, scenario.n, scenario.N, scenario.mass, M, E, epsilons, A_cap)
