"""Hard-sphere particles, binary collision laws and the event-driven engine.

Particles are identical (shared mass ``m`` and radius ``a``) and move freely
in R^n between binary collisions. The engine keeps one reference time per
particle and advances positions lazily; predicted collisions sit in a binary
heap keyed by ``(t, i, j)`` with ``i < j`` and are invalidated through
per-particle version counters.
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

# Relative tolerance on the contact distance 2a.
CONTACT_TOL = 1e-9


class OverlapError(ValueError):
    pass


class GrazingContactError(ValueError):
    """The pair is not strictly approaching along the contact normal."""


@dataclass(frozen=True)
class CollisionModel:
    kind: str = "elastic"
    r: float = 1.0

    def __post_init__(self):
        if self.kind not in ("elastic", "sticky", "restitution"):
            raise ValueError(f"unknown collision model {self.kind!r}")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("restitution coefficient must lie in [0, 1]")

    @classmethod
    def elastic(cls) -> "CollisionModel":
        return cls("elastic", 1.0)

    @classmethod
    def sticky(cls) -> "CollisionModel":
        return cls("sticky", 0.0)

    @classmethod
    def restitution(cls, r: float) -> "CollisionModel":
        return cls("restitution", float(r))

    @property
    def coefficient(self) -> float:
        if self.kind == "elastic":
            return 1.0
        if self.kind == "sticky":
            return 0.0
        return self.r

    def to_json(self) -> dict:
        if self.kind == "restitution":
            return {"type": "restitution", "r": self.r}
        return {"type": self.kind}

    @classmethod
    def from_json(cls, obj: dict) -> "CollisionModel":
        kind = obj["type"]
        if kind == "restitution":
            return cls.restitution(obj["r"])
        return cls(kind, 1.0 if kind == "elastic" else 0.0)


@dataclass
class Particle:
    id: int
    y: np.ndarray
    v: np.ndarray
    eps: float = 0.0
    version: int = 0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.eps = float(self.eps)


@dataclass
class Scenario:
    n: int
    model: CollisionModel
    mass: float
    radius: float
    particles: list[Particle]
    t_max: float | None = None
    max_events: int = 10**7
    seed: int = 0

    @property
    def N(self) -> int:
        return len(self.particles)


@dataclass(frozen=True)
class CollisionRecord:
    k: int
    t: float
    i: int
    j: int
    yi: tuple
    yj: tuple
    vi: tuple
    vj: tuple
    vi_out: tuple
    vj_out: tuple
    epsi: float
    epsj: float
    epsi_out: float
    epsj_out: float
    q: tuple


class Termination(str, enum.Enum):
    DISPERSED = "Dispersed"
    TIME_CAPPED = "TimeCapped"
    EVENT_CAPPED = "EventCapped"
    NON_GENERIC = "NonGeneric"


@dataclass
class RunResult:
    events: list[CollisionRecord]
    particles: list[Particle]
    termination: Termination
    t_final: float
    skipped: int = 0
    stats: dict = field(default_factory=dict)


def _contact_times(dy: np.ndarray, dv: np.ndarray, a: float, one_dim: bool) -> np.ndarray:
    """Time offsets s >= 0 until |dy + s dv| = 2a while approaching; inf if none.

    ``dy`` and ``dv`` have shape (K, n). Raises OverlapError if some pair is
    closer than 2a(1 - CONTACT_TOL).
    """
    dd = np.einsum("ij,ij->i", dy, dy)
    vv = np.einsum("ij,ij->i", dv, dv)
    b = np.einsum("ij,ij->i", dy, dv)
    sigma2 = 4.0 * a * a
    c = dd - sigma2
    lim = (2.0 * a * (1.0 - CONTACT_TOL)) ** 2
    if a > 0 and np.any(dd < lim):
        k = int(np.argmax(dd < lim))
        raise OverlapError(f"overlap: |dy| = {math.sqrt(dd[k]):.17g} < 2a = {2 * a:.17g}")
    s = np.full(dd.shape, np.inf)
    approach = b < 0.0
    if not np.any(approach):
        return s
    # b^2 - vv*c rewritten as vv*(2a)^2 - |dy ^ dv|^2 (Lagrange identity): the
    # direct form cancels catastrophically when dy is nearly parallel to dv
    n = dy.shape[1]
    perp2 = np.zeros(dd.shape)
    for p in range(n):
        for q in range(p + 1, n):
            w = dy[:, p] * dv[:, q] - dy[:, q] * dv[:, p]
            perp2 += w * w
    disc = vv * sigma2 - perp2
    if one_dim:
        disc = np.maximum(disc, 0.0)
    hit = approach & (disc >= 0.0)
    touching = hit & (c <= 0.0)
    s[touching] = 0.0
    ahead = hit & (c > 0.0)
    if np.any(ahead):
        qs = -b[ahead] + np.sqrt(disc[ahead])
        s[ahead] = c[ahead] / qs
    return s


def predict_collision(p: Particle, q: Particle, t_now: float, a: float) -> float | None:
    """Earliest contact time >= t_now of two particles in free flight from t_now."""
    dy = (q.y - p.y).reshape(1, -1)
    dv = (q.v - p.v).reshape(1, -1)
    s = _contact_times(dy, dv, a, dy.shape[1] == 1)[0]
    if not np.isfinite(s):
        return None
    return t_now + float(s)


def resolve_collision(model: CollisionModel, vi, vj, nhat, m: float, epsi: float, epsj: float,
                      contact=None):
    """Outgoing velocities, internal energies and impulse of a binary collision.

    ``nhat`` is the unit contact normal pointing from i to j. ``contact`` is the
    vector the outgoing non-approach condition is enforced against (defaults to
    ``nhat``; the engine passes the raw center difference so that the stored
    record satisfies the sign condition bit-exactly).

    Returns ``(vi_out, vj_out, epsi_out, epsj_out, q)`` with ``q = m (vi_out - vi)``
    up to rounding; ``q`` is stored as ``m`` times the applied velocity jump so
    that it stays parallel to the normal.
    """
    vi = np.asarray(vi, dtype=float)
    vj = np.asarray(vj, dtype=float)
    nhat = np.asarray(nhat, dtype=float)
    contact = nhat if contact is None else np.asarray(contact, dtype=float)
    un = float(np.dot(vj - vi, nhat))
    if not un < 0.0 or not float(np.dot(vj - vi, contact)) < 0.0:
        raise GrazingContactError(f"normal relative velocity {un:.3e} is not approaching")
    ke_in = 0.5 * m * (float(np.dot(vi, vi)) + float(np.dot(vj, vj)))

    if model.kind == "sticky" and vi.shape[0] == 1:
        vbar = 0.5 * (vi + vj)
        vi_out, vj_out = vbar.copy(), vbar.copy()
        dv = vbar - vi
    else:
        r = model.coefficient
        jump = 0.5 * (1.0 + r) * un
        dv = jump * nhat
        vi_out, vj_out = vi + dv, vj - dv
        # rounding can leave a -1e-17 residue in the outgoing normal speed when
        # r is 0; nudge the impulse up by a few ulps until Eq.-1 holds exactly
        scale = 1.0
        for k in range(64):
            if float(np.dot(vj_out - vi_out, contact)) >= 0.0:
                break
            scale = 1.0 + 2.0 ** (-52 + k)
            dv = (jump * scale) * nhat
            vi_out, vj_out = vi + dv, vj - dv
        else:
            raise GrazingContactError("outgoing non-approach condition cannot be met")

    if model.kind == "elastic" or (model.kind == "restitution" and model.r == 1.0):
        epsi_out, epsj_out = float(epsi), float(epsj)
    else:
        ke_out = 0.5 * m * (float(np.dot(vi_out, vi_out)) + float(np.dot(vj_out, vj_out)))
        released = max(ke_in - ke_out, 0.0)
        epsi_out = float(epsi) + 0.5 * released
        epsj_out = float(epsj) + 0.5 * released
    q = m * dv
    return vi_out, vj_out, epsi_out, epsj_out, q


def advance_to(particles: Sequence[Particle], t_from: float, t_to: float) -> list[Particle]:
    """Ballistic drift of every particle over [t_from, t_to]."""
    if t_to < t_from:
        raise ValueError("t_to must not precede t_from")
    dt = t_to - t_from
    return [replace(p, y=p.y + dt * p.v) for p in particles]


def validate_scenario(s: Scenario) -> list[str]:
    out = []
    if s.n < 1:
        out.append("dimension < 1")
        return out
    if not s.mass > 0.0 or not math.isfinite(s.mass):
        out.append("nonpositive mass")
    if not s.radius >= 0.0 or not math.isfinite(s.radius):
        out.append("negative radius")
    if s.n >= 2 and s.radius == 0.0:
        out.append("zero radius in dimension ≥ 2")
    if s.max_events < 0:
        out.append("negative max_events")
    ok = []
    for k, p in enumerate(s.particles):
        if p.y.shape != (s.n,) or p.v.shape != (s.n,):
            out.append(f"dimension mismatch({k})")
            continue
        if not (np.all(np.isfinite(p.y)) and np.all(np.isfinite(p.v)) and math.isfinite(p.eps)):
            out.append(f"non-finite coordinates({k})")
            continue
        if p.eps < 0.0:
            out.append(f"negative internal energy({k})")
        ok.append(k)
    if len(ok) < 2 or out and "nonpositive mass" in out:
        return out
    Y = np.array([s.particles[k].y for k in ok])
    V = np.array([s.particles[k].v for k in ok])
    a = s.radius
    for idx in range(len(ok) - 1):
        dy = Y[idx + 1:] - Y[idx]
        dv = V[idx + 1:] - V[idx]
        dist = np.sqrt(np.einsum("ij,ij->i", dy, dy))
        radial = np.einsum("ij,ij->i", dy, dv)
        for off in np.nonzero(dist < 2.0 * a * (1.0 - CONTACT_TOL))[0]:
            out.append(f"overlap({ok[idx]},{ok[idx + 1 + off]})")
        if a > 0:
            touching = (np.abs(dist - 2.0 * a) <= CONTACT_TOL * 2.0 * a) & (radial < 0.0)
            for off in np.nonzero(touching)[0]:
                out.append(f"approaching contact({ok[idx]},{ok[idx + 1 + off]})")
        else:
            for off in np.nonzero(dist == 0.0)[0]:
                out.append(f"coincident({ok[idx]},{ok[idx + 1 + off]})")
    return out


def totals(particles: Sequence[Particle], m: float):
    """Total mass M = N m, energy E and momentum Q (exactly rounded sums)."""
    M = len(particles) * m
    E = math.fsum(0.5 * m * math.fsum(c * c for c in p.v) + p.eps for p in particles)
    if particles:
        n = particles[0].v.shape[0]
        Q = np.array([m * math.fsum(p.v[c] for p in particles) for c in range(n)])
    else:
        Q = np.zeros(0)
    return M, E, Q


_EPOCH = -1


class _Engine:
    """Mutable engine state; see ``run``."""

    def __init__(self, s: Scenario, broadphase: str, horizon: float):
        self.s = s
        self.a = float(s.radius)
        self.m = float(s.mass)
        self.one_dim = s.n == 1
        N = s.N
        self.Y = np.array([p.y for p in s.particles], dtype=float).reshape(N, s.n)
        self.V = np.array([p.v for p in s.particles], dtype=float).reshape(N, s.n)
        self.T = np.zeros(N)
        self.EPS = np.array([p.eps for p in s.particles], dtype=float)
        self.ver = [0] * N
        self.heap: list[tuple] = []
        self.stats = {"pushed": 0, "epochs": 0, "sweeps": 0}
        self.cells = broadphase == "cells" and self.a > 0.0 and N > 1
        self.horizon = horizon
        self.window = horizon
        self.epoch = 0
        self.tree = None

    def positions_at(self, t: float, idx=None) -> np.ndarray:
        if idx is None:
            return self.Y + (t - self.T)[:, None] * self.V
        return self.Y[idx] + (t - self.T[idx])[:, None] * self.V[idx]

    def valid(self, ev) -> bool:
        if ev[1] == _EPOCH:
            return ev[3] == self.epoch
        return self.ver[ev[1]] == ev[3] and self.ver[ev[2]] == ev[4]

    def push_pairs(self, I: np.ndarray, J: np.ndarray):
        """Predict and queue collisions for the pairs (I[k], J[k]).

        Each pair is evaluated from its own base time max(T_i, T_j), the moment
        the later of the two last changed. Both broadphase modes therefore feed
        bit-identical numbers to the quadratic and produce identical logs.
        """
        if I.size == 0:
            return
        tb = np.maximum(self.T[I], self.T[J])
        PI = self.Y[I] + (tb - self.T[I])[:, None] * self.V[I]
        PJ = self.Y[J] + (tb - self.T[J])[:, None] * self.V[J]
        s = _contact_times(PJ - PI, self.V[J] - self.V[I], self.a, self.one_dim)
        for k in np.nonzero(np.isfinite(s))[0]:
            i, j = int(I[k]), int(J[k])
            lo, hi = (i, j) if i < j else (j, i)
            heapq.heappush(self.heap, (float(tb[k]) + float(s[k]), lo, hi, self.ver[lo], self.ver[hi]))
            self.stats["pushed"] += 1

    def sweep_all(self, t: float) -> None:
        """Exhaustive all-pairs prediction."""
        self.stats["sweeps"] += 1
        N = len(self.Y)
        for i in range(N - 1):
            J = np.arange(i + 1, N)
            self.push_pairs(np.full(J.size, i), J)

    def predict_after(self, t: float, i: int, j: int):
        N = len(self.Y)
        for p, skip in ((i, -1), (j, i)):
            cand = self.candidates(t, p) if self.cells else np.arange(N)
            cand = cand[(cand != p) & (cand != skip)]
            self.push_pairs(np.full(cand.size, p), cand)

    # windowed neighbour search: within one window [t0, t1] every speed is
    # bounded by vmax, so a pair colliding before t1 is closer than
    # 2a + 2 vmax (t1 - t) at any t in the window
    def start_epoch(self, t: float):
        self.stats["epochs"] += 1
        self.epoch += 1
        speeds = np.sqrt(np.einsum("ij,ij->i", self.V, self.V))
        self.vmax = float(speeds.max()) if speeds.size else 0.0
        self.t0 = t
        if self.vmax == 0.0:
            self.t1 = math.inf
            self.tree = None
            return
        self.t1 = t + self.window * self.a / self.vmax
        self.tree = cKDTree(self.positions_at(t))
        reach = 2.0 * self.a + 2.0 * self.vmax * (self.t1 - t)
        pairs = self.tree.query_pairs(reach, output_type="ndarray")
        if len(pairs):
            self.push_pairs(pairs[:, 0], pairs[:, 1])
        # longer windows while the neighbourhoods stay sparse
        N = len(self.Y)
        if len(pairs) < N:
            self.window = min(2.0 * self.window, 1e6)
        elif len(pairs) > 8 * N:
            self.window = max(0.5 * self.window, self.horizon)
        heapq.heappush(self.heap, (self.t1, _EPOCH, _EPOCH, self.epoch, 0))

    def candidates(self, t: float, p: int) -> np.ndarray:
        if self.tree is None:
            return np.zeros(0, dtype=int)
        xp = self.Y[p] + (t - self.T[p]) * self.V[p]
        reach = 2.0 * self.a + 2.0 * self.vmax * (self.t1 - t) + self.vmax * (t - self.t0)
        return np.asarray(self.tree.query_ball_point(xp, reach), dtype=int)

    def has_pending_collision(self) -> bool:
        return any(ev[1] != _EPOCH and self.valid(ev) for ev in self.heap)


def run(s: Scenario, broadphase: str = "exhaustive", horizon: float = 4.0) -> RunResult:
    """Process collisions in time order until dispersal or a cap is reached.

    ``broadphase="cells"`` restricts re-prediction to spatial neighbours found
    with a k-d tree rebuilt every ``horizon * a / vmax`` time units; dispersal
    is then confirmed by an exhaustive sweep. The default exhaustive mode
    re-predicts each updated particle against all others.
    """
    if broadphase not in ("exhaustive", "cells"):
        raise ValueError(f"unknown broadphase {broadphase!r}")
    eng = _Engine(s, broadphase, horizon)
    if eng.cells:
        eng.start_epoch(0.0)
    else:
        eng.sweep_all(0.0)
    events: list[CollisionRecord] = []
    heap = eng.heap
    termination = Termination.DISPERSED
    t_final = 0.0
    last = None
    skipped = 0
    while True:
        if not heap:
            break
        ev = heap[0]
        if not eng.valid(ev):
            heapq.heappop(heap)
            continue
        t, i, j = ev[0], ev[1], ev[2]
        if s.t_max is not None and t > s.t_max:
            termination = Termination.TIME_CAPPED
            t_final = s.t_max
            break
        if i == _EPOCH:
            heapq.heappop(heap)
            eng.start_epoch(t)
            if not eng.has_pending_collision():
                # nothing local is pending: look globally, then skip ahead
                eng.epoch += 1
                eng.sweep_all(t)
                if not eng.has_pending_collision():
                    break
                t_next = min(e[0] for e in heap if e[1] != _EPOCH and eng.valid(e))
                heapq.heappush(heap, (t_next, _EPOCH, _EPOCH, eng.epoch, 0))
            continue
        if len(events) >= s.max_events:
            termination = Termination.EVENT_CAPPED
            break
        heapq.heappop(heap)
        if last is not None and t == last[0] and ({i, j} & {last[1], last[2]}):
            termination = Termination.NON_GENERIC
            heapq.heappush(heap, ev)
            break
        same = []
        clash = False
        while heap and heap[0][0] == t:
            other = heapq.heappop(heap)
            if not eng.valid(other) or other[1] == _EPOCH:
                if other[1] == _EPOCH and eng.valid(other):
                    same.append(other)
                continue
            if other[1:3] == (i, j):
                continue  # duplicate prediction of the same pair
            if {other[1], other[2]} & {i, j}:
                clash = True
            same.append(other)
        for other in same:
            heapq.heappush(heap, other)
        if clash:
            termination = Termination.NON_GENERIC
            heapq.heappush(heap, ev)
            break

        yi = eng.Y[i] + (t - eng.T[i]) * eng.V[i]
        yj = eng.Y[j] + (t - eng.T[j]) * eng.V[j]
        vi, vj = eng.V[i].copy(), eng.V[j].copy()
        if eng.a == 0.0:
            yj = yi.copy()
            nhat = np.array([1.0 if vi[0] > vj[0] else -1.0])
            contact = nhat
        else:
            contact = yj - yi
            nhat = contact / np.linalg.norm(contact)
        try:
            vi_out, vj_out, ei, ej, q = resolve_collision(
                s.model, vi, vj, nhat, eng.m, eng.EPS[i], eng.EPS[j], contact=contact)
        except GrazingContactError as exc:
            log.debug("skipping contact %d-%d at t=%r: %s", i, j, t, exc)
            skipped += 1
            continue
        events.append(CollisionRecord(
            k=len(events), t=t, i=i, j=j,
            yi=tuple(map(float, yi)), yj=tuple(map(float, yj)),
            vi=tuple(map(float, vi)), vj=tuple(map(float, vj)),
            vi_out=tuple(map(float, vi_out)), vj_out=tuple(map(float, vj_out)),
            epsi=float(eng.EPS[i]), epsj=float(eng.EPS[j]),
            epsi_out=float(ei), epsj_out=float(ej),
            q=tuple(map(float, q)),
        ))
        eng.Y[i], eng.Y[j] = yi, yj
        eng.T[i] = eng.T[j] = t
        eng.V[i], eng.V[j] = vi_out, vj_out
        eng.EPS[i], eng.EPS[j] = ei, ej
        eng.ver[i] += 1
        eng.ver[j] += 1
        last = (t, i, j)
        t_final = t
        if eng.cells and max(np.linalg.norm(vi_out), np.linalg.norm(vj_out)) > eng.vmax:
            eng.start_epoch(t)  # the speed bound of the current window no longer holds
        else:
            eng.predict_after(t, i, j)

    P = eng.positions_at(t_final)
    final = [
        Particle(id=p.id, y=P[k].copy(), v=eng.V[k].copy(), eps=float(eng.EPS[k]), version=eng.ver[k])
        for k, p in enumerate(s.particles)
    ]
    eng.stats["skipped"] = skipped
    return RunResult(events, final, termination, t_final, skipped, eng.stats)
