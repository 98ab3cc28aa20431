"""Legality and conservation checks on collision logs.

Everything is recomputed from the records themselves (plus, optionally, the
initial scenario), never from engine internals, so externally produced logs
can be validated the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import CONTACT_TOL, CollisionRecord, Scenario, totals
from .exterior import wedge_norm_sq


@dataclass(frozen=True)
class Tolerances:
    momentum: float = 1e-12      # relative to m * max|v|
    energy: float = 1e-12        # relative to the pair's total energy
    contact: float = CONTACT_TOL  # relative to 2a
    parallel: float = 1e-12      # sine of the angle between q and yj - yi
    bound: float = 1e-12         # emerging-velocity bound, relative
    replay: float = 1e-9         # replayed positions, relative to max(|y|, 2a)
    totals: float = 1e-10        # global M, E, Q


TOL = Tolerances()


@dataclass(frozen=True)
class Violation:
    k: int | str
    kind: str
    magnitude: float

    def __str__(self):
        return f"{self.k}: {self.kind} ({self.magnitude:.3e})"


def _norm(x) -> float:
    return math.sqrt(math.fsum(c * c for c in x))


def _dot(x, y) -> float:
    return float(np.dot(np.asarray(x, dtype=float), np.asarray(y, dtype=float)))


def check_record(r: CollisionRecord, m: float, a: float, tol: Tolerances = TOL) -> list[Violation]:
    out = []
    vi, vj = np.array(r.vi), np.array(r.vj)
    vo_i, vo_j = np.array(r.vi_out), np.array(r.vj_out)
    q = np.array(r.q)
    dy = np.array(r.yj) - np.array(r.yi)

    vscale = max(_norm(vi), _norm(vj), _norm(vo_i), _norm(vo_j))
    pscale = m * vscale if vscale > 0 else m
    mom = _norm(m * ((vo_i + vo_j) - (vi + vj))) / pscale
    if not mom <= tol.momentum:
        out.append(Violation(r.k, "momentum", mom))
    imp = max(_norm(q - m * (vo_i - vi)), _norm(q - m * (vj - vo_j))) / pscale
    if not imp <= tol.momentum:
        out.append(Violation(r.k, "impulse", imp))

    e_in = math.fsum([0.5 * m * _dot(vi, vi), 0.5 * m * _dot(vj, vj), r.epsi, r.epsj])
    e_out = math.fsum([0.5 * m * _dot(vo_i, vo_i), 0.5 * m * _dot(vo_j, vo_j), r.epsi_out, r.epsj_out])
    de = abs(e_out - e_in) / e_in if e_in > 0 else abs(e_out - e_in)
    if not de <= tol.energy:
        out.append(Violation(r.k, "energy", de))
    if r.epsi_out < 0 or r.epsj_out < 0:
        out.append(Violation(r.k, "negative internal energy", -min(r.epsi_out, r.epsj_out)))

    lhs = _dot(vo_i, vo_i) + _dot(vo_j, vo_j)
    rhs = _dot(vi, vi) + 2.0 * r.epsi / m + _dot(vj, vj) + 2.0 * r.epsj / m
    if lhs > rhs + tol.bound * max(rhs, 1.0):
        out.append(Violation(r.k, "emerging velocity bound", (lhs - rhs) / max(rhs, 1.0)))

    if a > 0:
        dist = _norm(dy)
        err = abs(dist - 2.0 * a) / (2.0 * a)
        if not err <= tol.contact:
            out.append(Violation(r.k, "contact distance", err))
        normal = dy
        qn, dn = _norm(q), dist
        if qn > 0 and dn > 0 and len(q) > 1:
            sine = math.sqrt(wedge_norm_sq([q, dy])) / (qn * dn)
            if not sine <= tol.parallel:
                out.append(Violation(r.k, "impulse not normal", sine))
    else:
        # point particles on a line: i was behind j iff it was faster
        normal = np.array([1.0 if r.vi[0] > r.vj[0] else -1.0])
        if _norm(dy) != 0.0:
            out.append(Violation(r.k, "contact distance", _norm(dy)))
    incoming = _dot(vj - vi, normal)
    if not incoming < 0.0:
        out.append(Violation(r.k, "not approaching", abs(incoming)))
    outgoing = _dot(vo_j - vo_i, normal)
    if not outgoing >= 0.0:
        out.append(Violation(r.k, "approaching after collision", abs(outgoing)))
    return out


def check_log(events: Sequence[CollisionRecord], meta, scenario: Scenario | None = None,
              tol: Tolerances = TOL) -> list[Violation]:
    """Replay a log and check every record plus the global invariants.

    ``meta`` is the log's :class:`hsmd.io.LogMeta`. Without ``scenario`` a
    particle's state is only known from its first recorded collision on.
    """
    m, a, N = meta.mass, meta.radius, meta.N
    out: list[Violation] = []
    state: dict[int, tuple] = {}
    if scenario is not None:
        from .io import scenario_digest

        if scenario_digest(scenario) != meta.scenario_digest:
            out.append(Violation("global", "scenario digest mismatch", 1.0))
        for idx, p in enumerate(scenario.particles):
            state[idx] = (0.0, np.array(p.y), np.array(p.v), p.eps)
        M_s, E_s, Q_s = totals(scenario.particles, scenario.mass)
        if abs(E_s - meta.E0) > tol.totals * max(E_s, 1e-300):
            out.append(Violation("global", "initial energy mismatch", abs(E_s - meta.E0)))

    M = meta.M
    if abs(M - N * m) > tol.totals * M:
        out.append(Violation("global", "mass", abs(M - N * m)))
    Q0 = np.array(meta.Q0)
    bound = math.sqrt(2.0 * M * meta.E0)
    if _norm(Q0) > bound * (1.0 + 1e-12):
        out.append(Violation("global", "momentum exceeds sqrt(2ME)", _norm(Q0) - bound))

    E, Q = meta.E0, Q0.copy()
    t_prev = -math.inf
    for pos, r in enumerate(events):
        if r.k != pos:
            out.append(Violation(r.k, "event index", abs(r.k - pos)))
        if r.t < t_prev:
            out.append(Violation(r.k, "time order", t_prev - r.t))
        t_prev = r.t
        if not (0 <= r.i < N and 0 <= r.j < N) or r.i == r.j:
            out.append(Violation(r.k, "particle id", 1.0))
            continue
        out.extend(check_record(r, m, a, tol))

        replayed = {}
        for pid, y_rec, v_rec, e_rec in ((r.i, r.yi, r.vi, r.epsi), (r.j, r.yj, r.vj, r.epsj)):
            y_rec = np.array(y_rec)
            if pid not in state:
                replayed[pid] = y_rec
                continue
            t0, y0, v0, e0 = state[pid]
            if r.t < t0:
                out.append(Violation(r.k, "replay time", t0 - r.t))
            y_hat = y0 + (r.t - t0) * v0
            replayed[pid] = y_hat
            scale = max(_norm(y_hat), 2.0 * a, 1.0)
            err = _norm(y_hat - y_rec) / scale
            if not err <= tol.replay:
                out.append(Violation(r.k, "replay position", err))
            vs = max(_norm(v0), 1e-300)
            if _norm(np.array(v_rec) - v0) > tol.momentum * vs:
                out.append(Violation(r.k, "replay velocity", _norm(np.array(v_rec) - v0) / vs))
            if abs(e_rec - e0) > tol.energy * max(abs(e0), 1.0):
                out.append(Violation(r.k, "replay internal energy", abs(e_rec - e0)))
        if a > 0:
            gap = _norm(replayed[r.j] - replayed[r.i])
            err = abs(gap - 2.0 * a) / (2.0 * a)
            if not err <= tol.replay:
                out.append(Violation(r.k, "replay contact distance", err))
        state[r.i] = (r.t, np.array(r.yi), np.array(r.vi_out), r.epsi_out)
        state[r.j] = (r.t, np.array(r.yj), np.array(r.vj_out), r.epsj_out)

        de = math.fsum([0.5 * m * _dot(r.vi_out, r.vi_out), 0.5 * m * _dot(r.vj_out, r.vj_out), r.epsi_out,
                        r.epsj_out, -0.5 * m * _dot(r.vi, r.vi), -0.5 * m * _dot(r.vj, r.vj), -r.epsi, -r.epsj])
        E += de
        Q += m * ((np.array(r.vi_out) + np.array(r.vj_out)) - (np.array(r.vi) + np.array(r.vj)))

    escale = max(meta.E0, 1e-300)
    if abs(E - meta.E0) > tol.totals * escale:
        out.append(Violation("global", "energy drift", abs(E - meta.E0) / escale))
    qscale = max(math.sqrt(2.0 * M * meta.E0), 1e-300)
    if _norm(Q - Q0) > tol.totals * qscale:
        out.append(Violation("global", "momentum drift", _norm(Q - Q0) / qscale))
    if scenario is not None and len(state) == N:
        parts = [(y, v, e) for _, y, v, e in (state[k] for k in range(N))]
        E_f = math.fsum(0.5 * m * _dot(v, v) + e for _, v, e in parts)
        if abs(E_f - meta.E0) > tol.totals * escale:
            out.append(Violation("global", "final energy", abs(E_f - meta.E0) / escale))
        Q_f = np.array([m * math.fsum(v[c] for _, v, _ in parts) for c in range(meta.dim)])
        if _norm(Q_f - Q0) > tol.totals * qscale:
            out.append(Violation("global", "final momentum", _norm(Q_f - Q0) / qscale))
    return out
