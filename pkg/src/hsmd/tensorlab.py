"""Space-time tensor measures built from collision logs.

Every object here lives in space-time R^d, d = 1 + n, with coordinates
``(t, x_1, ..., x_n)``. A :class:`SegmentMeasure` is a matrix-valued line
measure ``W * (arclength on [p0, p1])``. Its distributional divergence is the
pair of point masses ``+flux`` at ``p0`` and ``-flux`` at ``p1`` where
``flux = W @ u`` and ``u`` is the unit direction of the segment. The flux is
stored explicitly so that junction cancellations are evaluated on the very
numbers the log contains rather than on a re-derived product.

Line measures are rasterized onto a uniform grid by exact segment/cell
clipping, mollified with a discretized ball kernel, and fed to the
determinant integral ``sum det(S)^(1/n) h^d``.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .dynamics import CollisionRecord, Scenario
from .exterior import orthonormal_complement_basis, psd_det_root_batch
from .rng import SplitMix64

log = logging.getLogger(__name__)


class TensorInputError(ValueError):
    """Geometry or resolution preconditions violated."""


class CIViolation(RuntimeError):
    """Positive determinant integral against zero divergence and trace budget."""


@dataclass
class SegmentMeasure:
    p0: np.ndarray
    p1: np.ndarray
    W: np.ndarray
    flux: np.ndarray
    kind: str = "trajectory"

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))


def _segment(p0, p1, W, flux, kind) -> SegmentMeasure:
    return SegmentMeasure(np.asarray(p0, dtype=float), np.asarray(p1, dtype=float),
                          np.asarray(W, dtype=float), np.asarray(flux, dtype=float), kind)


@dataclass
class SlabSpec:
    """Slab (t_minus, t_plus) x [lo, hi] with a uniform grid of edge h.

    ``margin`` pads the grid on every side (time included) so that a kernel of
    radius up to ``margin`` never pushes mass off the grid. The time origin of
    the grid is aligned so that ``t_minus`` lies on a cell boundary.
    """

    t_minus: float
    t_plus: float
    lo: np.ndarray
    hi: np.ndarray
    h: float
    margin: float = 0.0

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float).reshape(-1)
        self.hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if not self.t_minus < self.t_plus:
            raise TensorInputError("slab needs t_minus < t_plus")
        if not self.h > 0:
            raise TensorInputError("cell edge must be positive")
        if self.margin < 0:
            raise TensorInputError("margin must be nonnegative")
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise TensorInputError("bad spatial bounding box")

    @property
    def n(self) -> int:
        return self.lo.shape[0]

    @property
    def d(self) -> int:
        return self.n + 1

    @property
    def pad_cells(self) -> int:
        return int(math.ceil(self.margin / self.h - 1e-9))

    @property
    def slab_cells(self) -> int:
        return max(1, int(math.ceil((self.t_plus - self.t_minus) / self.h - 1e-9)))

    @property
    def origin(self) -> np.ndarray:
        k = self.pad_cells
        return np.concatenate(([self.t_minus - k * self.h], self.lo - k * self.h))

    @property
    def shape(self) -> tuple[int, ...]:
        k = self.pad_cells
        dims = [self.slab_cells + 2 * k]
        for lo, hi in zip(self.lo, self.hi):
            dims.append(max(1, int(math.ceil((hi - lo) / self.h - 1e-9))) + 2 * k)
        return tuple(dims)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.h * np.array(self.shape, dtype=float)

    @classmethod
    def around(cls, segments: Sequence[SegmentMeasure], t_minus: float, t_plus: float, h: float,
               margin: float = 0.0) -> "SlabSpec":
        """Smallest bounding box containing every segment endpoint."""
        pts = np.array([p[1:] for s in segments for p in (s.p0, s.p1)])
        if len(pts) == 0:
            raise TensorInputError("no segments to bound")
        return cls(t_minus, t_plus, pts.min(axis=0), pts.max(axis=0), h, margin)


@dataclass
class TensorField:
    slab: SlabSpec
    data: np.ndarray          # shape (*slab.shape, d, d), density per unit space-time volume
    radius: float | None = None  # mollification radius, None when raw

    @property
    def h(self) -> float:
        return self.slab.h

    @property
    def cell_volume(self) -> float:
        return self.slab.h ** self.slab.d

    def centers(self, axis: int) -> np.ndarray:
        return self.slab.origin[axis] + self.slab.h * (np.arange(self.slab.shape[axis]) + 0.5)

    def slab_mask(self) -> np.ndarray:
        """Time layers whose centers lie inside (t_minus, t_plus)."""
        tc = self.centers(0)
        return (tc > self.slab.t_minus) & (tc < self.slab.t_plus)

    def trace_integral(self) -> float:
        return float(np.trace(self.data, axis1=-2, axis2=-1).sum() * self.cell_volume)

    def min_eigenvalue(self) -> float:
        if self.data.size == 0:
            return 0.0
        return float(np.linalg.eigvalsh(self.data).min())


# ---------------------------------------------------------------- policies


@dataclass(frozen=True)
class Uniform:
    b: float

    def weight(self, M: float, E: float, count: int) -> float:
        return self.b


@dataclass(frozen=True)
class PaperDefault:
    """(M + E) / count: the total budget spread evenly over the kinks (or collisions)."""

    def weight(self, M: float, E: float, count: int) -> float:
        return (M + E) / count if count else 0.0


def parse_b_policy(text: str):
    if text == "paper":
        return PaperDefault()
    if text.startswith("uniform:"):
        return Uniform(float(text.split(":", 1)[1]))
    raise ValueError(f"unknown b policy {text!r}; use 'paper' or 'uniform:B'")


# ---------------------------------------------------------------- geometry


def _st(t: float, y) -> np.ndarray:
    return np.concatenate(([float(t)], np.asarray(y, dtype=float)))


def _clip_time(p0: np.ndarray, p1: np.ndarray, t_minus: float, t_plus: float):
    """Clip [p0, p1] to t_minus <= t <= t_plus, keeping p0 at the earlier end if possible."""
    t0, t1 = p0[0], p1[0]
    if t0 == t1:
        return (p0, p1) if t_minus <= t0 <= t_plus else None
    lo, hi = min(t0, t1), max(t0, t1)
    if hi <= t_minus or lo >= t_plus:
        return None

    def at(t):
        if t == t0:
            return p0
        if t == t1:
            return p1
        s = (t - t0) / (t1 - t0)
        p = p0 + s * (p1 - p0)
        p[0] = t
        return p

    q0 = at(min(max(t0, t_minus), t_plus))
    q1 = at(min(max(t1, t_minus), t_plus))
    return q0, q1


def _line_density(V: np.ndarray, m: float) -> np.ndarray:
    """m V (x) xi with xi = V/|V|, i.e. m V V^T / |V|."""
    return m * np.outer(V, V) / np.linalg.norm(V)


def trajectory_segments(events: Sequence[CollisionRecord], scenario: Scenario, slab: SlabSpec) -> list[SegmentMeasure]:
    """Inter-collision pieces of every trajectory, clipped to the slab in time.

    Free flight is taken from the recorded contact points: segment k of a
    particle runs from its previous recorded position to its next one (or, at
    the ends, from the initial state and to ``t_plus`` along the last
    velocity). Flux through each piece is ``m V = m (1, v)``.
    """
    if slab.t_minus < 0:
        raise TensorInputError("slab must start at or after t = 0")
    m = scenario.mass
    start = {k: (0.0, np.asarray(p.y, dtype=float), np.asarray(p.v, dtype=float))
             for k, p in enumerate(scenario.particles)}
    pieces: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = []
    for r in events:
        for pid, y, v_in, v_out in ((r.i, r.yi, r.vi, r.vi_out), (r.j, r.yj, r.vj, r.vj_out)):
            t0, y0, _ = start[pid]
            pieces.append((pid, _st(t0, y0), _st(r.t, y), np.asarray(v_in, dtype=float)))
            start[pid] = (r.t, np.asarray(y, dtype=float), np.asarray(v_out, dtype=float))
    for pid in sorted(start):
        t0, y0, v = start[pid]
        t_end = max(slab.t_plus, t0)
        pieces.append((pid, _st(t0, y0), _st(t_end, y0 + (t_end - t0) * v), v))

    out = []
    for pid, p0, p1, v in pieces:
        if p1[0] <= p0[0]:
            continue
        clipped = _clip_time(p0, p1, slab.t_minus, slab.t_plus)
        if clipped is None or clipped[1][0] <= clipped[0][0]:
            continue
        V = _st(1.0, v)
        out.append(_segment(clipped[0], clipped[1], _line_density(V, m), m * V, "trajectory"))
    return out


def _inside(t: float, slab: SlabSpec) -> bool:
    return slab.t_minus < t < slab.t_plus


def colliton_segments(events: Sequence[CollisionRecord], slab: SlabSpec) -> list[SegmentMeasure]:
    """Fixed-time segment from x_i to x_j carrying the exchanged momentum.

    ``Q = (0, q)`` is the momentum gained by particle i. The flux at the
    i-end is ``-Q``, which cancels the kink residual ``m (V_i' - V_i)`` of the
    trajectory of i; at the j-end it is ``+Q``.
    """
    out = []
    for r in events:
        if not _inside(r.t, slab):
            continue
        Q = _st(0.0, r.q)
        qn = float(np.linalg.norm(Q))
        p0, p1 = _st(r.t, r.yi), _st(r.t, r.yj)
        if qn == 0.0 or np.array_equal(p0, p1):
            continue
        eta = Q / qn
        out.append(_segment(p0, p1, qn * np.outer(eta, eta), -Q, "colliton"))
    return out


@dataclass
class Kink:
    k: int
    particle: int
    x: np.ndarray      # space-time location
    V: np.ndarray      # incoming (1, v)
    V_out: np.ndarray  # outgoing (1, v')


def kinks(events: Sequence[CollisionRecord], slab: SlabSpec | None = None) -> list[Kink]:
    out = []
    for r in events:
        if slab is not None and not _inside(r.t, slab):
            continue
        out.append(Kink(r.k, r.i, _st(r.t, r.yi), _st(1.0, r.vi), _st(1.0, r.vi_out)))
        out.append(Kink(r.k, r.j, _st(r.t, r.yj), _st(1.0, r.vj), _st(1.0, r.vj_out)))
    return out


def _cross_segment(center: np.ndarray, z: np.ndarray, a: float, b: float, kind: str) -> SegmentMeasure:
    return _segment(center - a * z, center + a * z, b * np.outer(z, z), b * z, kind)


def kink_tensors(events: Sequence[CollisionRecord], slab: SlabSpec, b_policy, a: float,
                 M: float = 0.0, E: float = 0.0) -> list[SegmentMeasure]:
    """Segments of length 2a through each kink along Span(V, V')^perp, density b z(x)z."""
    if slab.n < 2:
        return []
    ks = kinks(events, slab)
    b = b_policy.weight(M, E, len(ks))
    out = []
    for kn in ks:
        if np.array_equal(kn.V, kn.V_out):
            log.warning("kink %d/%d has no velocity jump; skipped", kn.k, kn.particle)
            continue
        for z in orthonormal_complement_basis([kn.V, kn.V_out]):
            out.append(_cross_segment(kn.x, z, a, b, "kink"))
    return out


def collision_frame_tensors(events: Sequence[CollisionRecord], slab: SlabSpec, b_policy, a: float,
                            M: float = 0.0, E: float = 0.0) -> list[SegmentMeasure]:
    """Segments of length 2a through each collision midpoint along the frame complement.

    With a frictionless law V' - V is parallel to x_j - x_i, so
    Span(V, V', x_j - x_i) has rank 2 only. The incoming velocity of the
    partner is added to the spanning family, which restores rank 3 for
    generic collisions and leaves n - 2 complement directions.
    """
    if slab.n < 3:
        return []
    recs = [r for r in events if _inside(r.t, slab)]
    b = b_policy.weight(M, E, len(recs))
    out = []
    for r in recs:
        V, Vp, V1 = _st(1.0, r.vi), _st(1.0, r.vi_out), _st(1.0, r.vj)
        sep = _st(0.0, np.asarray(r.yj) - np.asarray(r.yi))
        basis = orthonormal_complement_basis([V, Vp, V1, sep])
        if len(basis) != slab.n - 2:
            log.info("collision %d: frame span has rank %d", r.k, slab.d - len(basis))
        mid = _st(r.t, 0.5 * (np.asarray(r.yi) + np.asarray(r.yj)))
        for w in basis:
            out.append(_cross_segment(mid, w, a, b, "frame"))
    return out


# ---------------------------------------------------------------- divergence


@dataclass
class DivergenceReport:
    interior_mass: float
    trace_minus: float
    trace_plus: float
    junctions: dict = field(default_factory=dict)  # location -> residual vector (interior only)

    @property
    def trace_masses(self) -> tuple[float, float]:
        return self.trace_minus, self.trace_plus


def divergence_report(segments: Sequence[SegmentMeasure], slab: SlabSpec) -> DivergenceReport:
    """Group endpoint fluxes by location and measure what does not cancel.

    Residuals are summed with ``math.fsum`` per component, so a junction
    cancels whenever the exact sum of the contributing fluxes is zero.
    """
    groups: dict[tuple, list[np.ndarray]] = defaultdict(list)
    for s in segments:
        groups[tuple(s.p0.tolist())].append(s.flux)
        groups[tuple(s.p1.tolist())].append(-s.flux)
    interior, tm, tp = [], [], []
    junctions = {}
    for loc, fluxes in groups.items():
        F = np.array(fluxes)
        res = np.array([math.fsum(F[:, c]) for c in range(F.shape[1])])
        mag = float(np.linalg.norm(res))
        if loc[0] == slab.t_minus:
            tm.append(mag)
        elif loc[0] == slab.t_plus:
            tp.append(mag)
        else:
            interior.append(mag)
            junctions[loc] = res
    return DivergenceReport(math.fsum(interior), math.fsum(tm), math.fsum(tp), junctions)


# ---------------------------------------------------------------- rasterize / mollify


def rasterize(segments: Sequence[SegmentMeasure], slab: SlabSpec) -> TensorField:
    """Deposit each segment's W * (arclength inside cell) / h^d by exact clipping."""
    d, h = slab.d, slab.h
    shape = slab.shape
    origin, upper = slab.origin, slab.upper
    data = np.zeros(shape + (d, d))
    flat = data.reshape(-1, d, d)
    strides = np.array([int(np.prod(shape[k + 1:])) for k in range(d)])
    vol = h**d
    for s in segments:
        lo = np.minimum(s.p0, s.p1)
        hi = np.maximum(s.p0, s.p1)
        if np.any(lo < origin - 1e-12 * h) or np.any(hi > upper + 1e-12 * h):
            raise TensorInputError(f"{s.kind} segment leaves the grid box")
        L = s.length
        if L == 0.0:
            continue
        delta = s.p1 - s.p0
        params = [np.array([0.0, 1.0])]
        for ax in range(d):
            if delta[ax] == 0.0:
                continue
            k0 = int(math.floor((lo[ax] - origin[ax]) / h)) + 1
            k1 = int(math.ceil((hi[ax] - origin[ax]) / h)) - 1
            if k1 < k0:
                continue
            planes = origin[ax] + h * np.arange(k0, k1 + 1)
            sv = (planes - s.p0[ax]) / delta[ax]
            params.append(sv[(sv > 0.0) & (sv < 1.0)])
        sv = np.unique(np.concatenate(params))
        ds = np.diff(sv)
        keep = ds > 0
        mid = 0.5 * (sv[:-1] + sv[1:])[keep]
        ds = ds[keep]
        pts = s.p0[None, :] + mid[:, None] * delta[None, :]
        idx = np.floor((pts - origin) / h).astype(np.int64)
        idx = np.clip(idx, 0, np.array(shape) - 1)
        lin = idx @ strides
        w = ds * (L / vol)
        # accumulate lengths per cell first, then one matrix per touched cell
        cells, inv = np.unique(lin, return_inverse=True)
        acc = np.zeros(len(cells))
        np.add.at(acc, inv, w)
        flat[cells] += acc[:, None, None] * s.W[None, :, :]
    return TensorField(slab, data, None)


def _ball_volume(d: int, r: float) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r**d


def ball_kernel(d: int, r: float, h: float, max_points: int = 4 * 10**6) -> np.ndarray:
    """Normalized cell-volume fractions of the ball B_r centred on a cell centre.

    Fractions are estimated by a regular sub-grid of ``s^d`` points per cell,
    with ``s`` as large as the point budget allows (at least 4).
    """
    K = int(math.ceil(r / h - 0.5))
    width = 2 * K + 1
    s = max(4, int((max_points / width**d) ** (1.0 / d)))
    sub = (np.arange(s) + 0.5) / s - 0.5
    offs = np.arange(-K, K + 1, dtype=float)
    # per-axis squared distances of every sub-point: shape (width, s)
    coord = (offs[:, None] + sub[None, :]) * h
    sq = coord**2
    kernel = np.zeros((width,) * d)
    # accumulate over sub-point tuples lazily by broadcasting one axis at a time
    total = sq[(slice(None),) + (None,) * (d - 1) + (slice(None),) + (None,) * (d - 1)]
    for ax in range(1, d):
        shp = [1] * (2 * d)
        shp[ax] = width
        shp[d + ax] = s
        total = total + sq.reshape(shp)
    inside = total <= r * r
    kernel = inside.mean(axis=tuple(range(d, 2 * d)))
    ksum = kernel.sum()
    if ksum == 0:
        raise TensorInputError("kernel radius too small for the grid")
    return kernel / ksum


def mollify(fld: TensorField, r: float) -> TensorField:
    slab = fld.slab
    if not r >= slab.h * (1 - 1e-12):
        raise TensorInputError("mollification radius must be at least one cell")
    if slab.pad_cells * slab.h < r * (1 - 1e-12):
        raise TensorInputError("grid margin smaller than mollification radius")
    d = slab.d
    kern = ball_kernel(d, r, slab.h)
    out = np.zeros_like(fld.data)
    for i in range(d):
        for j in range(i, d):
            comp = fld.data[..., i, j]
            if not np.any(comp):
                continue
            conv = fftconvolve(comp, kern, mode="same")
            out[..., i, j] = conv
            out[..., j, i] = conv
    # FFT round-off leaves ~1e-17 noise where the field should vanish
    scale = float(np.abs(fld.data).max()) if fld.data.size else 0.0
    out[np.abs(out) < 1e-14 * scale] = 0.0
    return TensorField(slab, out, r)


# ---------------------------------------------------------------- checks


def grid_divergence(fld: TensorField) -> np.ndarray:
    """Central-difference divergence (Div S)_i = sum_j d_j S_ij, shape (*grid, d)."""
    d, h = fld.slab.d, fld.slab.h
    div = np.zeros(fld.data.shape[:-1])
    for i in range(d):
        for j in range(d):
            if fld.data.shape[j] < 2:
                continue
            div[..., i] += np.gradient(fld.data[..., i, j], h, axis=j)
    return div


def grid_divergence_mass(fld: TensorField, face_buffer: float = 0.0) -> float:
    """Sum of |Div S| h^d over cells whose time centre is more than ``face_buffer`` inside the slab."""
    div = grid_divergence(fld)
    tc = fld.centers(0)
    sl = (tc > fld.slab.t_minus + face_buffer) & (tc < fld.slab.t_plus - face_buffer)
    return float(np.linalg.norm(div[sl], axis=-1).sum() * fld.cell_volume)


def face_trace(fld: TensorField, side: str = "minus") -> float:
    """Total variation of S e_t over the first cell layer inside the slab at a face."""
    mask = np.nonzero(fld.slab_mask())[0]
    if len(mask) == 0:
        return 0.0
    layer = mask[0] if side == "minus" else mask[-1]
    row = fld.data[layer][..., :, 0]
    return float(np.linalg.norm(row, axis=-1).sum() * fld.slab.h ** fld.slab.n)


@dataclass
class CIResult:
    lhs: float
    rhs_base: float
    ratio: float


def ci_check(fld: TensorField, div_mass: float, trace_masses: Sequence[float]) -> CIResult:
    """Determinant integral over the slab against (traces + divergence)^(1 + 1/n)."""
    n = fld.slab.n
    cells = fld.data[fld.slab_mask()]
    if cells.size:
        tr = np.trace(cells, axis1=-2, axis2=-1)
        scale = float(tr.max())
        if scale > 0:
            roots = psd_det_root_batch(cells.reshape(-1, n + 1, n + 1), 1.0 / n, scale)
            lhs = math.fsum(roots.tolist()) * fld.cell_volume
        else:
            lhs = 0.0
    else:
        lhs = 0.0
    rhs = (math.fsum(trace_masses) + div_mass) ** (1.0 + 1.0 / n)
    if rhs == 0.0:
        if lhs > 0.0:
            raise CIViolation("CI violated: positive determinant integral with zero right-hand side")
        return CIResult(lhs, rhs, 0.0)
    return CIResult(lhs, rhs, lhs / rhs)


def _interpolate(fld: TensorField, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation between cell centres."""
    slab = fld.slab
    u = (x - slab.origin) / slab.h - 0.5
    base = np.floor(u).astype(int)
    frac = u - base
    shape = np.array(slab.shape)
    out = np.zeros(fld.data.shape[-2:])
    d = slab.d
    for corner in range(1 << d):
        bits = np.array([(corner >> k) & 1 for k in range(d)])
        idx = np.clip(base + bits, 0, shape - 1)
        w = float(np.prod(np.where(bits, frac, 1.0 - frac)))
        if w:
            out += w * fld.data[tuple(idx)]
    return out


def kink_bound_matrix(kink: Kink, m: float, a: float, b: float) -> np.ndarray:
    d = kink.V.shape[0]
    B = _line_density(kink.V, m) + _line_density(kink.V_out, m)
    if b and d > 2 and not np.array_equal(kink.V, kink.V_out):
        for z in orthonormal_complement_basis([kink.V, kink.V_out]):
            B = B + b * np.outer(z, z)
    return (a / _ball_volume(d, 2 * a)) * B


def kink_lower_bound_check(fld: TensorField, kink: Kink, m: float, a: float, b: float,
                           sample_count: int = 64, seed: int = 0) -> float:
    """Worst normalized min-eigenvalue margin of (field - bound) over samples of B_a(kink).

    The field must be mollified at radius exactly 2a and resolve a with at
    least four cells. The kink point itself is always the first sample.
    """
    if fld.radius is None or abs(fld.radius - 2 * a) > 1e-12 * a:
        raise TensorInputError("field must be mollified at radius 2a")
    if a < 4 * fld.h * (1 - 1e-12):
        raise TensorInputError("resolution floor: need a >= 4h")
    bound = kink_bound_matrix(kink, m, a, b)
    tb = float(np.trace(bound))
    rng = SplitMix64(seed)
    d = kink.x.shape[0]
    pts = [kink.x]
    while len(pts) < sample_count:
        z = np.array([rng.uniform(-1.0, 1.0) for _ in range(d)])
        if np.dot(z, z) <= 1.0:
            pts.append(kink.x + a * z)
    worst = math.inf
    for x in pts:
        diff = _interpolate(fld, x) - bound
        lam = float(np.linalg.eigvalsh(0.5 * (diff + diff.T))[0])
        worst = min(worst, lam / tb)
    return worst
