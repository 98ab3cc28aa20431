"""File formats: scenario JSON, JSON-Lines event logs, canonical digests.

Python's ``json`` serializes floats with ``repr``, the shortest decimal that
round-trips, so every double survives a write/read cycle bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .dynamics import CollisionModel, CollisionRecord, Particle, Scenario, totals

RECORD_KEYS = ("k", "t", "i", "j", "yi", "yj", "vi", "vj", "vi_out", "vj_out",
               "epsi", "epsj", "epsi_out", "epsj_out", "q")
VECTOR_KEYS = ("yi", "yj", "vi", "vj", "vi_out", "vj_out", "q")


class LogFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _floats(xs) -> list[float]:
    return [float(x) for x in xs]


def scenario_to_json(s: Scenario) -> dict:
    obj = {
        "dim": s.n,
        "model": s.model.to_json(),
        "radius": float(s.radius),
        "mass": float(s.mass),
        "seed": int(s.seed),
        "particles": [{"y": _floats(p.y), "v": _floats(p.v), "eps": float(p.eps)} for p in s.particles],
    }
    if s.t_max is not None:
        obj["t_max"] = float(s.t_max)
    obj["max_events"] = int(s.max_events)
    return obj


def scenario_from_json(obj: dict) -> Scenario:
    n = int(obj["dim"])
    particles = [
        Particle(id=k, y=np.array(p["y"], dtype=float).reshape(-1), v=np.array(p["v"], dtype=float).reshape(-1),
                 eps=float(p.get("eps", 0.0)))
        for k, p in enumerate(obj["particles"])
    ]
    return Scenario(
        n=n,
        model=CollisionModel.from_json(obj["model"]),
        mass=float(obj["mass"]),
        radius=float(obj["radius"]),
        particles=particles,
        t_max=None if obj.get("t_max") is None else float(obj["t_max"]),
        max_events=int(obj.get("max_events", 10**7)),
        seed=int(obj.get("seed", 0)),
    )


def canonical_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def scenario_digest(s: Scenario) -> str:
    """64-bit hex digest of the canonical scenario serialization."""
    return hashlib.blake2b(canonical_bytes(scenario_to_json(s)), digest_size=8).hexdigest()


def dump_scenario(s: Scenario, fh: IO[str]):
    fh.write(json.dumps(scenario_to_json(s), indent=1, allow_nan=False))
    fh.write("\n")


def load_scenario(fh: IO[str]) -> Scenario:
    return scenario_from_json(json.load(fh))


@dataclass
class LogMeta:
    dim: int
    mass: float
    radius: float
    model: CollisionModel
    N: int
    M: float
    E0: float
    Q0: tuple
    scenario_digest: str

    @classmethod
    def for_scenario(cls, s: Scenario) -> "LogMeta":
        M, E, Q = totals(s.particles, s.mass)
        return cls(s.n, float(s.mass), float(s.radius), s.model, s.N, float(M), float(E),
                   tuple(_floats(Q)), scenario_digest(s))

    def to_json(self) -> dict:
        return {"meta": {
            "dim": self.dim, "mass": self.mass, "radius": self.radius, "model": self.model.to_json(),
            "N": self.N, "M": self.M, "E0": self.E0, "Q0": list(self.Q0),
            "scenario_digest": self.scenario_digest,
        }}

    @classmethod
    def from_json(cls, obj: dict) -> "LogMeta":
        m = obj["meta"]
        return cls(int(m["dim"]), float(m["mass"]), float(m["radius"]), CollisionModel.from_json(m["model"]),
                   int(m["N"]), float(m["M"]), float(m["E0"]), tuple(_floats(m["Q0"])),
                   str(m["scenario_digest"]))


def record_to_json(r: CollisionRecord) -> dict:
    return {k: (list(getattr(r, k)) if k in VECTOR_KEYS else getattr(r, k)) for k in RECORD_KEYS}


def record_from_json(obj: dict) -> CollisionRecord:
    missing = [k for k in RECORD_KEYS if k not in obj]
    if missing:
        raise KeyError(f"missing keys {missing}")
    kw = {}
    for k in RECORD_KEYS:
        if k in VECTOR_KEYS:
            kw[k] = tuple(float(x) for x in obj[k])
        elif k in ("k", "i", "j"):
            kw[k] = int(obj[k])
        else:
            kw[k] = float(obj[k])
    return CollisionRecord(**kw)


def write_log(fh: IO[str], meta: LogMeta, events: Iterable[CollisionRecord]):
    fh.write(json.dumps(meta.to_json(), allow_nan=False))
    fh.write("\n")
    for r in events:
        fh.write(json.dumps(record_to_json(r), allow_nan=False))
        fh.write("\n")


def read_log(fh: IO[str]) -> tuple[LogMeta, list[CollisionRecord]]:
    meta = None
    events = []
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if meta is None:
                meta = LogMeta.from_json(obj)
                continue
            rec = record_from_json(obj)
        except (ValueError, KeyError, TypeError) as exc:
            raise LogFormatError(lineno, str(exc)) from None
        for k in VECTOR_KEYS:
            if len(getattr(rec, k)) != meta.dim:
                raise LogFormatError(lineno, f"{k} has length {len(getattr(rec, k))}, expected {meta.dim}")
        if not all(math.isfinite(x) for k in VECTOR_KEYS for x in getattr(rec, k)):
            raise LogFormatError(lineno, "non-finite value")
        events.append(rec)
    if meta is None:
        raise LogFormatError(1, "missing meta line")
    return meta, events
