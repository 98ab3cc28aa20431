"""Seeded random scenarios: uniform positions with overlap rejection."""

from __future__ import annotations

import numpy as np

from .dynamics import CollisionModel, Particle, Scenario
from .rng import SplitMix64


class PackingError(RuntimeError):
    pass


def generate(n: int, count: int, radius: float, mass: float = 1.0, speed_scale: float = 1.0,
             box: float = 10.0, eps0: float = 0.0, seed: int = 0,
             model: CollisionModel | None = None, t_max: float | None = None,
             max_events: int = 10**7) -> Scenario:
    """Positions uniform in [0, box]^n (rejecting overlaps), velocities uniform in [-s, s]^n.

    Uniform velocity components keep the generator free of libm calls, so files
    are byte-identical across platforms. Gives up after ``10**4 * count``
    rejected draws.
    """
    rng = SplitMix64(seed)
    model = model or CollisionModel.elastic()
    sigma = 2.0 * radius
    Y = np.empty((count, n))
    placed = 0
    budget = 10**4 * max(count, 1)
    attempts = 0
    while placed < count:
        cand = np.array([rng.uniform(0.0, box) for _ in range(n)])
        attempts += 1
        if placed:
            dy = Y[:placed] - cand
            d2 = np.einsum("ij,ij->i", dy, dy)
            clash = bool(np.any(d2 <= (sigma * (1.0 + 1e-6)) ** 2)) if sigma > 0 else bool(np.any(d2 == 0.0))
        else:
            clash = False
        if clash:
            if attempts >= budget:
                raise PackingError(f"placed {placed} of {count} particles after {attempts} attempts")
            continue
        Y[placed] = cand
        placed += 1
    particles = []
    for k in range(count):
        v = np.array([speed_scale * (2.0 * rng.random() - 1.0) for _ in range(n)])
        particles.append(Particle(id=k, y=Y[k].copy(), v=v, eps=float(eps0)))
    return Scenario(n=n, model=model, mass=float(mass), radius=float(radius), particles=particles,
                    t_max=t_max, max_events=max_events, seed=seed)
