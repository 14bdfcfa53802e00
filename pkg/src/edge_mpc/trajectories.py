"""Reference trajectories: hover, circle, outward spiral and helix."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("hover", "circular", "spiral", "helical")


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "circular"
    radius: float = 2.0
    omega: float = 0.4
    center: tuple[float, float, float] = (0.0, 0.0, 2.0)
    climb_rate: float = 0.05
    growth_rate: float = 0.02
    duration: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}; expected one of {KINDS}")
        if len(self.center) != 3:
            raise ValueError("center must have three components")
        nums = (self.radius, self.omega, self.climb_rate, self.growth_rate, self.duration, *self.center)
        if not all(math.isfinite(v) for v in nums):
            raise ValueError("trajectory parameters must be finite")
        if self.radius < 0:
            raise ValueError("radius must be non-negative")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "radius": self.radius,
            "omega": self.omega,
            "center": list(self.center),
            "climb_rate": self.climb_rate,
            "growth_rate": self.growth_rate,
            "duration": self.duration,
        }


@dataclass(frozen=True)
class ReferencePoint:
    t: float
    x_d: np.ndarray

    @property
    def position(self) -> np.ndarray:
        return self.x_d[0:3]


def _state(spec: TrajectorySpec, t: float) -> np.ndarray:
    x = np.zeros(8)
    x[0:3] = spec.center
    if spec.kind == "hover":
        return x
    w = spec.omega
    c, s = math.cos(w * t), math.sin(w * t)
    r, dr = spec.radius, 0.0
    if spec.kind == "spiral":
        r, dr = spec.radius + spec.growth_rate * t, spec.growth_rate
    x[0] += r * c
    x[1] += r * s
    x[3] = dr * c - r * w * s
    x[4] = dr * s + r * w * c
    if spec.kind == "helical":
        x[2] += spec.climb_rate * t
        x[5] = spec.climb_rate
    return x


def sample(spec: TrajectorySpec, t: float) -> ReferencePoint:
    """Desired state at time ``t``; attitude is always zero."""
    if not (0.0 <= t <= spec.duration):
        raise ValueError(f"t={t} outside [0, {spec.duration}]")
    return ReferencePoint(float(t), _state(spec, t))


def sample_horizon(spec: TrajectorySpec, t: float, horizon: int, dt: float) -> list[ReferencePoint]:
    """Points at ``t + j*dt`` for j = 1..horizon, held at the final point past the end."""
    if not (0.0 <= t <= spec.duration):
        raise ValueError(f"t={t} outside [0, {spec.duration}]")
    return [sample(spec, min(t + j * dt, spec.duration)) for j in range(1, horizon + 1)]


def horizon_states(spec: TrajectorySpec, t: float, horizon: int, dt: float) -> np.ndarray:
    """Stacked ``x_d`` of :func:`sample_horizon`, shape (horizon, 8)."""
    return np.array([p.x_d for p in sample_horizon(spec, t, horizon, dt)])
