"""Yaw-free quadrotor kinematic model and its forward-Euler discretization.

State layout (world frame)::

    x = [px, py, pz, vx, vy, vz, phi, theta]

Input layout::

    u = [T, phi_d, theta_d]

where ``T`` is the mass-normalized total thrust (m/s^2) and ``phi_d``,
``theta_d`` are the desired roll and pitch angles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STATE_DIM = 8
INPUT_DIM = 3


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters of the kinematic model.

    ``damping`` holds the linear drag coefficients (A_x, A_y, A_z) in 1/s.
    """

    g: float = 9.81
    damping: tuple[float, float, float] = (0.1, 0.1, 0.2)
    k_phi: float = 1.0
    k_theta: float = 1.0
    tau_phi: float = 0.5
    tau_theta: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "damping", tuple(float(a) for a in self.damping))
        if len(self.damping) != 3:
            raise ValueError("damping must have three components")
        values = (self.g, self.k_phi, self.k_theta, self.tau_phi, self.tau_theta, *self.damping)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("vehicle parameters must be finite")
        if self.g <= 0:
            raise ValueError("g must be positive")
        if self.tau_phi <= 0 or self.tau_theta <= 0:
            raise ValueError("attitude time constants must be positive")
        if self.k_phi <= 0 or self.k_theta <= 0:
            raise ValueError("attitude gains must be positive")
        if any(a < 0 for a in self.damping):
            raise ValueError("damping coefficients must be non-negative")

    def as_array(self) -> np.ndarray:
        """Packed form used by the compiled kernels."""
        ax, ay, az = self.damping
        return np.array(
            [self.g, ax, ay, az, self.k_phi, self.k_theta, self.tau_phi, self.tau_theta],
            dtype=float,
        )

    def hover_input(self) -> np.ndarray:
        return np.array([self.g, 0.0, 0.0])


@dataclass(frozen=True)
class VehicleState:
    p: tuple[float, float, float]
    v: tuple[float, float, float]
    phi: float
    theta: float

    def __post_init__(self):
        arr = self.as_array()
        if not np.all(np.isfinite(arr)):
            raise ValueError("state components must be finite")
        if abs(self.phi) > math.pi or abs(self.theta) > math.pi:
            raise ValueError("roll and pitch must lie in [-pi, pi]")

    def as_array(self) -> np.ndarray:
        return np.array([*self.p, *self.v, self.phi, self.theta], dtype=float)

    @classmethod
    def from_array(cls, x) -> VehicleState:
        x = np.asarray(x, dtype=float)
        if x.shape != (STATE_DIM,):
            raise ValueError(f"expected state of shape ({STATE_DIM},), got {x.shape}")
        return cls(tuple(x[0:3]), tuple(x[3:6]), float(x[6]), float(x[7]))

    @classmethod
    def hover(cls, p=(0.0, 0.0, 0.0)) -> VehicleState:
        return cls(tuple(float(c) for c in p), (0.0, 0.0, 0.0), 0.0, 0.0)


@dataclass(frozen=True)
class ControlInput:
    thrust: float
    phi_d: float
    theta_d: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.thrust, self.phi_d, self.theta_d)):
            raise ValueError("control components must be finite")
        if self.thrust < 0:
            raise ValueError("thrust must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.thrust, self.phi_d, self.theta_d], dtype=float)

    @classmethod
    def from_array(cls, u) -> ControlInput:
        u = np.asarray(u, dtype=float)
        if u.shape != (INPUT_DIM,):
            raise ValueError(f"expected input of shape ({INPUT_DIM},), got {u.shape}")
        return cls(float(u[0]), float(u[1]), float(u[2]))


@dataclass(frozen=True)
class StateDerivative:
    dp: tuple[float, float, float]
    dv: tuple[float, float, float]
    dphi: float
    dtheta: float

    @classmethod
    def from_array(cls, dx) -> StateDerivative:
        dx = np.asarray(dx, dtype=float)
        return cls(tuple(dx[0:3]), tuple(dx[3:6]), float(dx[6]), float(dx[7]))


def _vector(x, dim: int, name: str) -> np.ndarray:
    if hasattr(x, "as_array"):
        x = x.as_array()
    arr = np.asarray(x, dtype=float)
    if arr.shape != (dim,):
        raise ValueError(f"{name} must have shape ({dim},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def attitude_matrix(phi: float, theta: float) -> np.ndarray:
    """Rotation R_y(theta) @ R_x(phi) with yaw held at zero."""
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cphi, -sphi], [0.0, sphi, cphi]])
    ry = np.array([[cth, 0.0, sth], [0.0, 1.0, 0.0], [-sth, 0.0, cth]])
    return ry @ rx


def thrust_acceleration(phi: float, theta: float, thrust: float) -> np.ndarray:
    """World-frame acceleration produced by thrust ``T`` at attitude (phi, theta)."""
    if not all(math.isfinite(c) for c in (phi, theta, thrust)):
        raise ValueError("thrust_acceleration arguments must be finite")
    if thrust < 0:
        raise ValueError("thrust must be non-negative")
    cphi = math.cos(phi)
    return thrust * np.array([math.sin(theta) * cphi, -math.sin(phi), math.cos(theta) * cphi])


def derivative(x, u, params: VehicleParams) -> np.ndarray:
    """Time derivative of the state; same layout as the state vector.

    Velocity is damped linearly by ``params.damping``; roll and pitch follow
    their set-points as first-order lags.
    """
    x = _vector(x, STATE_DIM, "state")
    u = _vector(u, INPUT_DIM, "input")
    if u[0] < 0:
        raise ValueError("thrust must be non-negative")
    v = x[3:6]
    phi, theta = x[6], x[7]
    dx = np.empty(STATE_DIM)
    dx[0:3] = v
    dx[3:6] = thrust_acceleration(phi, theta, u[0]) - np.asarray(params.damping) * v
    dx[5] -= params.g
    dx[6] = (params.k_phi * u[1] - phi) / params.tau_phi
    dx[7] = (params.k_theta * u[2] - theta) / params.tau_theta
    return dx


def wrap_angle(a: float) -> float:
    # leave in-range angles bit-exact
    if -math.pi <= a <= math.pi:
        return a
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def euler_step(x, u, params: VehicleParams, dt: float) -> np.ndarray:
    """One forward-Euler step of length ``dt``; roll and pitch are re-wrapped."""
    if not math.isfinite(dt) or dt < 0:
        raise ValueError("dt must be a finite non-negative number")
    x = _vector(x, STATE_DIM, "state")
    nxt = x + dt * derivative(x, u, params)
    nxt[6] = wrap_angle(nxt[6])
    nxt[7] = wrap_angle(nxt[7])
    return nxt
