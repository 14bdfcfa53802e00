"""Receding-horizon controller over the forward-Euler quadrotor model.

The cost over a horizon of N steps is::

    J = sum_j (x_d,j - x_j)' Q_x (x_d,j - x_j)
          + (u_d - u_j)' Q_u (u_d - u_j)
          + (u_j - u_{j-1})' Q_du (u_j - u_{j-1})

with ``x_j`` the state reached after applying ``u_seq[0..j-1]``, and
``u_{-1}`` the input applied at the previous control step. The inputs are
optimized by projected gradient descent inside a box.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import INPUT_DIM, STATE_DIM, VehicleParams, _vector

log = logging.getLogger(__name__)

DEFAULT_BOUNDS = ((0.0, 20.0), (-0.4, 0.4), (-0.4, 0.4))


class SolverDiverged(RuntimeError):
    """Raised when the cost becomes non-finite during optimization."""

    def __init__(self, message: str, history_length: int):
        super().__init__(f"{message} (after {history_length} iterates)")
        self.history_length = history_length


def _psd(name: str, Q, dim: int) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 1:
        Q = np.diag(Q)
    if Q.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim} (or a length-{dim} diagonal)")
    if not np.all(np.isfinite(Q)):
        raise ValueError(f"{name} must be finite")
    if np.max(np.abs(Q - Q.T)) > 1e-12:
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(Q)) < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")
    return np.ascontiguousarray(Q)


@dataclass(frozen=True, eq=False)
class MpcWeights:
    """State, input and input-rate weights; diagonals are accepted as vectors."""

    Q_x: np.ndarray = field(default_factory=lambda: np.diag([8.0, 8.0, 8.0, 1.5, 1.5, 1.5, 5.0, 5.0]))
    Q_u: np.ndarray = field(default_factory=lambda: np.diag([2.0, 10.0, 10.0]))
    Q_du: np.ndarray = field(default_factory=lambda: np.diag([3.0, 20.0, 20.0]))

    def __post_init__(self):
        object.__setattr__(self, "Q_x", _psd("Q_x", self.Q_x, STATE_DIM))
        object.__setattr__(self, "Q_u", _psd("Q_u", self.Q_u, INPUT_DIM))
        object.__setattr__(self, "Q_du", _psd("Q_du", self.Q_du, INPUT_DIM))

    @classmethod
    def zeros(cls) -> MpcWeights:
        return cls(np.zeros(STATE_DIM), np.zeros(INPUT_DIM), np.zeros(INPUT_DIM))


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 40
    dt: float = 0.02
    bounds: tuple = DEFAULT_BOUNDS
    max_iter: int = 200
    step_size: float = 1e-3
    tol: float = 1e-3
    max_halvings: int = 20

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        object.__setattr__(self, "horizon", int(self.horizon))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if len(bounds) != INPUT_DIM:
            raise ValueError("bounds must give [lo, hi] for thrust, phi_d and theta_d")
        if any(lo > hi for lo, hi in bounds):
            raise ValueError("each lower bound must not exceed its upper bound")
        if bounds[0][0] < 0:
            raise ValueError("thrust lower bound must be non-negative")
        if self.max_iter < 0 or self.step_size <= 0 or self.tol < 0 or self.max_halvings < 0:
            raise ValueError("solver settings out of range")

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])


@dataclass(frozen=True, eq=False)
class MpcReference:
    """Desired states per horizon step plus the steady-state input."""

    x_d: np.ndarray
    u_d: np.ndarray

    @classmethod
    def hover_at(cls, x_d, params: VehicleParams) -> MpcReference:
        return cls(np.asarray(x_d, dtype=float), params.hover_input())

    def states(self, horizon: int) -> np.ndarray:
        x_d = np.asarray(self.x_d, dtype=float)
        if x_d.shape == (STATE_DIM,):
            x_d = np.tile(x_d, (horizon, 1))
        if x_d.shape != (horizon, STATE_DIM):
            raise ValueError(f"x_d must be ({STATE_DIM},) or ({horizon}, {STATE_DIM}), got {x_d.shape}")
        if not np.all(np.isfinite(x_d)):
            raise ValueError("x_d must be finite")
        return np.ascontiguousarray(x_d)


@dataclass(frozen=True, eq=False)
class MpcSolution:
    u_seq: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    grad_norm: float
    wall_time: float
    converged: bool

    @property
    def first_input(self) -> np.ndarray:
        return self.u_seq[0].copy()

    @property
    def horizon(self) -> int:
        return self.u_seq.shape[0]


def _sequence(u_seq, horizon: int | None = None) -> np.ndarray:
    U = np.ascontiguousarray(np.asarray(u_seq, dtype=float))
    if U.ndim != 2 or U.shape[1] != INPUT_DIM:
        raise ValueError(f"input sequence must have shape (N, {INPUT_DIM}), got {U.shape}")
    if horizon is not None and U.shape[0] != horizon:
        raise ValueError(f"input sequence length {U.shape[0]} does not match horizon {horizon}")
    if not np.all(np.isfinite(U)):
        raise ValueError("input sequence must be finite")
    return U


def rollout(x0, u_seq, params: VehicleParams, config: MpcConfig) -> np.ndarray:
    """Predicted states x_1..x_N, shape (N, 8)."""
    x0 = _vector(x0, STATE_DIM, "x0")
    U = _sequence(u_seq, config.horizon)
    return _kernels.rollout(x0, U, params.as_array(), config.dt)


def _cost_args(x0, u_seq, ref, weights, params, config, u_prev):
    x0 = _vector(x0, STATE_DIM, "x0")
    U = _sequence(u_seq, config.horizon)
    u_d = _vector(ref.u_d, INPUT_DIM, "u_d")
    u_prev = u_d if u_prev is None else _vector(u_prev, INPUT_DIM, "u_prev")
    return (x0, U, ref.states(config.horizon), u_d, u_prev,
            weights.Q_x, weights.Q_u, weights.Q_du, params.as_array(), config.dt)


def cost(x0, u_seq, ref: MpcReference, weights: MpcWeights, params: VehicleParams,
         config: MpcConfig, u_prev=None) -> float:
    """Horizon cost; ``u_prev`` defaults to the steady-state input."""
    return float(_kernels.cost(*_cost_args(x0, u_seq, ref, weights, params, config, u_prev)))


def cost_gradient(x0, u_seq, ref: MpcReference, weights: MpcWeights, params: VehicleParams,
                  config: MpcConfig, u_prev=None) -> np.ndarray:
    """Gradient of :func:`cost` w.r.t. the input sequence, shape (N, 3)."""
    _, G = _kernels.cost_and_gradient(*_cost_args(x0, u_seq, ref, weights, params, config, u_prev))
    return G


def project_inputs(u_seq, bounds) -> np.ndarray:
    """Clamp each input component into its ``[lo, hi]`` interval."""
    U = np.asarray(u_seq, dtype=float)
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    return np.clip(U, lo, hi)


def warm_shift(prev: MpcSolution | np.ndarray) -> np.ndarray:
    """Drop the first input and repeat the last one."""
    U = prev.u_seq if isinstance(prev, MpcSolution) else np.asarray(prev, dtype=float)
    return np.concatenate([U[1:], U[-1:]], axis=0)


class MpcController:
    """Projected-gradient MPC with an optional warm start.

    Parameters
    ----------
    params : VehicleParams
        Prediction model parameters.
    config : MpcConfig
        Horizon, sampling time, input box and solver settings.
    weights : MpcWeights
        Quadratic cost weights.
    """

    def __init__(self, params: VehicleParams | None = None, config: MpcConfig | None = None,
                 weights: MpcWeights | None = None):
        self.params = params or VehicleParams()
        self.config = config or MpcConfig()
        self.weights = weights or MpcWeights()
        self._prm = self.params.as_array()
        self._lo = self.config.lower
        self._hi = self.config.upper
        self.last_solution: MpcSolution | None = None

    @property
    def u_d(self) -> np.ndarray:
        return self.params.hover_input()

    def reference(self, x_d) -> MpcReference:
        return MpcReference(np.asarray(x_d, dtype=float), self.u_d)

    def solve(self, x0, ref: MpcReference, warm_start: MpcSolution | None = None,
              u_prev=None) -> MpcSolution:
        cfg = self.config
        if abs(float(ref.u_d[0]) - self.params.g) > 1e-12:
            raise ValueError("reference thrust must equal the model's gravity")
        if warm_start is not None:
            if warm_start.horizon != cfg.horizon:
                raise ValueError("warm start length does not match horizon")
            U0 = warm_shift(warm_start)
        else:
            U0 = np.tile(self.u_d, (cfg.horizon, 1))
        args = _cost_args(x0, U0, ref, self.weights, self.params, cfg, u_prev)
        t0 = time.perf_counter()
        U, J0, J, iters, pg, status = _kernels.solve(
            *args, self._lo, self._hi, cfg.max_iter, cfg.step_size, cfg.tol, cfg.max_halvings)
        wall = time.perf_counter() - t0
        if status == _kernels.DIVERGED:
            raise SolverDiverged("non-finite cost during projected-gradient iterations", iters)
        # descent invariant
        assert J <= J0, (J, J0)
        sol = MpcSolution(U, float(J), float(J0), int(iters), float(pg), wall,
                          status == _kernels.SOLVED)
        self.last_solution = sol
        return sol

    def step(self, x0, ref: MpcReference, u_prev=None) -> MpcSolution:
        """Solve warm-started from the previous call's solution."""
        return self.solve(x0, ref, self.last_solution, u_prev)

    def reset(self):
        self.last_solution = None
