"""Closed-loop runner on a simulated clock, plus run reports and metrics.

Each tick of length ``dt``:

1. the plant emits its state into the uplink channel;
2. the edge consumes delivered states (freshest first, stale ones dropped),
   solves, and emits a command into the downlink channel once its
   execution time has elapsed;
3. the plant applies the freshest delivered command (zero-order hold);
4. the plant integrates one tick.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import DelayChannel, DelayLedger, DelayModel
from .dynamics import VehicleParams, euler_step
from .mpc import MpcConfig, MpcController, MpcWeights, SolverDiverged
from .trajectories import TrajectorySpec, horizon_states, sample

log = logging.getLogger(__name__)

TOLERANCE = math.sqrt(0.68)
TRANSIENT = 3.0
FAILED_FRACTION = 0.10
STATE_NAMES = ("px", "py", "pz", "vx", "vy", "vz", "phi", "theta")
INPUT_NAMES = ("T", "phi_d", "theta_d")
DELAY_NAMES = ("d1", "exec", "downlink", "d2", "d3")
COLUMNS = (
    ("t",) + STATE_NAMES + tuple("ref_" + n for n in STATE_NAMES) + INPUT_NAMES
    + ("cmd_seq", "flagged", "error", "in_tol") + DELAY_NAMES + ("solve_ms",)
)
INT_COLUMNS = ("cmd_seq", "flagged", "in_tol")


@dataclass(frozen=True)
class RunConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    weights: MpcWeights = field(default_factory=MpcWeights)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    uplink: DelayModel = field(default_factory=DelayModel)
    downlink: DelayModel = field(default_factory=DelayModel)
    exec_mode: str = "constant"
    exec_time: float = 0.0141
    seed: int = 0
    duration: float = 60.0
    tolerance: float = TOLERANCE
    transient: float = TRANSIENT
    plant_substeps: int = 1
    initial_state: tuple | None = None

    def __post_init__(self):
        if self.exec_mode not in ("constant", "measured"):
            raise ValueError("exec_mode must be 'constant' or 'measured'")
        if not (self.exec_time >= 0 and math.isfinite(self.exec_time)):
            raise ValueError("exec_time must be a finite non-negative number")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.transient < 0:
            raise ValueError("transient must be non-negative")
        if int(self.plant_substeps) != self.plant_substeps or self.plant_substeps < 1:
            raise ValueError("plant_substeps must be a positive integer")
        if self.initial_state is not None and len(self.initial_state) != 8:
            raise ValueError("initial_state must have 8 components")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.mpc.dt))

    def channel_models(self) -> tuple[DelayModel, DelayModel]:
        """Uplink and downlink models with seeds derived from the run seed."""
        up, down = np.random.SeedSequence(self.seed).generate_state(2)
        return (replace(self.uplink, seed=int(up) ^ self.uplink.seed),
                replace(self.downlink, seed=int(down) ^ self.downlink.seed))

    def start_state(self) -> np.ndarray:
        if self.initial_state is not None:
            return np.asarray(self.initial_state, dtype=float)
        x = np.zeros(8)
        x[0:3] = sample(self.trajectory, 0.0).x_d[0:3]
        return x


def euclidean_error(p, ref_p) -> float:
    return float(np.linalg.norm(np.asarray(p, dtype=float) - np.asarray(ref_p, dtype=float)))


def reference_at(spec: TrajectorySpec, t: float) -> np.ndarray:
    return sample(spec, min(max(t, 0.0), spec.duration)).x_d


class EdgeController:
    """Edge-side logic: reference lookup, warm-started solve, safe fallback.

    Shared by the in-process loop and the socket server.
    """

    def __init__(self, controller: MpcController, trajectory: TrajectorySpec):
        self.controller = controller
        self.trajectory = trajectory
        self.last_u = controller.u_d

    def handle(self, t_plant: float, x, ref_window=None):
        """Returns ``(u, solution_or_None, error_or_None)``."""
        cfg = self.controller.config
        if ref_window is not None and len(ref_window) == cfg.horizon:
            x_d = np.asarray(ref_window, dtype=float)
        else:
            t = min(max(t_plant, 0.0), self.trajectory.duration)
            x_d = horizon_states(self.trajectory, t, cfg.horizon, cfg.dt)
        ref = self.controller.reference(x_d)
        try:
            sol = self.controller.step(x, ref, u_prev=self.last_u)
        except SolverDiverged as exc:
            log.warning("solver diverged at t=%.3f: %s", t_plant, exc)
            self.controller.reset()
            return self.last_u.copy(), None, "solver-diverged"
        self.last_u = sol.first_input
        return sol.first_input, sol, None


@dataclass
class RunReport:
    """Per-step columns plus run parameters needed to summarize them."""

    columns: dict
    tolerance: float = TOLERANCE
    transient: float = TRANSIENT
    runtime: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.columns["t"])

    def summary(self) -> dict:
        return summarize(self.columns, self.transient)

    def delay_stats(self) -> dict:
        return delay_stats(self)


class _Recorder:
    """Accumulates tick rows and per-command ledger entries."""

    def __init__(self, steps: int):
        self.steps = steps
        self.rows = {name: np.full(steps, np.nan) for name in COLUMNS}
        self.rows["cmd_seq"] = np.zeros(steps, dtype=np.int64)
        self.rows["flagged"] = np.zeros(steps, dtype=np.int64)
        self.rows["in_tol"] = np.zeros(steps, dtype=np.int64)
        self.ledger = DelayLedger()

    def tick(self, k, t, x, ref, u, cmd_seq, tolerance):
        r = self.rows
        r["t"][k] = t
        for i, n in enumerate(STATE_NAMES):
            r[n][k] = x[i]
            r["ref_" + n][k] = ref[i]
        for i, n in enumerate(INPUT_NAMES):
            r[n][k] = u[i]
        r["cmd_seq"][k] = cmd_seq
        err = euclidean_error(x[0:3], ref[0:3])
        r["error"][k] = err
        r["in_tol"][k] = int(err <= tolerance)

    def uplink(self, seq, d1):
        # every delivered state counts, including ones superseded before a solve
        if 0 < seq <= self.steps:
            self.rows["d1"][seq - 1] = d1

    def command(self, seq, d1, exec_, downlink, solve_ms, flagged):
        row = self.ledger.record(seq, d1, exec_, downlink)
        k = seq - 1
        if 0 <= k < self.steps:
            for n, v in zip(DELAY_NAMES, row.as_tuple()[1:]):
                self.rows[n][k] = v
            self.rows["solve_ms"][k] = solve_ms
            self.rows["flagged"][k] = int(flagged)


def _integrate(x, u, params, dt, substeps):
    h = dt / substeps
    for _ in range(substeps):
        x = euler_step(x, u, params, h)
    return x


def run_closed_loop(config: RunConfig) -> RunReport:
    """Simulate the networked loop; deterministic for a fixed config and seed
    when ``exec_mode`` is ``"constant"``."""
    dt = config.mpc.dt
    n = config.steps
    params = config.vehicle
    up_model, down_model = config.channel_models()
    uplink, downlink = DelayChannel(up_model), DelayChannel(down_model)
    edge = EdgeController(MpcController(params, config.mpc, config.weights), config.trajectory)
    rec = _Recorder(n)
    wall_solves = []

    x = config.start_state()
    u = params.hover_input()
    applied_seq = 0
    inbox = []
    busy_until = -math.inf
    last_processed = 0
    t_wall = time.perf_counter()
    for k in range(n):
        t = k * dt
        uplink.send((k + 1, t, x.copy()), t)
        inbox.extend(uplink.poll(t))
        while inbox:
            start = max(busy_until, inbox[0].t_deliver)
            if start > t:
                break
            batch = [m for m in inbox if m.t_deliver <= start]
            inbox = inbox[len(batch):]
            for m in batch:
                rec.uplink(m.payload[0], m.delay_applied)
            msg = max(batch, key=lambda m: m.payload[0])
            seq, t_plant, x_seen = msg.payload
            if seq <= last_processed:
                continue
            last_processed = seq
            u_cmd, sol, err = edge.handle(t_plant, x_seen)
            solve_s = sol.wall_time if sol is not None else 0.0
            wall_solves.append(solve_s)
            exec_s = solve_s if config.exec_mode == "measured" else config.exec_time
            t_out = start + exec_s
            sent = downlink.send_message((seq, u_cmd, err), t_out)
            rec.command(seq, msg.delay_applied, t_out - msg.t_deliver,
                        sent.delay_applied, exec_s * 1e3, err is not None)
            busy_until = t_out
        fresh = [m for m in downlink.poll(t) if m.payload[0] > applied_seq]
        if fresh:
            newest = max(fresh, key=lambda m: m.payload[0])
            applied_seq, u = newest.payload[0], np.asarray(newest.payload[1], dtype=float)
        rec.tick(k, t, x, reference_at(config.trajectory, t), u, applied_seq, config.tolerance)
        x = _integrate(x, u, params, dt, config.plant_substeps)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"plant state became non-finite at t={t}")

    runtime = _runtime_block(wall_solves, time.perf_counter() - t_wall)
    return RunReport(rec.rows, config.tolerance, config.transient, runtime)


def _runtime_block(wall_solves, wall_run) -> dict:
    ws = np.asarray(wall_solves, dtype=float) * 1e3
    return {
        "wall_run_s": wall_run,
        "solves": int(ws.size),
        "wall_solve_ms_median": float(np.median(ws)) if ws.size else None,
        "wall_solve_ms_mean": float(np.mean(ws)) if ws.size else None,
        "wall_solve_ms_max": float(np.max(ws)) if ws.size else None,
    }


def _stat(values: np.ndarray) -> dict:
    v = values[np.isfinite(values)]
    if v.size == 0:
        return {"avg": None, "max": None, "count": 0}
    return {"avg": float(np.mean(v)), "max": float(np.max(v)), "count": int(v.size)}


def delay_stats(report: RunReport) -> dict:
    """Mean and max of each delay column over answered control steps."""
    if report.steps == 0:
        raise ValueError("delay statistics need at least one step")
    return {name: _stat(np.asarray(report.columns[name], dtype=float)) for name in DELAY_NAMES}


def summarize(columns: dict, transient: float = TRANSIENT) -> dict:
    """Summary fields; a pure function of the CSV columns."""
    t = np.asarray(columns["t"], dtype=float)
    steps = int(t.size)
    err = np.asarray(columns["error"], dtype=float)
    in_tol = np.asarray(columns["in_tol"], dtype=np.int64)
    flagged = int(np.sum(np.asarray(columns["flagged"], dtype=np.int64)))
    after = t >= transient
    n_after = int(np.sum(after))
    solve = np.asarray(columns["solve_ms"], dtype=float)
    solve = solve[np.isfinite(solve)]
    return {
        "steps": steps,
        "transient_s": float(transient),
        "error_mean": float(np.mean(err)) if steps else None,
        "error_max": float(np.max(err)) if steps else None,
        "error_max_after_transient": float(np.max(err[after])) if n_after else None,
        "steps_after_transient": n_after,
        "pct_in_tol_after_transient": 100.0 * float(np.sum(in_tol[after])) / n_after if n_after else None,
        "pct_in_tol": 100.0 * float(np.sum(in_tol)) / steps if steps else None,
        "flagged_steps": flagged,
        "failed": bool(steps and flagged > FAILED_FRACTION * steps),
        "solve_ms_median": float(np.median(solve)) if solve.size else None,
        "delays": {name: _stat(np.asarray(columns[name], dtype=float)) for name in DELAY_NAMES},
    }


def _fmt(name, value) -> str:
    if name in INT_COLUMNS:
        return str(int(value))
    return repr(float(value))


def export_report(report: RunReport, path) -> tuple:
    """Write ``<path>.csv`` and ``<path>.json``; returns both paths."""
    from pathlib import Path

    base = Path(path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        cols = [report.columns[n] for n in COLUMNS]
        for k in range(report.steps):
            w.writerow([_fmt(n, c[k]) for n, c in zip(COLUMNS, cols)])
    doc = {"summary": report.summary(), "tolerance": report.tolerance, "runtime": report.runtime}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")
    return csv_path, json_path


class SchemaError(ValueError):
    pass


def read_report_csv(path) -> dict:
    """Load columns written by :func:`export_report`; the header must match exactly."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None:
            raise SchemaError("empty file: missing header row")
        if tuple(header) != COLUMNS:
            raise SchemaError(f"unexpected columns; expected {','.join(COLUMNS)}")
        data = {n: [] for n in COLUMNS}
        for lineno, row in enumerate(r, start=2):
            if len(row) != len(COLUMNS):
                raise SchemaError(f"line {lineno}: expected {len(COLUMNS)} fields, got {len(row)}")
            try:
                for n, v in zip(COLUMNS, row):
                    data[n].append(int(v) if n in INT_COLUMNS else float(v))
            except ValueError as exc:
                raise SchemaError(f"line {lineno}: {exc}") from None
    return {n: np.asarray(v, dtype=np.int64 if n in INT_COLUMNS else float) for n, v in data.items()}
