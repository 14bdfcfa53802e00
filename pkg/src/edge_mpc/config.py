"""JSON run configuration: blocks vehicle, mpc, weights, trajectory, network, run.

Errors name the offending key path, e.g. ``mpc.horizon``.
"""
from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .channel import DelayModel
from .dynamics import VehicleParams
from .harness import RunConfig
from .mpc import MpcConfig, MpcWeights, _psd
from .trajectories import TrajectorySpec

BLOCKS = ("vehicle", "mpc", "weights", "trajectory", "network", "run")
REQUIRED = ("mpc.horizon", "mpc.dt", "trajectory.kind", "run.duration")
BOUND_NAMES = ("thrust", "phi_d", "theta_d")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _block(doc: dict, name: str) -> dict:
    block = doc.get(name, {})
    if not isinstance(block, dict):
        raise ConfigError(name, "must be an object")
    return block


def _check_keys(block: dict, prefix: str, allowed):
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{prefix}.{key}", "unknown key")


def _num(block: dict, prefix: str, key: str, default=None, integer=False):
    path = f"{prefix}.{key}"
    if key not in block:
        if default is None and path in REQUIRED:
            raise ConfigError(path, "missing required key")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(path, "must be a finite number")
    if integer:
        if int(v) != v:
            raise ConfigError(path, "must be an integer")
        return int(v)
    return float(v)


def _vec(block: dict, prefix: str, key: str, n: int, default=None):
    if key not in block:
        return default
    v = block[key]
    if not isinstance(v, list) or len(v) != n:
        raise ConfigError(f"{prefix}.{key}", f"must be a list of {n} numbers")
    return tuple(_num({"v": x}, f"{prefix}.{key}", "v") for x in v)


def _matrix(block: dict, key: str, dim: int):
    path = f"weights.{key}"
    v = block[key]
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "must be a list of numbers or a matrix") from None
    if arr.shape not in ((dim,), (dim, dim)):
        raise ConfigError(path, f"must be a length-{dim} diagonal or a {dim}x{dim} matrix")
    return arr


def _wrap(path: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _delay(block: dict, prefix: str) -> DelayModel:
    if not isinstance(block, dict):
        raise ConfigError(prefix, "must be an object")
    _check_keys(block, prefix, ("kind", "mean", "max", "seed"))
    kind = block.get("kind", "constant")
    if not isinstance(kind, str):
        raise ConfigError(f"{prefix}.kind", "must be a string")
    mean = _num(block, prefix, "mean", 0.0)
    return _wrap(prefix, DelayModel, kind, mean, _num(block, prefix, "max", mean),
                 _num(block, prefix, "seed", 0, integer=True))


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in doc:
        if key not in BLOCKS:
            raise ConfigError(key, "unknown block")
    for path in REQUIRED:
        block, key = path.split(".")
        if block not in doc:
            raise ConfigError(block, "missing required block")
        if key not in _block(doc, block):
            raise ConfigError(path, "missing required key")

    veh = _block(doc, "vehicle")
    _check_keys(veh, "vehicle", ("g", "damping", "k_phi", "k_theta", "tau_phi", "tau_theta"))
    d = VehicleParams()
    vehicle = _wrap("vehicle", VehicleParams,
                    g=_num(veh, "vehicle", "g", d.g),
                    damping=_vec(veh, "vehicle", "damping", 3, d.damping),
                    k_phi=_num(veh, "vehicle", "k_phi", d.k_phi),
                    k_theta=_num(veh, "vehicle", "k_theta", d.k_theta),
                    tau_phi=_num(veh, "vehicle", "tau_phi", d.tau_phi),
                    tau_theta=_num(veh, "vehicle", "tau_theta", d.tau_theta))

    mpc = _block(doc, "mpc")
    _check_keys(mpc, "mpc", ("horizon", "dt", "bounds", "max_iter", "step_size", "tol", "max_halvings"))
    dm = MpcConfig()
    bounds = list(dm.bounds)
    raw_bounds = mpc.get("bounds", {})
    if not isinstance(raw_bounds, dict):
        raise ConfigError("mpc.bounds", "must be an object")
    _check_keys(raw_bounds, "mpc.bounds", BOUND_NAMES)
    for i, name in enumerate(BOUND_NAMES):
        b = _vec(raw_bounds, "mpc.bounds", name, 2)
        if b is not None:
            bounds[i] = b
    mpc_cfg = _wrap("mpc", MpcConfig,
                    horizon=_num(mpc, "mpc", "horizon", integer=True),
                    dt=_num(mpc, "mpc", "dt"),
                    bounds=tuple(bounds),
                    max_iter=_num(mpc, "mpc", "max_iter", dm.max_iter, integer=True),
                    step_size=_num(mpc, "mpc", "step_size", dm.step_size),
                    tol=_num(mpc, "mpc", "tol", dm.tol),
                    max_halvings=_num(mpc, "mpc", "max_halvings", dm.max_halvings, integer=True))

    w = _block(doc, "weights")
    _check_keys(w, "weights", ("Q_x", "Q_u", "Q_du"))
    mats = {}
    for key, dim in (("Q_x", 8), ("Q_u", 3), ("Q_du", 3)):
        if key in w:
            mats[key] = _wrap(f"weights.{key}", _psd, key, _matrix(w, key, dim), dim)
    weights = MpcWeights(**mats)

    tr = _block(doc, "trajectory")
    _check_keys(tr, "trajectory", ("kind", "radius", "omega", "center", "climb_rate", "growth_rate", "duration"))
    dt_ = TrajectorySpec()
    if not isinstance(tr["kind"], str):
        raise ConfigError("trajectory.kind", "must be a string")
    trajectory = _wrap("trajectory", TrajectorySpec,
                       kind=tr["kind"],
                       radius=_num(tr, "trajectory", "radius", dt_.radius),
                       omega=_num(tr, "trajectory", "omega", dt_.omega),
                       center=_vec(tr, "trajectory", "center", 3, dt_.center),
                       climb_rate=_num(tr, "trajectory", "climb_rate", dt_.climb_rate),
                       growth_rate=_num(tr, "trajectory", "growth_rate", dt_.growth_rate),
                       duration=_num(tr, "trajectory", "duration", dt_.duration))

    net = _block(doc, "network")
    _check_keys(net, "network", ("uplink", "downlink", "exec"))
    uplink = _delay(net.get("uplink", {}), "network.uplink")
    downlink = _delay(net.get("downlink", {}), "network.downlink")
    ex = net.get("exec", {})
    if not isinstance(ex, dict):
        raise ConfigError("network.exec", "must be an object")
    _check_keys(ex, "network.exec", ("mode", "time"))
    exec_mode = ex.get("mode", "constant")

    run = _block(doc, "run")
    _check_keys(run, "run", ("duration", "seed", "tolerance", "transient", "plant_substeps", "initial_state"))
    dr = RunConfig()
    return _wrap("run", RunConfig,
                 vehicle=vehicle, mpc=mpc_cfg, weights=weights, trajectory=trajectory,
                 uplink=uplink, downlink=downlink,
                 exec_mode=exec_mode,
                 exec_time=_num(ex, "network.exec", "time", dr.exec_time),
                 seed=_num(run, "run", "seed", 0, integer=True),
                 duration=_num(run, "run", "duration"),
                 tolerance=_num(run, "run", "tolerance", dr.tolerance),
                 transient=_num(run, "run", "transient", dr.transient),
                 plant_substeps=_num(run, "run", "plant_substeps", 1, integer=True),
                 initial_state=_vec(run, "run", "initial_state", 8))


def config_to_dict(cfg: RunConfig) -> dict:
    """Inverse of :func:`parse_config`."""
    v, m = cfg.vehicle, cfg.mpc
    doc = {
        "vehicle": {"g": v.g, "damping": list(v.damping), "k_phi": v.k_phi, "k_theta": v.k_theta,
                    "tau_phi": v.tau_phi, "tau_theta": v.tau_theta},
        "mpc": {"horizon": m.horizon, "dt": m.dt,
                "bounds": {n: list(b) for n, b in zip(BOUND_NAMES, m.bounds)},
                "max_iter": m.max_iter, "step_size": m.step_size, "tol": m.tol,
                "max_halvings": m.max_halvings},
        "weights": {k: getattr(cfg.weights, k).tolist() for k in ("Q_x", "Q_u", "Q_du")},
        "trajectory": cfg.trajectory.to_dict(),
        "network": {"uplink": cfg.uplink.to_dict(), "downlink": cfg.downlink.to_dict(),
                    "exec": {"mode": cfg.exec_mode, "time": cfg.exec_time}},
        "run": {"duration": cfg.duration, "seed": cfg.seed, "tolerance": cfg.tolerance,
                "transient": cfg.transient, "plant_substeps": cfg.plant_substeps},
    }
    if cfg.initial_state is not None:
        doc["run"]["initial_state"] = list(cfg.initial_state)
    return doc


def shipped_configs() -> dict[str, Path]:
    """Example configs bundled with the package, by name."""
    root = resources.files("edge_mpc") / "configs"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def resolve_config_path(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    shipped = shipped_configs()
    if str(name_or_path) in shipped:
        return shipped[str(name_or_path)]
    raise FileNotFoundError(f"no config file or bundled config named {name_or_path!r}")


def load_config(name_or_path) -> RunConfig:
    path = resolve_config_path(name_or_path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return parse_config(doc)
