"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""
import random
import threading
import time
import zlib
from dataclasses import replace

import numpy as np
import pytest

from edge_mpc.cli import main
from edge_mpc.config import load_config
from edge_mpc.dynamics import VehicleParams, VehicleState, derivative
from edge_mpc.edge import EdgeServer, fly
from edge_mpc.harness import TOLERANCE, run_closed_loop
from edge_mpc.protocol import CommandMsg, ErrorMsg, Hello, HelloAck, IncompleteFrame, ProtocolError, StateMsg, decode, encode

from test_mpc import grid_oracle_gaps, gradient_errors
from test_protocol import random_message

TRACKING = ("circular", "spiral", "helical")
REF_UP, REF_DOWN, REF_EXEC = (0.0089, 0.17), (0.0161, 0.26), 0.0141


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def delayed_runs():
    runs = {}
    for kind in TRACKING:
        cfg = load_config("circular-delays")
        cfg = replace(cfg, trajectory=replace(cfg.trajectory, kind=kind))
        runs[kind] = timed(run_closed_loop, cfg)
    return runs


@pytest.mark.criterion(1, "equilibrium suite")
def test_criterion_1_equilibrium(criterion):
    p = VehicleParams()
    dx = derivative(VehicleState.hover((0.0, 0.0, 2.0)), p.hover_input(), p)
    rep, wall = timed(run_closed_loop, load_config("hover"))
    err = rep.summary()["error_max"]
    ok = np.max(np.abs(dx)) <= 1e-12 and rep.steps * 0.02 == pytest.approx(10.0) and err <= 1e-2 and wall < 5
    criterion.record(ok, f"|f(hover)|max={np.max(np.abs(dx)):.1e}, 10 s hover error max {err:.2e} m, {wall:.2f} s")
    assert ok


@pytest.mark.criterion(2, "gradient vs central differences")
def test_criterion_2_gradient(criterion):
    errs, wall = timed(gradient_errors, 100, 2)
    ok = errs.size == 100 and errs.max() <= 1e-4 and wall < 30
    criterion.record(ok, f"max rel error {errs.max():.2e} over 100 instances, {wall:.2f} s")
    assert ok


@pytest.mark.criterion(3, "solver vs 21-level grid search (N=2)")
def test_criterion_3_grid_oracle(criterion):
    gaps, wall = timed(grid_oracle_gaps, 20, 1)
    ok = gaps.size == 20 and np.all(gaps <= 1e-2) and wall < 60
    criterion.record(ok, f"worst solver-grid gap {gaps.max():+.3e} over 20 instances, {wall:.2f} s")
    assert ok


@pytest.mark.criterion(4, "tracking at desk scale, zero delays")
def test_criterion_4_tracking(criterion):
    lines, ok = [], True
    for kind in TRACKING:
        cfg = load_config(kind)
        assert (cfg.mpc.horizon, cfg.mpc.dt, cfg.duration) == (40, 0.02, 60.0)
        assert cfg.uplink.max == cfg.downlink.max == 0.0
        rep, wall = timed(run_closed_loop, cfg)
        s = rep.summary()
        good = s["pct_in_tol_after_transient"] == 100.0 and s["error_max_after_transient"] <= TOLERANCE and wall < 120
        ok &= good
        lines.append(f"{kind} {s['pct_in_tol_after_transient']:.1f}% (max {s['error_max_after_transient']:.3f} m, {wall:.1f} s)")
    criterion.record(ok, "; ".join(lines))
    assert ok


@pytest.mark.criterion(5, "tracking with average-level delays")
def test_criterion_5_delay_robustness(criterion, delayed_runs):
    lines, ok = [], True
    for kind, (rep, wall) in delayed_runs.items():
        s = rep.summary()
        good = s["pct_in_tol_after_transient"] == 100.0 and wall < 120
        ok &= good
        lines.append(f"{kind} {s['pct_in_tol_after_transient']:.1f}% (max {s['error_max_after_transient']:.3f} m)")
    criterion.record(ok, "; ".join(lines))
    assert ok


@pytest.mark.criterion(6, "delay statistics")
def test_criterion_6_delay_stats(criterion, delayed_runs):
    cfg = load_config("circular-delays")
    assert (cfg.uplink.mean, cfg.uplink.max) == REF_UP
    assert (cfg.downlink.mean, cfg.downlink.max) == REF_DOWN
    assert cfg.exec_time == REF_EXEC
    lines, ok = [], True
    for kind, (rep, _) in delayed_runs.items():
        st = rep.delay_stats()
        up, down = st["d1"], st["downlink"]
        good = (abs(up["avg"] - cfg.uplink.mean) <= 0.1 * cfg.uplink.mean
                and abs(down["avg"] - cfg.downlink.mean) <= 0.1 * cfg.downlink.mean
                and up["max"] <= cfg.uplink.max and down["max"] <= cfg.downlink.max)
        ok &= good
        lines.append(f"{kind} up avg {up['avg'] * 1e3:.2f} ms max {up['max'] * 1e3:.1f} ms, "
                     f"down avg {down['avg'] * 1e3:.2f} ms max {down['max'] * 1e3:.1f} ms")
    criterion.record(ok, "; ".join(lines))
    assert ok


@pytest.mark.criterion(7, "full-rate config N=100, dt=0.01")
def test_criterion_7_full_rate(criterion):
    cfg = load_config("full-rate")
    assert (cfg.mpc.horizon, cfg.mpc.dt) == (100, 0.01)
    rep, wall = timed(run_closed_loop, cfg)
    s = rep.summary()
    median = rep.runtime["wall_solve_ms_median"]
    ok = rep.steps == cfg.steps and np.all(np.isfinite(rep.columns["px"])) and median is not None
    # the 14.1 ms execution average of the reference deployment is context only
    criterion.record(ok, f"{rep.steps} steps in {wall:.1f} s, median solve {median:.2f} ms "
                         f"(reference exec avg {REF_EXEC * 1e3:.1f} ms), in-tol after transient "
                         f"{s['pct_in_tol_after_transient']:.1f}%")
    assert ok


def _fuzz_decoder(n):
    rng = random.Random(8)
    valid = encode(StateMsg(1, 0.5, (1.0,) * 8, ((0.0,) * 8,)))
    for _ in range(n):
        if rng.random() < 0.5:
            data = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 64)))
        else:
            data = bytearray(valid)
            for _ in range(rng.randint(1, 6)):
                data[rng.randrange(len(data))] = rng.randrange(256)
        try:
            decode(bytes(data))
        except (ProtocolError, IncompleteFrame):
            pass
    return n


@pytest.mark.criterion(8, "protocol suite")
def test_criterion_8_protocol(criterion):
    counts = {}
    for kind in (Hello, HelloAck, ErrorMsg, StateMsg, CommandMsg):
        rng = np.random.default_rng(zlib.crc32(b"acceptance" + kind.type.encode()))
        counts[kind.type] = sum(decode(encode(m))[0] == m for m in (random_message(kind, rng) for _ in range(1000)))
    fuzzed = _fuzz_decoder(5000)

    cfg = load_config("hover")
    server = EdgeServer(cfg, "127.0.0.1", 0)
    result = {}
    th = threading.Thread(target=lambda: result.setdefault("trace", server.serve_one(timeout=30)), daemon=True)
    th.start()
    try:
        rep = fly(cfg, "127.0.0.1", server.port)
    finally:
        th.join(timeout=30)
        server.close()
    c = rep.columns
    answered = np.isfinite(c["d3"])
    ordered = bool(np.all((c["d1"][answered] <= c["d2"][answered]) & (c["d2"][answered] <= c["d3"][answered])))
    ok = (all(v == 1000 for v in counts.values()) and not rep.runtime["aborted"]
          and rep.steps == cfg.steps and answered.all() and ordered)
    criterion.record(ok, f"round-trip {counts}, {fuzzed} fuzzed frames without crash, loopback hover "
                         f"{rep.steps} steps, {int(answered.sum())} ledger rows ordered={ordered}")
    assert ok


@pytest.mark.criterion(9, "determinism")
def test_criterion_9_determinism(criterion, tmp_path, capsys):
    codes = [main(["simulate", "--config", "circular-delays", "--out", str(tmp_path / d), "--seed", "5"])
             for d in ("a", "b")]
    capsys.readouterr()
    a, b = (tmp_path / "a" / "run.csv").read_bytes(), (tmp_path / "b" / "run.csv").read_bytes()
    ok = codes == [0, 0] and a == b and len(a) > 0
    criterion.record(ok, f"two seeded runs, {len(a)} bytes each, identical={a == b}")
    assert ok
