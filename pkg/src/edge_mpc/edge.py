"""Cross-process loop: the edge controller service and the vehicle-side client.

The vehicle (``fly``) ticks in real time, injects uplink and downlink delays
locally, and ships its state plus reference window to the edge (``serve``),
which answers each state with one command.
"""
from __future__ import annotations

import logging
import math
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .channel import DelayChannel
from .harness import EdgeController, RunConfig, RunReport, _integrate, _Recorder, reference_at, _runtime_block
from .mpc import MpcController
from .protocol import (
    PROTOCOL_VERSION, CommandMsg, ErrorMsg, FramedSocket, Hello, HelloAck, ProtocolError,
    StateMsg, VersionMismatch,
)
from .trajectories import TrajectorySpec, horizon_states

log = logging.getLogger(__name__)

DEFAULT_PORT = 7501
# reference average execution time reported for context only
REFERENCE_EXEC_AVG = 0.0141


class ConnectionFailed(OSError):
    pass


@dataclass
class SessionTrace:
    """What the server saw: one entry per processed state."""

    state_seqs: list = field(default_factory=list)
    command_seqs: list = field(default_factory=list)
    t_edge_in: list = field(default_factory=list)
    t_edge_out: list = field(default_factory=list)
    errors: int = 0


class EdgeServer:
    """Binds on construction; :meth:`serve_one` handles a single session."""

    def __init__(self, config: RunConfig, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 protocol_version: int = PROTOCOL_VERSION):
        self.config = config
        self.protocol_version = protocol_version
        try:
            self.sock = socket.create_server((host, port))
        except OSError as exc:
            raise ConnectionFailed(f"cannot bind {host}:{port}: {exc}") from exc
        self.port = self.sock.getsockname()[1]
        _kernels.warmup()

    def close(self):
        self.sock.close()

    def serve_one(self, timeout: float | None = None) -> SessionTrace:
        self.sock.settimeout(timeout)
        conn, peer = self.sock.accept()
        conn.settimeout(None)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        log.info("session from %s:%s", *peer[:2])
        link = FramedSocket(conn)
        try:
            return self._session(link)
        finally:
            link.close()

    def _handshake(self, link: FramedSocket) -> Hello:
        try:
            hello = link.recv()
        except VersionMismatch as exc:
            link.send(ErrorMsg("version", str(exc)))
            raise
        if not isinstance(hello, Hello):
            link.send(ErrorMsg("protocol", "expected hello"))
            raise ProtocolError(f"expected hello, got {type(hello).__name__}")
        if hello.protocol_version != self.protocol_version:
            reason = f"protocol version {hello.protocol_version} != {self.protocol_version}"
            link.send(ErrorMsg("version", reason))
            raise VersionMismatch(reason)
        try:
            trajectory = TrajectorySpec(**hello.trajectory) if hello.trajectory else self.config.trajectory
        except (TypeError, ValueError) as exc:
            link.send(ErrorMsg("protocol", f"bad trajectory: {exc}"))
            raise ProtocolError(f"bad trajectory in hello: {exc}") from None
        link.send(HelloAck(self.protocol_version))
        return hello, trajectory

    def _session(self, link: FramedSocket) -> SessionTrace:
        hello, trajectory = self._handshake(link)
        cfg = self.config
        peer_mpc = hello.mpc
        if peer_mpc and (peer_mpc.get("horizon") != cfg.mpc.horizon or peer_mpc.get("dt") != cfg.mpc.dt):
            log.warning("peer MPC settings %s differ from local horizon=%s dt=%s",
                        peer_mpc, cfg.mpc.horizon, cfg.mpc.dt)
        edge = EdgeController(MpcController(cfg.vehicle, cfg.mpc, cfg.weights), trajectory)
        trace = SessionTrace()
        last_seq = 0
        while True:
            try:
                msg = link.recv()
            except (ConnectionError, OSError):
                break
            if msg is None:
                break
            t_in = time.time()
            if not isinstance(msg, StateMsg):
                raise ProtocolError(f"unexpected {msg.type} message in session")
            trace.state_seqs.append(msg.seq)
            if msg.seq <= last_seq:
                continue
            last_seq = msg.seq
            u, _, err = edge.handle(msg.t_plant, np.asarray(msg.x), msg.ref_window)
            t_out = time.time()
            trace.errors += err is not None
            try:
                link.send(CommandMsg(msg.seq, msg.t_plant, t_in, t_out, tuple(u), err))
            except OSError:
                break
            trace.command_seqs.append(msg.seq)
            trace.t_edge_in.append(t_in)
            trace.t_edge_out.append(t_out)
        log.info("session ended after %d commands", len(trace.command_seqs))
        return trace


def serve(config: RunConfig, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
          protocol_version: int = PROTOCOL_VERSION, timeout: float | None = None) -> SessionTrace:
    server = EdgeServer(config, host, port, protocol_version)
    try:
        return server.serve_one(timeout)
    finally:
        server.close()


def _split_delays(t_plant, t_in, t_out, t_recv):
    """One-way delays from cross-host stamps, repaired when skew makes them negative.

    Returns ``(d1, exec, downlink, repaired)``; d1 + downlink always equals the
    round trip minus the edge execution time.
    """
    exec_ = max(t_out - t_in, 0.0)
    net = max(t_recv - t_plant - exec_, 0.0)
    d1, down = t_in - t_plant, t_recv - t_out
    if d1 >= 0 and down >= 0:
        return d1, exec_, down, False
    d1 = min(max(d1, 0.0), net)
    return d1, exec_, net - d1, True


def fly(config: RunConfig, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
        protocol_version: int = PROTOCOL_VERSION, connect_timeout: float = 5.0,
        drain: float = 0.5) -> RunReport:
    """Run the plant in real time against a remote edge controller."""
    try:
        sock = socket.create_connection((host, port), timeout=connect_timeout)
    except OSError as exc:
        raise ConnectionFailed(f"cannot connect to {host}:{port}: {exc}") from exc
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    link = FramedSocket(sock)
    try:
        return _fly_session(link, config, protocol_version, drain)
    finally:
        link.close()


def _fly_session(link: FramedSocket, config: RunConfig, protocol_version: int, drain: float) -> RunReport:
    cfg = config
    link.send(Hello(protocol_version, {"horizon": cfg.mpc.horizon, "dt": cfg.mpc.dt},
                    cfg.trajectory.to_dict()))
    reply = link.recv()
    if isinstance(reply, ErrorMsg):
        if reply.code == "version":
            raise VersionMismatch(reply.reason)
        raise ProtocolError(f"edge rejected session: {reply.reason}")
    if not isinstance(reply, HelloAck):
        raise ProtocolError("expected hello-ack")
    if reply.protocol_version != protocol_version:
        raise VersionMismatch(f"edge speaks protocol {reply.protocol_version}")

    up_model, down_model = cfg.channel_models()
    uplink, downlink = DelayChannel(up_model), DelayChannel(down_model)
    stop = threading.Event()
    lost = threading.Event()

    def sender():
        while not stop.is_set():
            for m in uplink.poll(time.time()):
                try:
                    link.send(m.payload)
                except OSError:
                    lost.set()
                    return
            nxt = uplink.next_delivery()
            wait = 0.001 if nxt is None else min(max(nxt - time.time(), 0.0), 0.001)
            stop.wait(wait)

    def reader():
        while True:
            try:
                msg = link.recv()
            except (OSError, ProtocolError) as exc:
                if not stop.is_set():
                    log.error("edge link failed: %s", exc)
                    lost.set()
                return
            if msg is None:
                if not stop.is_set():
                    lost.set()
                return
            if isinstance(msg, CommandMsg):
                downlink.send(msg, time.time())

    threads = [threading.Thread(target=sender, daemon=True), threading.Thread(target=reader, daemon=True)]
    for th in threads:
        th.start()

    dt, n, params = cfg.mpc.dt, cfg.steps, cfg.vehicle
    rec = _Recorder(n)
    x = cfg.start_state()
    u = params.hover_input()
    applied_seq = 0
    repaired = 0
    exec_samples = []

    def collect(now):
        nonlocal applied_seq, u, repaired
        delivered = downlink.poll(now)
        for m in delivered:
            c = m.payload
            d1, ex, down, fixed = _split_delays(c.t_plant_echo, c.t_edge_in, c.t_edge_out, m.t_deliver)
            repaired += fixed
            exec_samples.append(ex)
            rec.command(c.seq, d1, ex, down, ex * 1e3, c.error is not None)
        fresh = [m.payload for m in delivered if m.payload.seq > applied_seq]
        if fresh:
            newest = max(fresh, key=lambda c: c.seq)
            applied_seq, u = newest.seq, np.asarray(newest.u, dtype=float)

    t0 = time.time()
    steps_done = 0
    for k in range(n):
        t = k * dt
        delay = t0 + t - time.time()
        if delay > 0:
            time.sleep(delay)
        if lost.is_set():
            break
        now = time.time()
        window = horizon_states(cfg.trajectory, min(t, cfg.trajectory.duration), cfg.mpc.horizon, dt)
        uplink.send(StateMsg(k + 1, now, tuple(x), tuple(map(tuple, window))), now)
        collect(now)
        rec.tick(k, t, x, reference_at(cfg.trajectory, t), u, applied_seq, cfg.tolerance)
        x = _integrate(x, u, params, dt, cfg.plant_substeps)
        steps_done = k + 1

    deadline = time.time() + drain
    while not lost.is_set() and time.time() < deadline and (len(uplink) or len(downlink)
                                                             or len(exec_samples) < steps_done):
        time.sleep(0.005)
        collect(time.time())
    stop.set()
    try:
        link.sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    for th in threads:
        th.join(timeout=1.0)

    aborted = lost.is_set() and steps_done < n
    rows = {name: col[:steps_done] for name, col in rec.rows.items()} if aborted else rec.rows
    runtime = _runtime_block(exec_samples, time.time() - t0)
    runtime.update({
        "clock": "wall",
        "aborted": aborted,
        "skew_repaired_rows": repaired,
        "exec_avg_s": float(np.mean(exec_samples)) if exec_samples else None,
        "reference_exec_avg_s": REFERENCE_EXEC_AVG,
    })
    if aborted:
        log.error("connection lost after %d of %d steps", steps_done, n)
    return RunReport(rows, cfg.tolerance, cfg.transient, runtime)


def exec_context_line(report: RunReport) -> str:
    avg = report.runtime.get("exec_avg_s")
    if avg is None or not math.isfinite(avg):
        return "edge exec: no samples"
    return f"edge exec avg {avg * 1e3:.2f} ms (reference setup: {REFERENCE_EXEC_AVG * 1e3:.1f} ms)"
