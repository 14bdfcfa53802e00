"""Length-prefixed JSON frames exchanged between the vehicle and the edge.

A frame is a 4-byte big-endian payload length followed by a UTF-8 JSON
object carrying a ``"type"`` field.
"""
from __future__ import annotations

import json
import math
import struct
import threading
from collections import deque
from dataclasses import dataclass, field

PROTOCOL_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
_HEADER = struct.Struct(">I")


class ProtocolError(Exception):
    """Malformed frame or message; the session must be closed."""


class VersionMismatch(ProtocolError):
    pass


class IncompleteFrame(Exception):
    """More bytes are needed before a frame can be decoded."""


def _floats(values, n: int | None, name: str) -> tuple[float, ...]:
    if not isinstance(values, (list, tuple)):
        raise ProtocolError(f"{name} must be a list")
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ProtocolError(f"{name} must contain finite numbers")
        out.append(float(v))
    if n is not None and len(out) != n:
        raise ProtocolError(f"{name} must have {n} entries")
    return tuple(out)


def _number(obj: dict, key: str) -> float:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ProtocolError(f"field {key!r} must be a finite number")
    return float(v)


def _int(obj: dict, key: str) -> int:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ProtocolError(f"field {key!r} must be an integer")
    return v


@dataclass(frozen=True)
class Hello:
    protocol_version: int = PROTOCOL_VERSION
    mpc: dict = field(default_factory=dict)
    trajectory: dict = field(default_factory=dict)

    type = "hello"

    def to_json(self) -> dict:
        return {"type": self.type, "protocol_version": self.protocol_version,
                "mpc": self.mpc, "trajectory": self.trajectory}

    @classmethod
    def from_json(cls, obj: dict) -> Hello:
        mpc, traj = obj.get("mpc", {}), obj.get("trajectory", {})
        if not isinstance(mpc, dict) or not isinstance(traj, dict):
            raise ProtocolError("hello blocks must be objects")
        return cls(_int(obj, "protocol_version"), mpc, traj)


@dataclass(frozen=True)
class HelloAck:
    protocol_version: int = PROTOCOL_VERSION

    type = "hello-ack"

    def to_json(self) -> dict:
        return {"type": self.type, "protocol_version": self.protocol_version}

    @classmethod
    def from_json(cls, obj: dict) -> HelloAck:
        return cls(_int(obj, "protocol_version"))


@dataclass(frozen=True)
class ErrorMsg:
    code: str
    reason: str = ""

    type = "error"

    def to_json(self) -> dict:
        return {"type": self.type, "code": self.code, "reason": self.reason}

    @classmethod
    def from_json(cls, obj: dict) -> ErrorMsg:
        code, reason = obj.get("code"), obj.get("reason", "")
        if not isinstance(code, str) or not isinstance(reason, str):
            raise ProtocolError("error code and reason must be strings")
        return cls(code, reason)


@dataclass(frozen=True)
class StateMsg:
    seq: int
    t_plant: float
    x: tuple[float, ...]
    ref_window: tuple[tuple[float, ...], ...] | None = None

    type = "state"

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if self.ref_window is not None:
            object.__setattr__(self, "ref_window", tuple(tuple(float(v) for v in r) for r in self.ref_window))

    def to_json(self) -> dict:
        obj = {"type": self.type, "seq": self.seq, "t_plant": self.t_plant, "x": list(self.x)}
        if self.ref_window is not None:
            obj["ref_window"] = [list(r) for r in self.ref_window]
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> StateMsg:
        window = obj.get("ref_window")
        if window is not None:
            if not isinstance(window, list):
                raise ProtocolError("ref_window must be a list")
            window = tuple(_floats(r, 8, "ref_window entry") for r in window)
        return cls(_int(obj, "seq"), _number(obj, "t_plant"), _floats(obj.get("x"), 8, "x"), window)


@dataclass(frozen=True)
class CommandMsg:
    seq: int
    t_plant_echo: float
    t_edge_in: float
    t_edge_out: float
    u: tuple[float, ...]
    error: str | None = None

    type = "command"

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(float(v) for v in self.u))

    def to_json(self) -> dict:
        obj = {"type": self.type, "seq": self.seq, "t_plant_echo": self.t_plant_echo,
               "t_edge_in": self.t_edge_in, "t_edge_out": self.t_edge_out, "u": list(self.u)}
        if self.error is not None:
            obj["error"] = self.error
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> CommandMsg:
        err = obj.get("error")
        if err is not None and not isinstance(err, str):
            raise ProtocolError("command error flag must be a string")
        msg = cls(_int(obj, "seq"), _number(obj, "t_plant_echo"), _number(obj, "t_edge_in"),
                  _number(obj, "t_edge_out"), _floats(obj.get("u"), 3, "u"), err)
        if msg.t_edge_out < msg.t_edge_in:
            raise ProtocolError("t_edge_out precedes t_edge_in")
        return msg


MESSAGE_TYPES = {cls.type: cls for cls in (Hello, HelloAck, ErrorMsg, StateMsg, CommandMsg)}


def _reject_constant(name):
    raise ProtocolError(f"non-finite number {name} in payload")


def encode(msg) -> bytes:
    payload = json.dumps(msg.to_json(), allow_nan=False, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(len(payload)) + payload


def decode_payload(payload: bytes):
    if not payload:
        raise ProtocolError("empty payload")
    try:
        obj = json.loads(payload.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError, RecursionError) as exc:
        raise ProtocolError(f"malformed payload: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("payload must be a JSON object")
    cls = MESSAGE_TYPES.get(obj.get("type"))
    if cls is None:
        raise ProtocolError(f"unknown message type {obj.get('type')!r}")
    msg = cls.from_json(obj)
    if isinstance(msg, (Hello, HelloAck)) and msg.protocol_version != PROTOCOL_VERSION:
        raise VersionMismatch(f"protocol version {msg.protocol_version} != {PROTOCOL_VERSION}")
    return msg


def decode(data: bytes):
    """Decode the first frame in ``data``; returns ``(message, remaining_bytes)``.

    Raises :class:`IncompleteFrame` when ``data`` holds less than one frame.
    """
    if len(data) < _HEADER.size:
        raise IncompleteFrame(_HEADER.size - len(data))
    (length,) = _HEADER.unpack_from(data)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame length {length} exceeds limit")
    end = _HEADER.size + length
    if len(data) < end:
        raise IncompleteFrame(end - len(data))
    return decode_payload(bytes(data[_HEADER.size:end])), bytes(data[end:])


class FrameReader:
    """Incremental decoder for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list:
        self._buf.extend(chunk)
        out = []
        while True:
            try:
                msg, rest = decode(self._buf)
            except IncompleteFrame:
                return out
            out.append(msg)
            self._buf = bytearray(rest)

    @property
    def buffered(self) -> int:
        return len(self._buf)


class FramedSocket:
    """Blocking message I/O over a connected socket."""

    def __init__(self, sock):
        self.sock = sock
        self._reader = FrameReader()
        self._pending: deque = deque()
        self._send_lock = threading.Lock()

    def send(self, msg):
        data = encode(msg)
        with self._send_lock:
            self.sock.sendall(data)

    def recv(self):
        """Next message; ``None`` on orderly EOF."""
        while not self._pending:
            chunk = self.sock.recv(65536)
            if not chunk:
                if self._reader.buffered:
                    raise ProtocolError("connection closed mid-frame")
                return None
            self._pending.extend(self._reader.feed(chunk))
        return self._pending.popleft()

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass
