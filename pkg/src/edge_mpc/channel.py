"""Delay-injecting message channel and the d1/d2/d3 delay ledger."""
from __future__ import annotations

import csv
import heapq
import itertools
import math
import threading
from dataclasses import dataclass
from functools import cached_property
from typing import Any

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

DELAY_KINDS = ("constant", "uniform", "truncated-lognormal")
# quantile of the untruncated lognormal placed at the configured maximum
MAX_QUANTILE = 0.9999


class ChannelClosed(RuntimeError):
    pass


@dataclass(frozen=True)
class DelayModel:
    """Distribution of one-way delays, in seconds.

    ``truncated-lognormal`` puts the 0.9999 quantile of the base lognormal at
    ``max``, rejects draws above ``max``, and shifts the log-mean so the
    truncated distribution has mean ``mean``.
    """

    kind: str = "constant"
    mean: float = 0.0
    max: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise ValueError(f"unknown delay kind {self.kind!r}; expected one of {DELAY_KINDS}")
        if not (math.isfinite(self.mean) and math.isfinite(self.max)):
            raise ValueError("delay mean and max must be finite")
        if self.kind == "constant" and self.max < self.mean:
            object.__setattr__(self, "max", float(self.mean))
        if not 0.0 <= self.mean <= self.max:
            raise ValueError("delay model requires 0 <= mean <= max")

    @cached_property
    def lognormal_params(self) -> tuple[float, float]:
        """(mu, sigma) of the base lognormal before truncation."""
        m, hi = self.mean, self.max
        z = float(ndtri(MAX_QUANTILE))
        ratio = math.log(hi / m)
        # exp(mu + sigma^2/2) = m and exp(mu + z*sigma) = hi
        disc = z * z - 2.0 * ratio
        sigma = z - math.sqrt(disc) if disc > 0 else z
        log_hi = math.log(hi)

        def truncated_mean_gap(mu):
            base = math.exp(mu + 0.5 * sigma * sigma)
            kept = ndtr((log_hi - mu) / sigma)
            return base * ndtr((log_hi - mu - sigma * sigma) / sigma) / kept - m

        mu0 = math.log(m) - 0.5 * sigma * sigma
        mu = brentq(truncated_mean_gap, mu0 - 5.0, min(mu0 + 5.0, log_hi + 10.0))
        return mu, sigma

    def sampler(self) -> DelaySampler:
        return DelaySampler(self)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean, "max": self.max, "seed": self.seed}


def sample_delay(model: DelayModel, rng: np.random.Generator) -> float:
    """One delay draw in ``[0, model.max]``."""
    if model.kind == "constant" or model.mean == model.max or model.mean == 0.0:
        return float(model.mean)
    if model.kind == "uniform":
        half = min(model.mean, model.max - model.mean)
        return float(rng.uniform(model.mean - half, model.mean + half))
    mu, sigma = model.lognormal_params
    while True:
        d = float(rng.lognormal(mu, sigma))
        if d <= model.max:
            return d


class DelaySampler:
    """Seeded stream of delays for one model."""

    def __init__(self, model: DelayModel):
        self.model = model
        self.rng = np.random.default_rng(model.seed)

    def __call__(self) -> float:
        d = sample_delay(self.model, self.rng)
        assert 0.0 <= d <= self.model.max
        return d


@dataclass(frozen=True)
class ChannelMessage:
    seq: int
    payload: Any
    t_sent: float
    t_deliver: float
    delay_applied: float


class DelayChannel:
    """Thread-safe queue that releases each message once its delay has elapsed.

    Messages may be delivered out of send order when their delays differ.
    """

    def __init__(self, model: DelayModel | None = None):
        self.model = model or DelayModel()
        self._sampler = self.model.sampler()
        self._heap: list[tuple[float, int, ChannelMessage]] = []
        self._seq = itertools.count(1)
        self._lock = threading.Lock()
        self._closed = False

    def send(self, payload, t_now: float, delay: float | None = None) -> int:
        """Enqueue ``payload``; ``delay`` overrides the model draw. Returns the seq."""
        return self.send_message(payload, t_now, delay).seq

    def send_message(self, payload, t_now: float, delay: float | None = None) -> ChannelMessage:
        with self._lock:
            if self._closed:
                raise ChannelClosed("send on closed channel")
            d = self._sampler() if delay is None else float(delay)
            if not (math.isfinite(d) and d >= 0.0):
                raise ValueError(f"delay {d} out of range")
            seq = next(self._seq)
            msg = ChannelMessage(seq, payload, t_now, t_now + d, d)
            heapq.heappush(self._heap, (msg.t_deliver, seq, msg))
            return msg

    def poll(self, t_now: float) -> list[ChannelMessage]:
        """Messages due by ``t_now``, ordered by delivery time then seq."""
        out = []
        with self._lock:
            while self._heap and self._heap[0][0] <= t_now:
                out.append(heapq.heappop(self._heap)[2])
        return out

    def next_delivery(self) -> float | None:
        with self._lock:
            return self._heap[0][0] if self._heap else None

    def __len__(self):
        with self._lock:
            return len(self._heap)

    def close(self):
        with self._lock:
            self._closed = True

    @property
    def closed(self) -> bool:
        return self._closed


LEDGER_COLUMNS = ("seq", "d1", "exec", "downlink", "d2", "d3")


@dataclass(frozen=True)
class LedgerRow:
    seq: int
    d1: float
    exec: float
    downlink: float

    @property
    def d2(self) -> float:
        return self.d1 + self.exec

    @property
    def d3(self) -> float:
        return self.d2 + self.downlink

    def as_tuple(self) -> tuple:
        return (self.seq, self.d1, self.exec, self.downlink, self.d2, self.d3)


class DelayLedger:
    """Per-command delay bookkeeping: d2 = d1 + exec, d3 = d2 + downlink."""

    def __init__(self):
        self.rows: list[LedgerRow] = []

    def record(self, seq: int, d1: float, exec: float, downlink: float) -> LedgerRow:
        for name, value in (("d1", d1), ("exec", exec), ("downlink", downlink)):
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a finite non-negative delay, got {value}")
        row = LedgerRow(int(seq), float(d1), float(exec), float(downlink))
        self.rows.append(row)
        return row

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LEDGER_COLUMNS)
            for row in self.rows:
                w.writerow([row.seq, *(repr(v) for v in row.as_tuple()[1:])])


def ledger_record(ledger: DelayLedger, seq: int, d1: float, exec: float, downlink: float) -> LedgerRow:
    return ledger.record(seq, d1, exec, downlink)
