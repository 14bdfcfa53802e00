import csv
import math
import threading
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edge_mpc.channel import (
    ChannelClosed, DelayChannel, DelayLedger, DelayModel, ledger_record, sample_delay,
)

UPLINK = DelayModel("truncated-lognormal", 0.0089, 0.17, seed=1)
DOWNLINK = DelayModel("truncated-lognormal", 0.0161, 0.26, seed=2)


def test_constant_zero_delay():
    rng = np.random.default_rng(0)
    assert all(sample_delay(DelayModel(), rng) == 0.0 for _ in range(100))


@pytest.mark.parametrize("model", [UPLINK, DOWNLINK, DelayModel("uniform", 0.01, 0.05, 3)])
def test_empirical_mean_and_max(model):
    sampler = model.sampler()
    draws = np.array([sampler() for _ in range(100_000)])
    assert abs(draws.mean() - model.mean) <= 0.05 * model.mean
    assert draws.max() <= model.max
    assert draws.min() >= 0.0


def test_lognormal_calibration():
    mu, sigma = UPLINK.lognormal_params
    assert sigma > 0
    # truncated mean equals the configured mean analytically
    from scipy.stats import lognorm
    dist = lognorm(s=sigma, scale=math.exp(mu))
    kept = dist.cdf(UPLINK.max)
    mean = dist.expect(lambda x: x, lb=0, ub=UPLINK.max) / kept
    assert mean == pytest.approx(UPLINK.mean, rel=1e-6)


def test_model_validation():
    with pytest.raises(ValueError):
        DelayModel("uniform", 0.2, 0.1)
    with pytest.raises(ValueError):
        DelayModel("gamma", 0.1, 0.2)
    with pytest.raises(ValueError):
        DelayModel("constant", -0.1, 0.0)
    # constant with max left at default adopts the mean
    assert DelayModel("constant", 0.0141).max == 0.0141


def test_zero_delay_delivered_immediately():
    ch = DelayChannel()
    seq = ch.send("x", 1.5)
    (msg,) = ch.poll(1.5)
    assert (msg.seq, msg.payload, msg.t_deliver) == (seq, "x", 1.5)


def test_reordering_with_explicit_delays():
    ch = DelayChannel()
    s1 = ch.send("a", 0.0, delay=0.02)
    s2 = ch.send("b", 0.0, delay=0.01)
    assert [m.seq for m in ch.poll(0.05)] == [s2, s1]


def test_reordering_from_seeded_draws():
    # seed 0 of this model draws a longer delay first
    model = DelayModel("uniform", 0.015, 0.03, seed=0)
    ch = DelayChannel(model)
    m1 = ch.send_message("a", 0.0)
    m2 = ch.send_message("b", 0.0)
    assert m1.delay_applied > m2.delay_applied
    assert [m.seq for m in ch.poll(1.0)] == [m2.seq, m1.seq]


def test_poll_before_delivery_empty():
    ch = DelayChannel(DelayModel("constant", 0.1))
    ch.send("x", 0.0)
    assert ch.poll(0.05) == []
    assert ch.next_delivery() == pytest.approx(0.1)


def test_exactly_once():
    ch = DelayChannel()
    ch.send("x", 0.0)
    assert len(ch.poll(0.0)) == 1
    assert ch.poll(0.0) == []


def test_send_after_close():
    ch = DelayChannel()
    ch.close()
    assert ch.closed
    with pytest.raises(ChannelClosed):
        ch.send("x", 0.0)


def test_complete_delivery_random_sends():
    rng = np.random.default_rng(5)
    ch = DelayChannel(UPLINK)
    sent = []
    got = []
    t = 0.0
    for i in range(100):
        t += rng.uniform(0, 0.02)
        seq = ch.send(i, t)
        sent.append(i)
        assert seq == i + 1
        got.extend(ch.poll(t + rng.uniform(0, 0.01)))
    got.extend(ch.poll(t + 1.0))
    assert Counter(m.payload for m in got) == Counter(sent)
    for m in got:
        assert m.t_deliver == m.t_sent + m.delay_applied
        assert 0 <= m.delay_applied <= UPLINK.max


def test_poll_order_by_delivery_then_seq():
    ch = DelayChannel()
    for d in (0.03, 0.01, 0.01, 0.02):
        ch.send(d, 0.0, delay=d)
    out = ch.poll(1.0)
    assert [(m.t_deliver, m.seq) for m in out] == sorted((m.t_deliver, m.seq) for m in out)


def test_same_seed_same_schedule():
    a, b = DelayChannel(UPLINK), DelayChannel(UPLINK)
    times = np.arange(200) * 0.02
    for t in times:
        a.send(None, t)
        b.send(None, t)
    sa = [(m.seq, m.t_deliver) for m in a.poll(1e9)]
    sb = [(m.seq, m.t_deliver) for m in b.poll(1e9)]
    assert sa == sb


def test_concurrent_senders():
    ch = DelayChannel(DelayModel("uniform", 0.01, 0.02, 1))

    def worker(k):
        for i in range(500):
            ch.send((k, i), 0.0)

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    out = ch.poll(1.0)
    assert len(out) == 2000
    assert len({m.seq for m in out}) == 2000


def test_ledger_zero_row():
    row = ledger_record(DelayLedger(), 1, 0.0, 0.0, 0.0)
    assert row.d2 == row.d3 == 0.0


def test_ledger_average_values():
    row = ledger_record(DelayLedger(), 1, 0.0089, 0.0141, 0.0161)
    assert row.d2 == pytest.approx(0.0230, abs=1e-15)
    assert row.d3 == pytest.approx(0.0391, abs=1e-15)


@pytest.mark.parametrize("bad", [(-1e-9, 0, 0), (0, -0.1, 0), (0, 0, math.nan)])
def test_ledger_rejects_invalid(bad):
    with pytest.raises(ValueError):
        ledger_record(DelayLedger(), 1, *bad)


@given(st.lists(st.tuples(*[st.floats(0, 1)] * 3), min_size=1, max_size=50))
def test_ledger_ordering(rows):
    led = DelayLedger()
    for i, r in enumerate(rows):
        row = led.record(i, *r)
        assert row.d1 <= row.d2 <= row.d3


def test_ledger_csv(tmp_path):
    led = DelayLedger()
    led.record(1, 0.0089, 0.0141, 0.0161)
    led.record(2, 0.01, 0.02, 0.03)
    led.to_csv(tmp_path / "ledger.csv")
    with open(tmp_path / "ledger.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["seq", "d1", "exec", "downlink", "d2", "d3"]
    assert float(rows[1][5]) == pytest.approx(0.0391)
    assert len(rows) == 3
