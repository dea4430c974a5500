import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from smosched import metrics as mx


def test_layer_changes():
    assert mx.layer_changes([]) == 0
    assert mx.layer_changes([2, 2, 3, 3, 1, 1, 1]) == 2


def test_stall_runs():
    assert mx.stall_stats([4, 5, 6, 10, 12, 13]) == (3, [3, 1, 2])
    assert mx.stall_stats([]) == (0, [])


@given(st.sets(st.integers(0, 200)))
def test_stall_durations_cover_slots(slots):
    count, durations = mx.stall_stats(slots)
    assert sum(durations) == len(slots) and count == len(durations)


def test_utilization():
    assert mx.bandwidth_utilization(50, 200) == 0.25
    assert mx.bandwidth_utilization(50, 0) == 0.0


def test_account_slot():
    t = mx.PeerTally(4)
    t.account_slot(target=2, prefix=1, held=3)
    assert (t.received, t.undecodable, t.requested_layers, t.full_layers) == (3, 2, 3, 1)
    assert t.demanded == [1, 1, 1, 0] and t.proper == [1, 0, 0, 0]


def _tally():
    t = mx.PeerTally(2)
    t.timeline = [0, 1, 1, 0]
    t.selected = [0, 1, 1, 1, 0]
    t.stalled = [7, 8]
    t.delivered = [6, 3]
    t.late = 1
    t.capacity = 1800
    for target, prefix, held in [(0, 1, 1), (1, 2, 2), (1, 2, 2), (0, 1, 2), (1, 0, 1), (1, 0, 0)]:
        t.account_slot(target, prefix, held)
    return t


def test_peer_metrics():
    m = mx.peer_metrics(3, _tally(), [100.0, 100.0], 1.0)
    assert (m.played, m.stalled, m.layer_changes, m.selected_changes) == (4, 2, 2, 2)
    assert m.stall_events == 1 and m.stall_durations == [2]
    assert m.mean_quality == 0.5
    assert m.utilization == pytest.approx(900 / 1800)
    # held 8 on time, one late; undecodable: 1 + 1 = 2
    assert m.useless_ratio == pytest.approx(3 / 9)
    assert m.late_ratio == pytest.approx(1 / 9)
    assert m.relative_received == pytest.approx(6 / 10)
    assert m.delivery == [pytest.approx(4 / 6), pytest.approx(2 / 4)]


def test_run_metrics_and_csv(tmp_path):
    empty = mx.PeerTally(2)
    m = mx.run_metrics({1: _tally(), 2: empty}, [100.0, 100.0], 1.0)
    assert m.layer_changes == 1.0 and m.layer_changes_max == 2
    assert m.peers[1].delivery[0] != m.peers[1].delivery[0]  # nothing demanded
    assert m.delivery_ratio_per_layer[0] == pytest.approx(4 / 6)
    assert m.useless_layer_ratio == pytest.approx(0.4)
    path = tmp_path / "m.csv"
    mx.write_metrics_csv(m, path, 2)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == mx.metric_columns(2)
    assert lines[-1].startswith("all,")
    assert len(lines) == 4


def test_tallies_from_log_capacity():
    rows = [(0, 1, "capacity", "", "", "", 500), (3, 1, "capacity", "", "", "", 200)]
    t = mx.tallies_from_log(rows, 1, [1], 5)
    assert t[1].capacity == 500 * 3 + 200 * 2


def test_read_event_log_rejects_other_tables(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        mx.read_event_log(p)


def test_blank_for_nan():
    assert mx._fmt(math.nan) == "" and mx._fmt(0.25) == "0.25" and mx._fmt(3) == "3"
