import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from smosched.forecast import (BandwidthTrace, ColdStartError, ForecastConfig, TraceError,
                               estimate, estimate_next, load_trace, save_trace, synthetic_trace)

MEAN = ForecastConfig("window-mean", window=3)
EWMA = ForecastConfig("ewma", ewma_factor=0.5, window=3)
values = st.lists(st.floats(0, 10_000), min_size=1, max_size=30)


@pytest.mark.parametrize("cfg", [MEAN, EWMA])
def test_constant_trace(cfg):
    assert estimate_next(BandwidthTrace.from_values([500] * 10), cfg, 10) == 500


def test_window_mean():
    assert estimate_next(BandwidthTrace.from_values([1, 300, 600, 900]), MEAN, 4) == 600


def test_ewma_two_samples():
    assert estimate([400, 800], EWMA) == 600


def test_only_earlier_samples_count():
    tr = BandwidthTrace.from_values([100, 200, 300, 10_000])
    assert estimate_next(tr, MEAN, 3) == 200


def test_short_history_uses_all():
    assert estimate_next(BandwidthTrace.from_values([100, 300]), ForecastConfig(window=15), 2) == 200


def test_cold_start():
    with pytest.raises(ColdStartError):
        estimate_next(BandwidthTrace.from_values([100], start=5), MEAN, 5)
    with pytest.raises(ColdStartError):
        estimate([], MEAN)


def test_config_validation():
    with pytest.raises(ValueError):
        ForecastConfig("arima")
    with pytest.raises(ValueError):
        ForecastConfig("ewma", ewma_factor=0)
    with pytest.raises(ValueError):
        ForecastConfig(window=0)


def test_trace_invariants():
    with pytest.raises(TraceError):
        BandwidthTrace(((1, 5.0), (1, 6.0)))
    with pytest.raises(TraceError):
        BandwidthTrace(((0, -1.0),))


@pytest.mark.parametrize("kind", ["window-mean", "ewma"])
@given(values)
def test_bounded_by_window(kind, xs):
    est = estimate(xs, ForecastConfig(kind))
    assert min(xs) - 1e-6 <= est <= max(xs) + 1e-6


@pytest.mark.parametrize("kind", ["window-mean", "ewma"])
@given(values, st.floats(0.01, 100))
def test_scale_equivariant(kind, xs, c):
    cfg = ForecastConfig(kind)
    assert estimate([c * x for x in xs], cfg) == pytest.approx(c * estimate(xs, cfg), rel=1e-9, abs=1e-6)


@pytest.mark.parametrize("kind", ["window-mean", "ewma"])
@given(values)
def test_unit_window_returns_last(kind, xs):
    tr = BandwidthTrace.from_values(xs)
    assert estimate_next(tr, ForecastConfig(kind, window=1), len(xs)) == xs[-1]


class TestLoad:
    def test_two_rows(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("0,100\n1,200\n")
        assert load_trace(p).values() == [100, 200]

    def test_header_allowed(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("slot,kbps\n0,100\n")
        assert len(load_trace(p)) == 1

    @pytest.mark.parametrize("text,line", [("1,100\n0,200\n", 2), ("0,100\n1,-5\n", 2),
                                           ("0,100\n1,abc\n", 2), ("0,100,3\n", 1)])
    def test_errors_name_line(self, tmp_path, text, line):
        p = tmp_path / "t.csv"
        p.write_text(text)
        with pytest.raises(TraceError, match=f"line {line}"):
            load_trace(p)

    def test_round_trip(self, tmp_path):
        tr = synthetic_trace(3, 50)
        save_trace(tr, tmp_path / "t.csv")
        assert load_trace(tmp_path / "t.csv").samples == tr.samples


def test_scenario_trace_spans_range():
    tr = synthetic_trace(0, 400)
    vals = tr.values()
    assert len(vals) == 400
    assert min(vals) >= 100 and max(vals) <= 900
    assert max(vals) - min(vals) > 400


def test_synthetic_is_seeded():
    assert synthetic_trace(1, 30).samples == synthetic_trace(1, 30).samples
    assert synthetic_trace(1, 30).samples != synthetic_trace(2, 30).samples


@given(st.integers(0, 50), st.integers(1, 60))
def test_value_at_steps(start, slot):
    tr = BandwidthTrace(((start, 1.0), (start + 5, 2.0)))
    assume(slot != start + 5)
    assert tr.value_at(slot) == (2.0 if slot > start + 5 else 1.0)
