import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smosched.stream import (BufferMap, ChunkId, MalformedBufferMap, SlidingWindow, VideoProfile,
                             advance_playhead, chunk_order, decodable, decode_buffer_map,
                             encode_buffer_map, max_sustainable_quality, missing_chunks)

EIGHT = VideoProfile.uniform(8, 100)


def window(layers=4, urgent=2, playhead=10, slots=60):
    return SlidingWindow(VideoProfile.uniform(layers, 100, total_slots=slots), urgent,
                         playing_len=3, prefetch_len=4, playhead=playhead)


class TestProfile:
    def test_rejects_bad_rates(self):
        with pytest.raises(ValueError):
            VideoProfile(())
        with pytest.raises(ValueError):
            VideoProfile((100, 0))

    def test_cumulative_rate(self):
        p = VideoProfile((100, 50, 25))
        assert [p.cumulative_rate(q) for q in (-1, 0, 1, 2)] == [0, 100, 150, 175]


class TestSustainableQuality:
    @pytest.mark.parametrize("bw,expected", [(450, 3), (0, -1), (800, 7), (99.9, -1), (10_000, 7)])
    def test_examples(self, bw, expected):
        assert max_sustainable_quality(bw, EIGHT) == expected

    def test_negative_bandwidth(self):
        with pytest.raises(ValueError):
            max_sustainable_quality(-1, EIGHT)

    @given(st.lists(st.floats(1, 500), min_size=1, max_size=8), st.floats(0, 5000), st.floats(0, 5000))
    def test_monotone_and_bracketed(self, rates, a, b):
        p = VideoProfile(tuple(rates))
        lo, hi = sorted((a, b))
        assert max_sustainable_quality(lo, p) <= max_sustainable_quality(hi, p)
        q = max_sustainable_quality(hi, p)
        assert p.cumulative_rate(q) <= hi
        if q < p.layer_count - 1:
            assert hi < p.cumulative_rate(q + 1)


class TestWindow:
    def test_intervals_are_contiguous(self):
        w = window()
        assert w.playing_interval() == range(10, 13)
        assert w.urgent_interval() == range(13, 15)
        assert w.prefetch_interval() == range(15, 19)
        assert w.now == 13

    def test_late_chunk_goes_to_ledger(self):
        w = window()
        c = ChunkId(11, 0)
        assert not w.receive(c, at=w.deadline(11) + 1)
        assert not w.holds(c)
        assert w.late == [(c, w.deadline(11) + 1)]


class TestMissing:
    def test_empty_holdings(self):
        w = window()
        assert missing_chunks(w, 1) == [(13, 0), (13, 1), (14, 0), (14, 1)]

    def test_full_holdings(self):
        w = window()
        w.received[:] = 0
        assert missing_chunks(w, 3) == []

    def test_below_base(self):
        assert missing_chunks(window(), -1) == []

    def test_set_difference(self):
        w = window()
        w.received[13:15, :] = 0
        w.received[13, 1] = -1
        w.received[13:15, 2] = -1
        expected = {(s, l) for s in (13, 14) for l in range(3) if w.received[s, l] < 0}
        got = missing_chunks(w, 2)
        assert set(got) == expected and (13, 1) in got

    @given(st.integers(1, 4), st.integers(1, 5), st.integers(-1, 3),
           st.lists(st.tuples(st.integers(0, 39), st.integers(0, 3)), max_size=60))
    def test_returned_chunks_are_requestable(self, layers, urgent, q, held):
        w = window(layers=layers, urgent=urgent, playhead=7, slots=40)
        for s, l in held:
            if l < layers:
                w.received[s, l] = 0
        for c in missing_chunks(w, q):
            assert c.layer <= q
            assert c.slot in w.urgent_interval()
            assert w.deadline(c.slot) >= w.now
            assert not w.holds(c)


class TestDecodable:
    def test_base_only(self):
        w = window()
        w.receive(ChunkId(12, 0))
        assert decodable(w, ChunkId(12, 0))

    def test_missing_base(self):
        w = window()
        w.receive(ChunkId(12, 2))
        w.receive(ChunkId(12, 1))
        assert not decodable(w, ChunkId(12, 2))

    def test_late_layer(self):
        w = window()
        w.receive(ChunkId(12, 0))
        w.receive(ChunkId(12, 1), at=w.deadline(12) + 1)
        assert not decodable(w, ChunkId(12, 1))

    @given(st.lists(st.booleans(), min_size=4, max_size=4))
    def test_monotone_in_layer(self, bits):
        w = window()
        w.received[12] = [0 if b else -1 for b in bits]
        for l in range(4):
            if decodable(w, ChunkId(12, l)):
                assert all(decodable(w, ChunkId(12, k)) for k in range(l))


class TestPlayback:
    def test_full_quality(self):
        w = window()
        w.received[:] = 0
        rep = advance_playhead(w, 3)
        assert rep.stalled == [] and list(rep.qualities.values()) == [3, 3, 3]

    def test_stall_without_base(self):
        w = window()
        w.received[10, 1:] = 0
        rep = advance_playhead(w, 1)
        assert rep.stalled == [10] and rep.undecodable == 3

    def test_dependency_scan(self):
        w = window()
        w.received[10, :2] = 0
        w.received[11, [0, 2]] = 0
        rep = advance_playhead(w, 2)
        assert [rep.qualities[10], rep.qualities[11]] == [1, 0]
        assert rep.undecodable == 1

    def test_needs_positive_count(self):
        with pytest.raises(ValueError):
            advance_playhead(window(), 0)

    def test_resume_after(self):
        w = SlidingWindow(VideoProfile.uniform(1, 100, total_slots=10), 2, playhead=0, resume_after=2)
        w.received[[1, 3, 4], 0] = 0
        rep = advance_playhead(w, 5)
        # slot 1 alone is not enough to leave the stall begun at slot 0
        assert rep.stalled == [0, 1, 2] and rep.played == [3, 4]


class TestBufferMap:
    def test_bit_layout(self):
        bits = np.zeros((3, 5), dtype=bool)
        bits[0, [0, 1, 2, 3]] = True
        bits[1, [1, 3]] = True
        bits[2, 4] = True
        raw = BufferMap(7, 20, bits).to_bytes()
        payload = raw[11:]
        assert len(raw) == 11 + 2 and len(payload) == 2
        flat = [(payload[k // 8] >> (7 - k % 8)) & 1 for k in range(15)]
        for l in range(3):
            for w in range(5):
                assert flat[l * 5 + w] == bits[l, w]

    def test_header(self):
        raw = BufferMap(0x01020304, 9, np.ones((2, 3), dtype=bool)).to_bytes()
        assert raw[:4] == bytes([4, 3, 2, 1])
        assert raw[4:8] == bytes([9, 0, 0, 0])
        assert raw[8] == 2 and raw[9:11] == bytes([3, 0])

    def test_empty_window_encodes_zeros(self):
        w = window()
        assert set(encode_buffer_map(w).to_bytes()[11:]) == {0}

    def test_encode_reflects_holdings(self):
        w = window()
        w.receive(ChunkId(12, 1))
        bm = encode_buffer_map(w, owner=3)
        assert bm.has(ChunkId(12, 1)) and not bm.has(ChunkId(12, 0))
        assert not bm.has(ChunkId(500, 0))

    @pytest.mark.parametrize("trim", [1, -1])
    def test_rejects_wrong_length(self, trim):
        raw = BufferMap(1, 0, np.ones((3, 5), dtype=bool)).to_bytes()
        bad = raw[:-1] if trim > 0 else raw + b"\x00"
        with pytest.raises(MalformedBufferMap):
            decode_buffer_map(bad)

    def test_rejects_truncated_header(self):
        with pytest.raises(MalformedBufferMap):
            decode_buffer_map(b"\x00\x01")

    @settings(max_examples=200)
    @given(st.integers(1, 16), st.integers(1, 64), st.integers(0, 2**32 - 1),
           st.integers(0, 2**32 - 1), st.data())
    def test_round_trip(self, L, W, owner, start, data):
        bits = np.array(data.draw(st.lists(st.booleans(), min_size=L * W, max_size=L * W))).reshape(L, W)
        raw = BufferMap(owner, start, bits).to_bytes()
        assert decode_buffer_map(raw) == BufferMap(owner, start, bits)
        assert decode_buffer_map(raw).to_bytes() == raw


def test_chunk_order():
    assert chunk_order([ChunkId(5, 1), ChunkId(3, 1), ChunkId(9, 0)]) == [(9, 0), (3, 1), (5, 1)]
