"""FIFO buffers: eviction order, sampling, windows, snapshots."""

import collections
import random

import pytest
from hypothesis import given, strategies as st

from safefleet.actions import Action
from safefleet.replay import PlannerRecord, ReplayBuffer, RlTransition


class TestFifo:
    def test_eviction_is_oldest_first(self):
        buf = ReplayBuffer(2)
        for x in "abc":
            buf.push(x)
        assert buf.entries() == ["b", "c"]

    def test_length_saturates_at_capacity(self):
        buf = ReplayBuffer(3)
        for i in range(5):
            buf.push(i)
            assert len(buf) == min(i + 1, 3)

    def test_large_stream_keeps_last_capacity_in_order(self):
        buf = ReplayBuffer(1000)
        reference = collections.deque(maxlen=1000)
        for i in range(10_000):
            buf.push(i)
            reference.append(i)
        assert buf.entries() == list(reference)

    @given(st.lists(st.integers(), max_size=200), st.integers(min_value=1, max_value=17))
    def test_matches_deque_model(self, items, capacity):
        buf = ReplayBuffer(capacity)
        model = collections.deque(maxlen=capacity)
        for x in items:
            buf.push(x)
            model.append(x)
        assert buf.entries() == list(model)

    def test_capacity_validation(self):
        with pytest.raises(ValueError):
            ReplayBuffer(0)


class TestSampling:
    def test_full_sample_is_a_permutation(self):
        buf = ReplayBuffer(10)
        for i in range(10):
            buf.push(i)
        sample = buf.sample_minibatch(10, random.Random(1))
        assert sorted(sample) == list(range(10))

    def test_deterministic_given_rng_state(self):
        buf = ReplayBuffer(50)
        for i in range(50):
            buf.push(i)
        a = buf.sample_minibatch(16, random.Random(9))
        b = buf.sample_minibatch(16, random.Random(9))
        assert a == b

    def test_no_duplicates_within_batch(self):
        buf = ReplayBuffer(30)
        for i in range(30):
            buf.push(i)
        rng = random.Random(2)
        for _ in range(100):
            sample = buf.sample_minibatch(12, rng)
            assert len(set(sample)) == 12

    def test_oversized_request_rejected(self):
        buf = ReplayBuffer(5)
        buf.push(1)
        with pytest.raises(ValueError):
            buf.sample_minibatch(2, random.Random(0))

    def test_single_draw_frequencies_are_uniform(self):
        buf = ReplayBuffer(10)
        for i in range(10):
            buf.push(i)
        rng = random.Random(3)
        counts = [0] * 10
        n = 100_000
        for _ in range(n):
            counts[buf.sample_minibatch(1, rng)[0]] += 1
        p = 0.1
        sigma = (n * p * (1 - p)) ** 0.5
        for c in counts:
            assert abs(c - n * p) < 3 * sigma


class TestRecentWindow:
    def test_empty_buffer(self):
        assert ReplayBuffer(4).recent_window(3) == []

    def test_window_larger_than_content(self):
        buf = ReplayBuffer(10)
        buf.push("x")
        assert buf.recent_window(5) == ["x"]

    def test_newest_last_ordering(self):
        buf = ReplayBuffer(10)
        for i in range(1, 6):
            buf.push(i)
        assert buf.recent_window(3) == [3, 4, 5]

    def test_window_after_wraparound(self):
        buf = ReplayBuffer(3)
        for i in range(7):
            buf.push(i)
        assert buf.recent_window(2) == [5, 6]


class TestRecords:
    def test_planner_record_flag_consistency(self):
        with pytest.raises(ValueError):
            PlannerRecord(0, 0, "", Action.local_idle(), Action.local_idle(), True)
        with pytest.raises(ValueError):
            PlannerRecord(
                0, 0, "", Action.local_idle(), Action.local_idle(), False, "battery"
            )

    def test_transition_roundtrips_through_snapshot(self, tmp_path):
        buf: ReplayBuffer[RlTransition] = ReplayBuffer(8)
        for i in range(12):
            buf.push(
                RlTransition(
                    obs=(float(i),) * 3,
                    action_index=i % 5,
                    reward=float(i),
                    next_obs=(float(i + 1),) * 3,
                    costs=(0.0, 0.0, 0.0, float(i % 2)),
                    done=i == 11,
                    proposed_index=i % 5,
                )
            )
        path = tmp_path / "buffer.bin"
        buf.save(path)
        loaded = ReplayBuffer.load(path)
        assert loaded.capacity == buf.capacity
        assert loaded.entries() == buf.entries()

    def test_snapshot_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a snapshot at all")
        with pytest.raises(ValueError):
            ReplayBuffer.load(path)
