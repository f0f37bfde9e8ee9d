"""
Unit tests for approximate-time synchronization and zero-fill helpers.
"""

import bisect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core.exceptions import ShapeMismatch
from src.core.mask import PhysicalMask
from src.sync.observation import (
    ChannelSpec,
    DiffImageTracker,
    assemble_observation_vector,
    channel_specs,
    diff_image,
)
from src.sync.synchronizer import Synchronizer, synchronize

MS = 1_000_000
WINDOW = 8 * MS

SPECS = [
    ChannelSpec(name="cam", topic="/rapid/cam", shape=(1,), bit=0, nominal_rate_hz=30.0),
    ChannelSpec(name="tac", topic="/rapid/tac", shape=(1,), bit=1, nominal_rate_hz=100.0),
    ChannelSpec(name="motor", topic="/rapid/motor", shape=(1,), bit=2, nominal_rate_hz=15.0),
]


def sample(ts: int) -> np.ndarray:
    return np.array([ts / MS], dtype=np.float32)


def pair(ts: int):
    return ts, np.ones(2, dtype=np.float32)


def reference_groups(specs, streams, window):
    """Straightforward re-statement of the grouping rules, without masks."""
    remaining = {s.name: sorted(streams.get(s.name, ())) for s in specs}
    ranked = sorted(enumerate(specs), key=lambda p: (p[1].nominal_rate_hz, p[0]))
    order = [s.name for _, s in ranked]
    periods = {s.name: s.period_ns for s in specs}
    groups = []
    while any(remaining.values()):
        heads = {name: ts[0] for name, ts in remaining.items() if ts}
        earliest = min(heads.values())
        anchor = next(
            n for n in order if n in heads and heads[n] <= earliest + periods[n] + window
        )
        t_ref = heads[anchor]
        chosen = {}
        for spec in specs:
            ts = remaining[spec.name]
            near = [x for x in ts if abs(x - t_ref) <= window]
            pick = min(near, key=lambda x: (abs(x - t_ref), x)) if near else None
            chosen[spec.name] = pick
            remaining[spec.name] = [
                x for x in ts if x > t_ref and (pick is None or x > pick)
            ]
        groups.append((t_ref, chosen))
    return groups


def observed_groups(observations):
    return [
        (obs.t_ref, {name: s.source_timestamp_ns for name, s in obs.channels.items()})
        for obs in observations
    ]


stream_strategy = st.fixed_dictionaries(
    {
        name: st.sets(st.integers(0, 400 * MS), max_size=12)
        for name in ("cam", "tac", "motor")
    }
)


class TestSynchronizerProperties:
    """Test the synchronizer against a brute-force restatement."""

    @settings(max_examples=200, deadline=None)
    @given(streams=stream_strategy)
    def test_matches_reference(self, streams):
        """Batch grouping equals the reference grouping."""
        observations = synchronize(
            SPECS, {n: [(t, sample(t)) for t in ts] for n, ts in streams.items()}, window_ns=WINDOW
        )
        assert observed_groups(observations) == reference_groups(SPECS, streams, WINDOW)

    @settings(max_examples=100, deadline=None)
    @given(streams=stream_strategy)
    def test_streaming_matches_batch(self, streams):
        """Polling behind a watermark yields the same groups as a batch run."""
        events = sorted((t, name) for name, ts in streams.items() for t in ts)
        sync = Synchronizer(SPECS, WINDOW)
        streamed = []
        for t, name in events:
            streamed.extend(sync.poll(t - 1))
            assert sync.push(name, t, sample(t))
        streamed.extend(sync.flush())

        batch = synchronize(
            SPECS, {n: [(t, sample(t)) for t in ts] for n, ts in streams.items()}, window_ns=WINDOW
        )
        assert observed_groups(streamed) == observed_groups(batch)

    @settings(max_examples=100, deadline=None)
    @given(streams=stream_strategy)
    def test_t_ref_strictly_increases(self, streams):
        """Each sample is used at most once and groups move forward."""
        observations = synchronize(
            SPECS, {n: [(t, sample(t)) for t in ts] for n, ts in streams.items()}, window_ns=WINDOW
        )
        t_refs = [obs.t_ref for obs in observations]
        assert t_refs == sorted(set(t_refs))
        for spec in SPECS:
            used = [
                obs.channels[spec.name].source_timestamp_ns
                for obs in observations
                if obs.channels[spec.name].present
            ]
            assert len(used) == len(set(used))


RATES_HZ = (10.0, 15.0, 30.0, 60.0, 100.0)
TRACE_SAMPLES = 500


def jittered_trace(n_channels, seed, with_masks):
    """Random specs, jittered streams (the fastest near 500 samples) and mask snapshots."""
    rng = np.random.default_rng(seed)
    rates = rng.choice(RATES_HZ, size=n_channels)
    specs = [
        ChannelSpec(name=f"c{i}", topic=f"/c{i}", shape=(1,), bit=i, nominal_rate_hz=float(r))
        for i, r in enumerate(rates)
    ]
    duration_ns = int(TRACE_SAMPLES / rates.max() * 1e9)
    streams = {}
    for spec in specs:
        base = np.arange(0, duration_ns, spec.period_ns)
        jitter = rng.normal(0, 4 * MS, size=base.size).astype(np.int64)
        kept = base[rng.random(base.size) > 0.1] if base.size > 1 else base
        ts = np.unique(np.clip(kept + jitter[: kept.size], 0, None))
        streams[spec.name] = [int(t) for t in ts]
    masks = []
    if with_masks:
        t = 0
        while t < duration_ns:
            word = int(sum(1 << i for i in range(n_channels) if rng.random() < 0.75))
            masks.append(PhysicalMask(device_count=n_channels, mask=word, timestamp_ns=t))
            t += int(rng.integers(20, 120)) * MS
    return specs, streams, masks


def nearest_snapshot(masks, t):
    """Exhaustive closest snapshot, earlier on a tie."""
    if not masks:
        return None
    return min(masks, key=lambda m: (abs(m.timestamp_ns - t), m.timestamp_ns))


ALL_PRESENT = PhysicalMask(device_count=4, mask=0b1111)


class TestExhaustiveMatching:
    """Test grouping on long jittered traces against an exhaustive matcher."""

    @pytest.mark.slow
    @settings(max_examples=200, deadline=None)
    @given(
        n_channels=st.integers(2, 4),
        seed=st.integers(0, 2**32 - 1),
        with_masks=st.booleans(),
    )
    def test_groups_pair_nearest_samples(self, n_channels, seed, with_masks):
        """Every group pairs each present channel with its nearest unused in-window sample."""
        specs, streams, masks = jittered_trace(n_channels, seed, with_masks)
        observations = synchronize(
            specs,
            {n: [(t, sample(t)) for t in ts] for n, ts in streams.items()},
            masks=masks,
            window_ns=WINDOW,
        )
        cursor = {spec.name: 0 for spec in specs}
        previous = None
        for obs in observations:
            t = obs.t_ref
            assert previous is None or t > previous
            previous = t
            snapshot = nearest_snapshot(masks, t)
            assert obs.mask_snapshot == snapshot

            anchors = []
            for spec in specs:
                ts = streams[spec.name]
                got = obs.channels[spec.name]
                lo = max(cursor[spec.name], bisect.bisect_left(ts, t - WINDOW))
                in_window = ts[lo : bisect.bisect_right(ts, t + WINDOW)]
                bit_set = snapshot is None or snapshot.is_set(spec.bit)

                if got.present:
                    assert bit_set
                    best = min(in_window, key=lambda x: (abs(x - t), x))
                    assert got.source_timestamp_ns == best
                    assert abs(got.source_timestamp_ns - t) <= WINDOW
                    if best == t:
                        anchors.append(spec.name)
                    used = bisect.bisect_left(ts, best)
                else:
                    assert not np.any(got.payload)
                    assert got.stale == bit_set
                    if bit_set:
                        assert in_window == []
                    used = -1
                past = bisect.bisect_right(ts, t)
                cursor[spec.name] = max(cursor[spec.name], past, used + 1)
            assert anchors

        for spec in specs:
            leftover = streams[spec.name][cursor[spec.name] :]
            present = [
                x for x in leftover
                if (nearest_snapshot(masks, x) or ALL_PRESENT).is_set(spec.bit)
            ]
            assert present == []


class TestMaskAwareGrouping:
    """Test presence from mask snapshots."""

    def _specs(self):
        return [
            ChannelSpec(name="a", topic="/a", shape=(2,), bit=0, nominal_rate_hz=30.0),
            ChannelSpec(name="b", topic="/b", shape=(2,), bit=1, nominal_rate_hz=30.0),
        ]

    def test_absent_channel_is_zero_filled(self):
        """After its bit clears, a channel contributes zeros and present=False."""
        observations = synchronize(
            self._specs(),
            {
                "a": [pair(0), pair(33 * MS), pair(66 * MS), pair(150 * MS)],
                "b": [pair(1 * MS), pair(34 * MS), pair(67 * MS), pair(151 * MS)],
            },
            masks=[
                PhysicalMask(device_count=2, mask=0b11, timestamp_ns=0),
                PhysicalMask(device_count=2, mask=0b01, timestamp_ns=140 * MS),
            ],
            window_ns=WINDOW,
        )
        assert [obs.t_ref for obs in observations] == [0, 33 * MS, 66 * MS, 150 * MS]
        assert all(obs.is_present("b") for obs in observations[:3])

        last = observations[-1]
        assert not last.channels["b"].present
        assert not last.channels["b"].stale
        assert np.array_equal(last.channels["b"].payload, np.zeros(2, dtype=np.float32))
        assert last.mask_snapshot.mask == 0b01

    def test_missing_sample_is_stale(self):
        """A present channel without a sample in the window is flagged stale."""
        observations = synchronize(
            self._specs(), {"a": [pair(0), pair(33 * MS)], "b": [pair(0)]}, window_ns=WINDOW
        )
        assert len(observations) == 2
        assert observations[1].channels["b"].stale
        assert not observations[1].channels["b"].present

    def test_mask_tie_prefers_earlier_snapshot(self):
        """Equidistant snapshots resolve to the earlier one."""
        sync = Synchronizer(self._specs(), WINDOW)
        early = PhysicalMask(device_count=2, mask=0b01, timestamp_ns=0)
        late = PhysicalMask(device_count=2, mask=0b11, timestamp_ns=10 * MS)
        sync.push_mask(early)
        sync.push_mask(late)
        assert sync.mask_at(5 * MS) == early
        assert sync.mask_at(6 * MS) == late

    def test_late_and_malformed_samples_dropped(self):
        """Samples behind the last group and wrong-sized payloads are refused."""
        sync = Synchronizer(self._specs(), WINDOW)
        sync.push("a", 0, np.ones(2))
        sync.push("b", 0, np.ones(2))
        assert len(sync.flush()) == 1
        assert not sync.push("a", 0, np.ones(2))
        assert not sync.push("b", 40 * MS, np.ones(3))
        assert sync.stats()["late_dropped"] == 1
        assert sync.stats()["malformed"] == 1

    def test_push_topic(self):
        """Samples can be routed by topic; unknown topics are ignored."""
        sync = Synchronizer(self._specs(), WINDOW)
        assert sync.push_topic("/a", 0, np.ones(2, dtype=np.float32).tobytes())
        assert not sync.push_topic("/nope", 0, b"")

    def test_invalid_configuration(self):
        """Empty specs, duplicate names and bad windows are rejected."""
        with pytest.raises(ValueError):
            Synchronizer([], WINDOW)
        with pytest.raises(ValueError):
            Synchronizer(self._specs() * 2, WINDOW)
        with pytest.raises(ValueError):
            Synchronizer(self._specs(), 0)


class TestObservationHelpers:
    """Test fixed-dimension assembly and diff images."""

    def test_vector_has_fixed_length(self):
        """Absent channels keep their span, filled with zeros."""
        specs = [
            ChannelSpec(name="a", topic="/a", shape=(2, 2), bit=0),
            ChannelSpec(name="b", topic="/b", shape=(3,), bit=1),
        ]
        full = synchronize(
            specs, {"a": [(0, np.full((2, 2), 2.0))], "b": [(0, np.full(3, 3.0))]}, window_ns=WINDOW
        )[0]
        partial = synchronize(
            specs,
            {"a": [(0, np.full((2, 2), 2.0))], "b": [(0, np.full(3, 3.0))]},
            masks=[PhysicalMask(device_count=2, mask=0b01, timestamp_ns=0)],
            window_ns=WINDOW,
        )[0]

        vector, presence = assemble_observation_vector(full, specs)
        assert vector.tolist() == [2.0] * 4 + [3.0] * 3
        assert presence.tolist() == [1.0, 1.0]

        vector, presence = assemble_observation_vector(partial, specs)
        assert vector.tolist() == [2.0] * 4 + [0.0] * 3
        assert presence.tolist() == [1.0, 0.0]

    def test_channel_specs_from_registry(self, registry):
        """Specs follow bit order with declared shapes."""
        specs = channel_specs(registry)
        assert [s.name for s in specs] == ["cam_wrist", "tac_left", "motor_grip"]
        assert specs[0].shape == (4, 4)
        assert specs[0].size == 16

    def test_decode_bytes(self):
        """float32 bytes decode into the declared shape."""
        spec = ChannelSpec(name="a", topic="/a", shape=(2, 2), bit=0)
        payload = np.arange(4, dtype=np.float32).tobytes()
        assert spec.decode(payload).shape == (2, 2)
        with pytest.raises(ShapeMismatch):
            spec.decode(payload[:8])

    def test_diff_image_identities(self):
        """Equal frames give 0.5; extremes clip to 0 and 1."""
        frame = np.random.default_rng(0).random((4, 4)).astype(np.float32)
        assert np.allclose(diff_image(frame, frame), 0.5)
        assert np.allclose(diff_image(np.ones((2, 2)), np.zeros((2, 2))), 1.0)
        assert np.allclose(diff_image(np.zeros((2, 2)), np.ones((2, 2))), 0.0)
        with pytest.raises(ShapeMismatch):
            diff_image(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_diff_tracker_reference(self):
        """The first frame of an episode is the reference until reset."""
        tracker = DiffImageTracker()
        first = np.full((2, 2), 0.2, dtype=np.float32)
        assert np.allclose(tracker.update(first), 0.5)
        assert np.allclose(tracker.update(np.full((2, 2), 0.6)), 0.7)
        tracker.reset()
        assert np.allclose(tracker.update(np.full((2, 2), 0.6)), 0.5)
