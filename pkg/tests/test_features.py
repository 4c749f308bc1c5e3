import math

import numpy as np
import pytest
from helpers import make_session, oracle_stats
from hypothesis import given, settings
from hypothesis import strategies as st

from encflow.catalog import ALL_FEATURE_NAMES, CATALOG, FEATURE_SET_MEMBERS, FeatureSetName, Granularity
from encflow.features import (
    EmptyInput,
    MissingFeature,
    UnknownSet,
    aggregate,
    compute_packet_features,
    compute_session_features,
    featurize_session,
    select_set,
    window_feature_values,
)
from encflow.flows import truncate_pad

US = 1_000_000


class TestAggregate:
    def test_constant_list(self):
        a = aggregate([5, 5, 5])
        assert a.min == a.max == a.mean == a.median == 5
        assert a.std == 0

    def test_even_length_median_and_population_std(self):
        a = aggregate([1, 2, 3, 4])
        assert a.mean == 2.5
        assert a.median == 2.5
        assert a.std == pytest.approx(math.sqrt(1.25), abs=1e-12)

    def test_matches_brute_force_oracle_on_random_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            xs = rng.normal(0, 100, size=rng.integers(1, 60)).tolist()
            got = aggregate(xs).as_dict()
            want = oracle_stats(xs)
            for key in want:
                assert got[key] == pytest.approx(want[key], abs=1e-9), key

    def test_empty_input_raises(self):
        with pytest.raises(EmptyInput):
            aggregate([])

    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40))
    @settings(max_examples=100, deadline=None)
    def test_oracle_property(self, xs):
        got = aggregate(xs).as_dict()
        want = oracle_stats(xs)
        for key in want:
            assert got[key] == pytest.approx(want[key], abs=1e-9)


class TestPacketFeatures:
    def test_two_packet_worked_example(self):
        s = make_session([(0, "f", 40, 0), (500_000, "b", 100, 60)])
        rows = compute_packet_features(truncate_pad(s, 2))
        assert (rows[0].ip_length, rows[0].tcp_payload_length) == (40.0, 0.0)
        assert rows[0].payload_ratio == 0.0
        assert rows[0].ratio_to_previous == 1.0
        assert rows[0].time_delta == 0.0
        assert (rows[1].ip_length, rows[1].tcp_payload_length) == (100.0, 60.0)
        assert rows[1].payload_ratio == pytest.approx(0.6)
        assert rows[1].ratio_to_previous == pytest.approx(2.5)
        assert rows[1].time_delta == pytest.approx(0.5)

    def test_single_packet_padded_to_fifteen(self):
        s = make_session([(0, "f", 60, 20)])
        rows = compute_packet_features(truncate_pad(s, 15))
        assert len(rows) == 15
        assert rows[0].ip_length == 60.0
        for r in rows[1:]:
            assert (r.ip_length, r.tcp_payload_length, r.payload_ratio, r.ratio_to_previous, r.time_delta) == (
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
            )

    def test_fixture_rows_equal_independent_computation(self):
        # Hand recomputation with plain Python over the same abstract packets.
        spec = [(0, "f", 52, 12), (250_000, "b", 1400, 1360), (400_000, "f", 90, 50), (1_000_000, "b", 60, 20)]
        s = make_session(spec)
        rows = compute_packet_features(truncate_pad(s, 6))
        lengths = [e[2] for e in spec]
        payloads = [e[3] for e in spec]
        stamps = [e[0] for e in spec]
        for i, row in enumerate(rows[:4]):
            assert row.ip_length == lengths[i]
            assert row.tcp_payload_length == payloads[i]
            assert row.payload_ratio == pytest.approx(payloads[i] / lengths[i], abs=1e-12)
            expected_ratio = 1.0 if i == 0 else lengths[i] / lengths[i - 1]
            assert row.ratio_to_previous == pytest.approx(expected_ratio, abs=1e-12)
            expected_delta = 0.0 if i == 0 else (stamps[i] - stamps[i - 1]) / 1e6
            assert row.time_delta == pytest.approx(expected_delta, abs=1e-12)
        assert all(r.ip_length == 0 for r in rows[4:])

    def test_window_means_include_pad_zeros(self):
        s = make_session([(0, "f", 40, 0), (US, "f", 80, 40)])
        means = window_feature_values(truncate_pad(s, 4))
        assert means["ip_length"] == pytest.approx((40 + 80) / 4)
        assert means["ratio_to_previous"] == pytest.approx((1.0 + 2.0) / 4)
        assert means["time_delta"] == pytest.approx(1.0 / 4)


class TestSessionFeatures:
    def test_ipratio_worked_example(self):
        s = make_session([(0, "f", 40, 0), (1000, "b", 60, 20), (2000, "f", 100, 60)])
        v = compute_session_features(s)
        assert v.values["ipratio"] == pytest.approx(2.5)

    def test_goodput_worked_example(self):
        s = make_session([(0, "f", 400, 360), (2 * US, "b", 600, 560)])
        v = compute_session_features(s)
        assert v.values["total_ip_bytes"] == 1000.0
        assert v.values["flow_duration"] == pytest.approx(2.0)
        assert v.values["goodput"] == pytest.approx(500.0)

    def test_single_packet_degenerate_rules(self):
        s = make_session([(123, "f", 60, 20)])
        v = compute_session_features(s)
        assert v.values["flow_duration"] == 0.0
        assert v.values["goodput"] == 0.0
        assert v.values["ipratio"] == 1.0
        for name in v.values:
            if "inter_arrival" in name:
                assert v.values[name] == 0.0

    def test_directional_features(self):
        s = make_session(
            [(0, "f", 100, 60, 1000, 64), (US, "b", 200, 160, 2000, 60), (3 * US, "f", 300, 260, 1500, 64)]
        )
        v = compute_session_features(s).values
        assert v["forward_packet_count"] == 2
        assert v["backward_packet_count"] == 1
        assert v["total_forward_payload"] == 60 + 260
        assert v["total_backward_payload"] == 160
        assert v["forward_duration"] == pytest.approx(3.0)
        assert v["backward_duration"] == 0.0
        assert v["max_forward_inter_arrival"] == pytest.approx(3.0)
        assert v["mean_backward_inter_arrival"] == 0.0  # <2 backward packets
        assert v["source_port"] == 40000
        assert v["destination_port"] == 443
        assert v["mean_tcp_window"] == pytest.approx((1000 + 2000 + 1500) / 3)
        assert v["tcp_window_change_count"] == 2
        assert v["mean_ttl"] == pytest.approx((64 + 60 + 64) / 3)

    def test_full_vector_covers_catalog(self):
        s = make_session([(0, "f", 60, 20), (1000, "b", 80, 40)])
        v = featurize_session(s)
        assert set(v.values) == set(ALL_FEATURE_NAMES)
        assert all(math.isfinite(x) for x in v.values.values())


class TestSelectSet:
    def _vector(self):
        s = make_session([(0, "f", 60, 20), (1000, "b", 80, 40), (5000, "f", 100, 60)])
        return featurize_session(s)

    def test_fos_membership(self):
        out = select_set(self._vector(), FeatureSetName.FOS)
        assert len(out.values) == 14
        for name in ("mean_tcp_window", "flow_duration", "std_ttl"):
            assert name in out.values

    def test_tamper_resistant_membership(self):
        out = select_set(self._vector(), FeatureSetName.TAMPER_RESISTANT)
        assert len(out.values) == 8
        assert "ipratio" in out.values
        assert "goodput" in out.values
        for name in out.values:
            assert "port" not in name
            assert "flag" not in name

    def test_cardinalities(self):
        v = self._vector()
        sizes = {
            FeatureSetName.FOS: 14,
            FeatureSetName.TOP10: 10,
            FeatureSetName.SIDE_CHANNEL: 5,
            FeatureSetName.TAMPER_RESISTANT: 8,
            FeatureSetName.TIME_BASED: 13,
        }
        for set_name, expected in sizes.items():
            assert len(select_set(v, set_name).values) == expected

    def test_full_is_identity(self):
        v = self._vector()
        out = select_set(v, FeatureSetName.FULL)
        assert out.values == v.values

    def test_values_copied_unchanged(self):
        v = self._vector()
        out = select_set(v, FeatureSetName.TIME_BASED)
        for name, value in out.values.items():
            assert value == v.values[name]

    def test_unknown_set(self):
        with pytest.raises(UnknownSet):
            select_set(self._vector(), "NOT_A_SET")

    def test_missing_feature(self):
        small = select_set(self._vector(), FeatureSetName.FOS)
        with pytest.raises(MissingFeature):
            select_set(small, FeatureSetName.TOP10)

    def test_string_names_accepted(self):
        assert len(select_set(self._vector(), "fos").values) == 14


class TestCatalog:
    def test_at_least_113_entries_and_unique(self):
        names = CATALOG.names
        assert len(names) >= 113
        assert len(set(names)) == len(names)

    def test_packet_granularity_entries(self):
        packet_names = {e.name for e in CATALOG.entries if e.granularity is Granularity.PACKET}
        assert packet_names == set(FEATURE_SET_MEMBERS[FeatureSetName.SIDE_CHANNEL])

    def test_every_set_member_is_in_the_catalog(self):
        for set_name, members in FEATURE_SET_MEMBERS.items():
            if set_name is FeatureSetName.FOTS:
                continue
            for m in members:
                assert m in CATALOG.names, (set_name, m)


LENGTH_SCALED = (
    "ip_length", "tcp_payload_length", "forward_ip_length", "backward_ip_length",
    "forward_tcp_payload_length", "backward_tcp_payload_length",
)
TIME_STEMS = ("time_delta", "forward_inter_arrival", "backward_inter_arrival")


def _random_session(rng, n=None):
    n = n or rng.integers(2, 12)
    specs = []
    ts = 0
    for i in range(n):
        ts += int(rng.integers(1, 2 * US))
        payload = int(rng.integers(0, 1200))
        specs.append((ts, "f" if rng.random() < 0.6 else "b", 40 + payload, payload,
                      int(rng.integers(100, 66000)), int(rng.integers(30, 255))))
    return specs


class TestCovariance:
    def test_scale_covariance(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            specs = _random_session(rng)
            c = int(rng.choice([2, 3, 5]))
            scaled = [(t, d, L * c, p * c, w, ttl) for (t, d, L, p, w, ttl) in specs]
            v1 = featurize_session(make_session(specs)).values
            v2 = featurize_session(make_session(scaled)).values
            for stem in LENGTH_SCALED:
                for agg in ("min", "max", "mean", "median", "std"):
                    assert v2[f"{agg}_{stem}"] == pytest.approx(c * v1[f"{agg}_{stem}"], rel=1e-9)
            for name in ("total_payload", "total_ip_bytes", "total_forward_payload", "goodput"):
                assert v2[name] == pytest.approx(c * v1[name], rel=1e-9)
            for name in ("ipratio", "mean_payload_ratio", "mean_ratio_to_previous",
                         "payload_ratio", "ratio_to_previous"):
                assert v2[name] == pytest.approx(v1[name], rel=1e-9)

    def test_time_shift_invariance(self):
        rng = np.random.default_rng(4)
        specs = _random_session(rng, n=8)
        shifted = [(t + 7_777_777, d, L, p, w, ttl) for (t, d, L, p, w, ttl) in specs]
        v1 = featurize_session(make_session(specs)).values
        v2 = featurize_session(make_session(shifted)).values
        for name in ALL_FEATURE_NAMES:
            assert v2[name] == pytest.approx(v1[name], rel=1e-9, abs=1e-12), name

    def test_time_scale_covariance(self):
        rng = np.random.default_rng(5)
        specs = _random_session(rng, n=8)
        c = 3
        t0 = specs[0][0]
        scaled = [(t0 + (t - t0) * c, d, L, p, w, ttl) for (t, d, L, p, w, ttl) in specs]
        v1 = featurize_session(make_session(specs)).values
        v2 = featurize_session(make_session(scaled)).values
        time_names = [f"{agg}_{stem}" for stem in TIME_STEMS for agg in ("min", "max", "mean", "median", "std")]
        time_names += ["flow_duration", "forward_duration", "backward_duration", "time_delta"]
        for name in time_names:
            assert v2[name] == pytest.approx(c * v1[name], rel=1e-9, abs=1e-12), name
        for name in ("goodput", "packet_rate", "payload_rate"):
            assert v2[name] == pytest.approx(v1[name] / c, rel=1e-9), name


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_feature_vectors_always_finite(data):
    n = data.draw(st.integers(1, 20))
    specs = []
    ts = 0
    for _ in range(n):
        ts += data.draw(st.integers(0, 10 * US))  # zero gaps allowed
        payload = data.draw(st.integers(0, 3000))
        specs.append(
            (
                ts,
                data.draw(st.sampled_from(["f", "b"])),
                40 + payload,
                payload,
                data.draw(st.integers(0, 65535)),
                data.draw(st.integers(0, 255)),
            )
        )
    v = featurize_session(make_session(specs), window_size=data.draw(st.sampled_from([1, 5, 15])))
    for name, value in v.values.items():
        assert math.isfinite(value), name
