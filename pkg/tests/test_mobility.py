"""Trace ingestion, synthetic generation, and state queries."""

import io
import random

import pytest

from beamsim.geometry import Position
from beamsim.mobility import (
    TRACE_HEADER,
    ExtrapolationError,
    InvalidWindowError,
    TraceFormatError,
    TraceOrderingError,
    UnknownVehicleError,
    build_synthetic,
    dump_trace,
    load_trace,
    sampling_window_speed,
    snapshot_all,
    state_at,
)


def make_trace(rows):
    return (TRACE_HEADER + "\n" + "\n".join(rows) + "\n").encode("utf-8")


class TestLoadTrace:
    def test_minimal_file(self):
        model = load_trace(make_trace(["0.0,v1,200,200,25,0"]))
        assert model.vehicle_ids() == ["v1"]
        assert len(model.samples["v1"]) == 1

    def test_duplicate_timestamp_rejected(self):
        data = make_trace(["0.0,v1,0,0,10,0", "0.0,v1,5,0,10,0"])
        with pytest.raises(TraceOrderingError):
            load_trace(data)

    def test_header_only_rejected(self):
        with pytest.raises(TraceFormatError, match="no samples"):
            load_trace((TRACE_HEADER + "\n").encode())

    def test_bad_header_rejected(self):
        with pytest.raises(TraceFormatError):
            load_trace(b"time,vid,x,y,s,h\n0,v1,0,0,0,0\n")

    def test_malformed_row_reports_line(self):
        data = make_trace(["0.0,v1,0,0,10,0", "1.0,v1,zzz,0,10,0"])
        with pytest.raises(TraceFormatError, match="line 3"):
            load_trace(data)

    def test_wrong_field_count(self):
        with pytest.raises(TraceFormatError, match="6 fields"):
            load_trace(make_trace(["0.0,v1,0,0,10"]))

    def test_negative_speed_rejected(self):
        with pytest.raises(TraceFormatError):
            load_trace(make_trace(["0.0,v1,0,0,-1,0"]))

    def test_heading_out_of_range(self):
        with pytest.raises(TraceFormatError):
            load_trace(make_trace(["0.0,v1,0,0,1,360"]))

    def test_invalid_vehicle_id(self):
        with pytest.raises(TraceFormatError, match="vehicle_id"):
            load_trace(make_trace(["0.0,v 1,0,0,1,0"]))

    def test_accepts_stream_and_path(self, tmp_path):
        data = make_trace(["0.0,v1,1,2,3,4"])
        from_stream = load_trace(io.BytesIO(data))
        path = tmp_path / "trace.csv"
        path.write_bytes(data)
        from_path = load_trace(str(path))
        assert from_stream.samples == from_path.samples


class TestRoundTrip:
    def test_dump_then_load_preserves_samples(self):
        rows = [
            "0.0,v1,0,0,10,0",
            "10.0,v1,100,0,10,0",
            "0.5,v2,3.25,7.125,12.5,359.5",
            "30.0,v2,50,50,1.0,12.25",
        ]
        first = load_trace(make_trace(rows))
        second = load_trace(dump_trace(first))
        assert first.samples == second.samples

    def test_round_trip_survives_awkward_floats(self):
        rows = ["0.1,v1,0.30000000000000004,1e-07,33.333333333333336,359.9999"]
        first = load_trace(make_trace(rows))
        second = load_trace(dump_trace(first))
        assert first.samples == second.samples


class TestStateAt:
    def test_midpoint_interpolation(self):
        model = load_trace(make_trace(["0.0,v1,0,0,10,0", "10.0,v1,100,0,10,0"]))
        snap = state_at(model, "v1", 5.0)
        assert snap.position == Position(50.0, 0.0)

    def test_exact_sample_time(self):
        model = load_trace(make_trace(["0.0,v1,0,0,10,45", "10.0,v1,100,0,12,90"]))
        assert state_at(model, "v1", 0.0).heading == 45.0
        assert state_at(model, "v1", 10.0).speed == 12.0

    def test_speed_heading_from_earlier_sample(self):
        model = load_trace(make_trace(["0.0,v1,0,0,10,45", "10.0,v1,100,0,20,90"]))
        snap = state_at(model, "v1", 5.0)
        assert snap.speed == 10.0
        assert snap.heading == 45.0

    def test_extrapolation_rejected(self):
        model = load_trace(make_trace(["0.0,v1,0,0,10,0", "10.0,v1,100,0,10,0"]))
        with pytest.raises(ExtrapolationError):
            state_at(model, "v1", 10.1)

    def test_unknown_vehicle(self):
        model = load_trace(make_trace(["0.0,v1,0,0,10,0"]))
        with pytest.raises(UnknownVehicleError):
            state_at(model, "v9", 0.0)

    def test_synthetic_closed_form(self):
        model = build_synthetic(1, 10000.0, [200.0], 30.0, 30.0, random.Random(1))
        vid = model.vehicle_ids()[0]
        snap = state_at(model, vid, 10.0)
        assert snap.position.x == pytest.approx(300.0)
        assert snap.position.y == 200.0
        assert snap.heading == 0.0

    def test_synthetic_wraps_at_right_edge(self):
        model = build_synthetic(1, 1000.0, [0.0], 30.0, 30.0, random.Random(1))
        vid = model.vehicle_ids()[0]
        snap = state_at(model, vid, 40.0)  # 1200 m of travel in a 1000 m area
        assert 0 <= snap.position.x < 1000.0


class TestSyntheticDeterminism:
    def test_same_seed_bit_identical(self):
        a = build_synthetic(25, 2850.46, [200.0], 22.0, 33.0, random.Random("s/mobility"))
        b = build_synthetic(25, 2850.46, [200.0], 22.0, 33.0, random.Random("s/mobility"))
        for vid in a.vehicle_ids():
            for t in (0.0, 17.3, 499.9):
                assert state_at(a, vid, t) == state_at(b, vid, t)

    def test_vehicles_spread_over_lanes(self):
        model = build_synthetic(6, 1000.0, [100.0, 300.0], 20.0, 20.0, random.Random(3))
        lanes = {model.lane_y[v] for v in model.vehicle_ids()}
        assert lanes == {100.0, 300.0}

    def test_speeds_within_configured_range(self):
        model = build_synthetic(50, 1000.0, [0.0], 22.0, 33.0, random.Random(9))
        assert all(22.0 <= s <= 33.0 for s in model.const_speed.values())


class TestWindowSpeed:
    def test_constant_speed_recovered(self):
        model = build_synthetic(1, 1e9, [0.0], 30.0, 30.0, random.Random(4))
        vid = model.vehicle_ids()[0]
        assert sampling_window_speed(model, vid, 60.0, 30.0) == pytest.approx(
            30.0, rel=1e-9
        )

    def test_stationary_vehicle(self):
        model = load_trace(make_trace(["0.0,v1,5,5,0,0", "100.0,v1,5,5,0,0"]))
        assert sampling_window_speed(model, "v1", 50.0, 30.0) == 0.0

    def test_insufficient_history(self):
        model = build_synthetic(1, 1e9, [0.0], 30.0, 30.0, random.Random(4))
        vid = model.vehicle_ids()[0]
        with pytest.raises(InvalidWindowError):
            sampling_window_speed(model, vid, 10.0, 30.0)


def test_snapshot_all_covers_every_vehicle():
    model = build_synthetic(5, 1000.0, [0.0], 20.0, 30.0, random.Random(5))
    snaps = snapshot_all(model, 12.0)
    assert sorted(snaps) == model.vehicle_ids()
