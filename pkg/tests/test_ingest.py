import numpy as np
import pytest

from scenpar import ingest
from scenpar.ingest import extract_ego_views, load_recording
from scenpar import synthgen
from scenpar.synthgen import PlantSpec


def write_toy_recording(tmp_path, rows, markings_lower="0.0;3.75;7.5", markings_upper=""):
    tracks = tmp_path / "01_tracks.csv"
    meta = tmp_path / "01_recordingMeta.csv"
    header = ("frame,id,x,y,width,height,xVelocity,yVelocity,"
              "xAcceleration,yAcceleration,laneId\n")
    tracks.write_text(header + "".join(rows))
    meta.write_text("id,frameRate,duration,lowerLaneMarkings,upperLaneMarkings\n"
                    f"1,25,60,{markings_lower},{markings_upper}\n")
    return tracks


def toy_rows(vehicle_id, n, x0=0.0, y=1.875, vx=20.0, lane=2):
    rows = []
    for i in range(n):
        rows.append(f"{i},{vehicle_id},{x0 + vx * i * 0.04},{y},4.6,1.9,{vx},0.0,0.0,0.0,{lane}\n")
    return rows


def test_load_two_vehicle_toy(tmp_path):
    path = write_toy_recording(tmp_path, toy_rows(1, 8) + toy_rows(2, 8, x0=30.0))
    rec = load_recording(path)
    assert len(rec.tracks) == 2
    assert all(len(tr) == 8 for tr in rec.tracks)
    assert rec.dt == pytest.approx(0.04)
    tr = rec.track_by_id(2)
    assert tr.x[0] == pytest.approx(30.0)
    assert tr.length == pytest.approx(4.6)
    assert tr.width == pytest.approx(1.9)


def test_missing_column_is_schema_error(tmp_path):
    tracks = tmp_path / "01_tracks.csv"
    meta = tmp_path / "01_recordingMeta.csv"
    # xVelocity column dropped
    tracks.write_text("frame,id,x,y,width,height,yVelocity,"
                      "xAcceleration,yAcceleration,laneId\n"
                      "0,1,0.0,1.875,4.6,1.9,0.0,0.0,0.0,2\n")
    meta.write_text("id,frameRate,duration,lowerLaneMarkings,upperLaneMarkings\n"
                    "1,25,60,0.0;3.75;7.5,\n")
    with pytest.raises(ingest.SchemaError, match="xVelocity"):
        load_recording(tracks)


def test_malformed_row_reports_row_number(tmp_path):
    rows = toy_rows(1, 4)
    rows[2] = rows[2].replace("20.0", "banana", 1)
    path = write_toy_recording(tmp_path, rows)
    with pytest.raises(ingest.ParseError, match="row 4"):
        load_recording(path)


def test_frame_gap_rejected(tmp_path):
    rows = toy_rows(1, 6)
    del rows[3]
    path = write_toy_recording(tmp_path, rows)
    with pytest.raises(ingest.FormatError, match="frame gaps"):
        load_recording(path)


def test_undeclared_lane_rejected(tmp_path):
    path = write_toy_recording(tmp_path, toy_rows(1, 6, lane=9))
    with pytest.raises(ingest.FormatError, match="lane"):
        load_recording(path)


def test_synthgen_round_trip_bit_identical(tmp_path):
    spec = PlantSpec(seed=7, cut_in=2, cut_out=1, lvd=1, nuisance=3)
    rec, labels = synthgen.generate(spec)
    assert len(rec.tracks) == 2 * 2 + 3 * 1 + 2 * 1 + 3
    path = synthgen.save_recording(rec, labels, tmp_path)
    loaded = load_recording(path)
    assert len(loaded.tracks) == len(rec.tracks)
    for a, b in zip(rec.tracks, loaded.tracks):
        assert a.vehicle_id == b.vehicle_id
        for fieldname in ("t", "x", "y", "vx", "vy", "ax", "ay"):
            np.testing.assert_array_equal(getattr(a, fieldname), getattr(b, fieldname),
                                          err_msg=fieldname)
        np.testing.assert_array_equal(a.lane_id, b.lane_id)


def test_ego_view_count_matches_long_travellers(tmp_path):
    # three vehicles, all travelling > 200 m
    rows = []
    for vid in range(1, 4):
        rows += toy_rows(vid, 300, x0=vid * 300.0)  # 300 frames * 0.8 m = 240 m
    path = write_toy_recording(tmp_path, rows)
    rec = load_recording(path)
    views = extract_ego_views(rec)
    assert len(views) == 3


def test_short_track_is_excluded(tmp_path):
    rows = toy_rows(1, 300) + toy_rows(2, 50, x0=500.0)  # second travels 40 m < 100 m
    path = write_toy_recording(tmp_path, rows)
    rec = load_recording(path)
    views = extract_ego_views(rec)
    assert [v.ego.vehicle_id for v in views] == [1]


def test_view_truncated_at_end_margin(tmp_path):
    path = write_toy_recording(tmp_path, toy_rows(1, 300))
    rec = load_recording(path)
    (view,) = extract_ego_views(rec, end_margin=100.0)
    travelled_after = (rec.track_by_id(1).x[-1] - view.ego.x[-1])
    assert travelled_after >= 100.0 - 1e-9
    assert travelled_after < 100.0 + 0.8 + 1e-9  # within one sample of the margin


def test_constant_large_gap_never_visible(tmp_path):
    # 150 m constant separation: no samples within the 100 m range
    rows = toy_rows(1, 400) + toy_rows(2, 400, x0=150.0)
    path = write_toy_recording(tmp_path, rows)
    rec = load_recording(path)
    views = extract_ego_views(rec)
    assert all(v.others == [] for v in views)


def test_single_vehicle_view_has_no_others(tmp_path):
    path = write_toy_recording(tmp_path, toy_rows(1, 300))
    rec = load_recording(path)
    (view,) = extract_ego_views(rec)
    assert view.others == []


def test_visibility_clipping_respects_range():
    spec = PlantSpec(seed=3, cut_in=1, cut_out=1, lvd=1)
    rec, _ = synthgen.generate(spec)
    for view in extract_ego_views(rec):
        for seg in view.others:
            e = view.ego.slice_time(seg.t_start, seg.t_end)
            dist = np.hypot(seg.x - e.x, seg.y - e.y)
            assert np.all(dist <= 100.0 + 1e-9)


def test_mirrored_view_for_leftward_traffic(tmp_path):
    # vehicle driving toward -x on an upper carriageway
    rows = []
    for i in range(300):
        rows.append(f"{i},1,{5000.0 - 20.0 * i * 0.04},-10.0,4.6,1.9,-20.0,0.0,0.0,0.0,2\n")
        rows.append(f"{i},2,{4970.0 - 18.0 * i * 0.04},-10.0,4.6,1.9,-18.0,0.0,0.0,0.0,2\n")
    path = write_toy_recording(tmp_path, rows, markings_lower="",
                               markings_upper="-11.8;-8.2")
    rec = load_recording(path)
    views = extract_ego_views(rec)
    assert len(views) == 2
    v1 = next(v for v in views if v.ego.vehicle_id == 1)
    assert v1.mirrored
    assert v1.ego.vx[0] == pytest.approx(20.0)  # forward after mirroring
    # vehicle 2 started 30 m further along the -x travel direction, i.e.
    # ahead of vehicle 1: after mirroring it must sit at larger x
    seg = v1.segments_of(2)[0]
    assert seg.x[0] > v1.ego.x[0]


def test_load_extract_deterministic(tmp_path):
    spec = PlantSpec(seed=11, cut_in=2, lvd=1, nuisance=2)
    rec, labels = synthgen.generate(spec)
    path = synthgen.save_recording(rec, labels, tmp_path)
    v1 = extract_ego_views(load_recording(path))
    v2 = extract_ego_views(load_recording(path))
    assert len(v1) == len(v2)
    for a, b in zip(v1, v2):
        np.testing.assert_array_equal(a.ego.x, b.ego.x)
        assert len(a.others) == len(b.others)
        for sa, sb in zip(a.others, b.others):
            np.testing.assert_array_equal(sa.x, sb.x)
