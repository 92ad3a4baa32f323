"""Loading of trajectory recordings and construction of ego-centric views.

Recordings follow a HighD-compatible CSV layout: a ``<prefix>_tracks.csv``
with one row per vehicle per frame and a ``<prefix>_recordingMeta.csv`` with
the frame rate and lane marking positions. Positions are bounding-box
centers in meters, velocities in m/s, accelerations in m/s^2.

Every vehicle is treated as an ego vehicle once. An ego view contains the
surrounding traffic clipped to a limited perception range and is truncated
before the ego runs out of recorded road, so vehicles do not pop out of
existence right in front of the ego.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

TRACK_COLUMNS = [
    "frame", "id", "x", "y", "width", "height",
    "xVelocity", "yVelocity", "xAcceleration", "yAcceleration", "laneId",
]
META_COLUMNS = ["id", "frameRate", "duration", "lowerLaneMarkings", "upperLaneMarkings"]

DEFAULT_VISIBILITY_RANGE = 100.0  # m
DEFAULT_END_MARGIN = 100.0  # m
TRUCK_LENGTH_THRESHOLD = 6.0  # m, class split when no class column is present


class IngestError(Exception):
    """Base error for recording ingestion."""


class SchemaError(IngestError):
    """A required column is missing or a file cannot be located."""


class ParseError(IngestError):
    """A row holds values that cannot be parsed."""


class FormatError(IngestError):
    """The file parses but violates a format contract (e.g. frame gaps)."""


@dataclass
class Lane:
    lane_id: int
    y_low: float
    y_high: float
    direction: int  # +1 driving toward +x, -1 toward -x

    @property
    def center(self) -> float:
        return 0.5 * (self.y_low + self.y_high)


@dataclass
class VehicleTrack:
    """Time series of one vehicle at a constant sample step."""

    vehicle_id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    lane_id: np.ndarray
    length: float
    width: float
    vclass: str = "car"

    def __len__(self) -> int:
        return len(self.t)

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def index_at(self, t: float) -> int:
        """Index of the sample closest to time t (clamped to the track)."""
        dt = float(self.t[1] - self.t[0]) if len(self.t) > 1 else 1.0
        i = int(round((t - self.t[0]) / dt))
        return min(max(i, 0), len(self.t) - 1)

    def covers(self, t: float) -> bool:
        return self.t_start - 1e-9 <= t <= self.t_end + 1e-9

    def slice_time(self, t0: float, t1: float) -> "VehicleTrack":
        mask = (self.t >= t0 - 1e-9) & (self.t <= t1 + 1e-9)
        return replace(
            self,
            t=self.t[mask], x=self.x[mask], y=self.y[mask],
            vx=self.vx[mask], vy=self.vy[mask],
            ax=self.ax[mask], ay=self.ay[mask],
            lane_id=self.lane_id[mask],
        )

    def travel_distance(self) -> float:
        if len(self.t) < 2:
            return 0.0
        return float(np.sum(np.hypot(np.diff(self.x), np.diff(self.y))))


@dataclass
class Recording:
    recording_id: str
    tracks: list[VehicleTrack]
    lower_markings: list[float]
    upper_markings: list[float]
    frame_rate: float
    duration: float
    source: Path | None = None

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def lanes(self) -> list[Lane]:
        """Lanes derived from the marking positions.

        Upper lanes (driving toward -x) are numbered 2..len(upper), lower
        lanes continue after a gap of one, mirroring the public HighD ids.
        """
        lanes = []
        for i in range(len(self.upper_markings) - 1):
            lanes.append(Lane(i + 2, self.upper_markings[i], self.upper_markings[i + 1], -1))
        offset = len(self.upper_markings) + 1 if self.upper_markings else 1
        for i in range(len(self.lower_markings) - 1):
            lanes.append(Lane(offset + i + 1, self.lower_markings[i], self.lower_markings[i + 1], +1))
        return lanes

    def track_by_id(self, vehicle_id: int) -> VehicleTrack:
        for tr in self.tracks:
            if tr.vehicle_id == vehicle_id:
                return tr
        raise KeyError(f"no track with id {vehicle_id}")


@dataclass
class EgoView:
    """One vehicle's perspective: surrounding traffic within perception range.

    ``others`` holds per-sample clipped segments; a vehicle that leaves and
    re-enters perception appears as separate segments sharing a vehicle_id.
    When the ego drives toward -x the view is mirrored (x, vx, ax negated)
    so downstream code can assume travel toward +x.
    """

    recording_id: str
    ego: VehicleTrack
    others: list[VehicleTrack]
    t_start: float
    t_end: float
    lower_markings: list[float]
    upper_markings: list[float]
    frame_rate: float
    mirrored: bool = False

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def markings(self) -> list[float]:
        return sorted(self.lower_markings + self.upper_markings)

    def lane_bounds_at(self, y: float) -> tuple[float, float] | None:
        """The (low, high) marking pair containing lateral position y."""
        for group in (self.lower_markings, self.upper_markings):
            for lo, hi in zip(group, group[1:]):
                if lo <= y <= hi:
                    return (lo, hi)
        # 0.5 m tolerance at the road edges
        for group in (self.lower_markings, self.upper_markings):
            if group and group[0] - 0.5 <= y <= group[-1] + 0.5:
                y_c = min(max(y, group[0]), group[-1])
                for lo, hi in zip(group, group[1:]):
                    if lo <= y_c <= hi:
                        return (lo, hi)
        return None

    def segments_of(self, vehicle_id: int) -> list[VehicleTrack]:
        return [tr for tr in self.others if tr.vehicle_id == vehicle_id]


def _meta_path_for(tracks_path: Path) -> Path:
    name = tracks_path.name
    if name.endswith("_tracks.csv"):
        return tracks_path.with_name(name.replace("_tracks.csv", "_recordingMeta.csv"))
    return tracks_path.with_name(tracks_path.stem + "_recordingMeta.csv")


def _parse_markings(raw) -> list[float]:
    if raw is None or (isinstance(raw, float) and np.isnan(raw)):
        return []
    text = str(raw).strip()
    if not text:
        return []
    return [float(v) for v in text.split(";") if v.strip()]


def load_recording(path: str | Path) -> Recording:
    """Load a recording from a ``*_tracks.csv`` and its metadata file.

    :param path: path to the tracks CSV; the ``*_recordingMeta.csv`` is
        resolved next to it.
    :raises SchemaError: missing file or missing required column.
    :raises ParseError: a row does not parse, reported with its row number.
    :raises FormatError: frame gaps (non-uniform timestep) in some track.
    """
    tracks_path = Path(path)
    if not tracks_path.exists():
        raise SchemaError(f"tracks file not found: {tracks_path}")
    meta_path = _meta_path_for(tracks_path)
    if not meta_path.exists():
        raise SchemaError(f"recording metadata not found: {meta_path}")

    meta_df = pd.read_csv(meta_path)
    for col in META_COLUMNS:
        if col not in meta_df.columns:
            raise SchemaError(f"metadata column missing: {col}")
    meta = meta_df.iloc[0]
    frame_rate = float(meta["frameRate"])
    if frame_rate <= 0:
        raise FormatError(f"invalid frameRate {frame_rate}")
    lower = _parse_markings(meta["lowerLaneMarkings"])
    upper = _parse_markings(meta["upperLaneMarkings"])

    try:
        # round_trip parsing keeps repr-written floats bit-identical
        df = pd.read_csv(tracks_path, float_precision="round_trip")
    except Exception as exc:  # malformed CSV structure
        raise ParseError(f"cannot parse {tracks_path}: {exc}") from exc
    for col in TRACK_COLUMNS:
        if col not in df.columns:
            raise SchemaError(f"tracks column missing: {col}")

    numeric_cols = [c for c in TRACK_COLUMNS if c not in ("frame", "id", "laneId")]
    for col in numeric_cols + ["frame", "id", "laneId"]:
        converted = pd.to_numeric(df[col], errors="coerce")
        if converted.isna().any():
            row = int(np.argmax(converted.isna().to_numpy())) + 2  # +header +1-based
            raise ParseError(f"unparseable value in column {col!r} at row {row}")
        df[col] = converted

    has_class = "class" in df.columns
    dt = 1.0 / frame_rate
    tracks: list[VehicleTrack] = []
    for vid, g in df.groupby("id", sort=True):
        g = g.sort_values("frame")
        frames = g["frame"].to_numpy(dtype=np.int64)
        if len(frames) > 1 and not np.all(np.diff(frames) == 1):
            raise FormatError(f"track {int(vid)} has frame gaps; variable-rate recordings are rejected")
        length = float(g["width"].iloc[0])
        width = float(g["height"].iloc[0])
        if length <= 0 or width <= 0:
            raise FormatError(f"track {int(vid)} has non-positive dimensions")
        if has_class:
            vclass = str(g["class"].iloc[0]).strip().lower()
        else:
            vclass = "truck" if length > TRUCK_LENGTH_THRESHOLD else "car"
        tracks.append(VehicleTrack(
            vehicle_id=int(vid),
            t=frames.astype(float) * dt,
            x=g["x"].to_numpy(dtype=float),
            y=g["y"].to_numpy(dtype=float),
            vx=g["xVelocity"].to_numpy(dtype=float),
            vy=g["yVelocity"].to_numpy(dtype=float),
            ax=g["xAcceleration"].to_numpy(dtype=float),
            ay=g["yAcceleration"].to_numpy(dtype=float),
            lane_id=g["laneId"].to_numpy(dtype=np.int64),
            length=length,
            width=width,
            vclass=vclass,
        ))

    rec = Recording(
        recording_id=str(int(meta["id"])),
        tracks=tracks,
        lower_markings=lower,
        upper_markings=upper,
        frame_rate=frame_rate,
        duration=float(meta["duration"]),
        source=tracks_path,
    )
    _validate_recording(rec)
    return rec


def _validate_recording(rec: Recording) -> None:
    lane_ids = {lane.lane_id for lane in rec.lanes()}
    all_markings = rec.lower_markings + rec.upper_markings
    if not all_markings:
        raise FormatError("recording declares no lane markings")
    y_min, y_max = min(all_markings) - 0.5, max(all_markings) + 0.5
    for tr in rec.tracks:
        bad = set(np.unique(tr.lane_id)) - lane_ids
        if bad:
            raise FormatError(f"track {tr.vehicle_id} uses undeclared lane ids {sorted(bad)}")
        if tr.y.min() < y_min or tr.y.max() > y_max:
            raise FormatError(f"track {tr.vehicle_id} leaves the marked road area")


def _mirror(track: VehicleTrack) -> VehicleTrack:
    return replace(track, x=-track.x, vx=-track.vx, ax=-track.ax)


def extract_ego_views(
    rec: Recording,
    visibility_range: float = DEFAULT_VISIBILITY_RANGE,
    end_margin: float = DEFAULT_END_MARGIN,
    ego_ids: list[int] | None = None,
) -> list[EgoView]:
    """Build one ego view per vehicle.

    Each view ends at the last instant the ego still has at least
    ``end_margin`` of recorded travel ahead of it (arc length along its
    path); other vehicles appear only at samples within
    ``visibility_range`` (Euclidean) of the ego. Vehicles whose whole
    track is shorter than ``end_margin`` are flagged and skipped.

    :param ego_ids: restrict extraction to these vehicles (all by default).
    """
    if not rec.tracks:
        raise IngestError("recording has no tracks")
    views: list[EgoView] = []
    wanted = set(ego_ids) if ego_ids is not None else None
    for ego in rec.tracks:
        if wanted is not None and ego.vehicle_id not in wanted:
            continue
        view = _ego_view_for(rec, ego, visibility_range, end_margin)
        if view is None:
            log.warning("recording %s: vehicle %d travels less than the end margin, view skipped",
                        rec.recording_id, ego.vehicle_id)
            continue
        views.append(view)
    return views


def _ego_view_for(
    rec: Recording, ego: VehicleTrack, visibility_range: float, end_margin: float,
) -> EgoView | None:
    if len(ego) < 2:
        return None
    steps = np.hypot(np.diff(ego.x), np.diff(ego.y))
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    remaining = arc[-1] - arc
    valid = remaining >= end_margin - 1e-9
    if not valid[0]:
        return None
    last = int(np.argmin(valid)) - 1 if not valid[-1] else len(ego) - 1
    if last < 1:
        return None
    t_start, t_end = float(ego.t[0]), float(ego.t[last])

    ego_cut = ego.slice_time(t_start, t_end)
    others: list[VehicleTrack] = []
    for tr in rec.tracks:
        if tr.vehicle_id == ego.vehicle_id:
            continue
        others.extend(_visible_segments(ego_cut, tr, visibility_range))

    mirrored = ego_cut.x[-1] < ego_cut.x[0]
    if mirrored:
        ego_cut = _mirror(ego_cut)
        others = [_mirror(tr) for tr in others]
    return EgoView(
        recording_id=rec.recording_id,
        ego=ego_cut,
        others=others,
        t_start=t_start,
        t_end=t_end,
        lower_markings=list(rec.lower_markings),
        upper_markings=list(rec.upper_markings),
        frame_rate=rec.frame_rate,
        mirrored=mirrored,
    )


def _visible_segments(
    ego: VehicleTrack, other: VehicleTrack, visibility_range: float,
) -> list[VehicleTrack]:
    t0 = max(ego.t_start, other.t_start)
    t1 = min(ego.t_end, other.t_end)
    if t1 - t0 <= 0:
        return []
    # cheap reject: x intervals further apart than visibility can never meet
    if (min(other.x.min() - ego.x.max(), ego.x.min() - other.x.max()) > visibility_range):
        return []
    e = ego.slice_time(t0, t1)
    o = other.slice_time(t0, t1)
    if len(e) != len(o) or len(e) < 2:
        return []
    dist = np.hypot(o.x - e.x, o.y - e.y)
    visible = dist <= visibility_range + 1e-12
    segments = []
    for i0, i1 in _true_runs(visible):
        if i1 - i0 < 2:
            continue  # single-sample glimpses carry no kinematics
        segments.append(o.slice_time(float(o.t[i0]), float(o.t[i1 - 1])))
    return segments


def _true_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) index ranges of consecutive True values."""
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))
