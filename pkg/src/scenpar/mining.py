"""Activity/status tagging of ego views and scenario mining.

Tags describe activities (lane changes, braking) and statuses (leading
vehicle, driving slower) of surrounding vehicles. Scenario instances are
found by combining tags:

* cut-in: a vehicle crosses a lane marking into the ego lane ahead of the
  ego, slower than 95 % of the ego speed and with a time headway below 2 s
  at the crossing instant;
* cut-out: the ego's lead leaves the ego lane, revealing another vehicle
  in front of it that is slower than the ego;
* lead vehicle deceleration: the ego's lead brakes with a peak
  deceleration above 2 m/s^2.

All filter values are recomputed from raw samples and stored on the
instance for auditability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import EgoView, VehicleTrack

LANE_CHANGE_LEFT = "lane_change_left"    # toward smaller y
LANE_CHANGE_RIGHT = "lane_change_right"  # toward larger y
BRAKING = "braking"
LEADING_VEHICLE = "leading_vehicle"
DRIVING_SLOWER = "driving_slower"

CUT_IN_SPEED_RATIO = 0.95
CUT_IN_THW_MAX = 2.0  # s
LVD_PEAK_DECEL_MIN = 2.0  # m/s^2
SCENARIO_PRE_S = 3.0   # window starts this long before the key instant
SCENARIO_POST_S = 10.0  # and ends this long after it (clamped to the view)

CATEGORIES = ("cut_in", "cut_out", "lvd")


@dataclass
class TagConfig:
    brake_on: float = -1.0           # m/s^2, sustained onset threshold
    brake_on_min_duration: float = 0.2  # s
    brake_off: float = -0.5          # m/s^2, hysteresis release threshold
    lat_speed_active: float = 0.2    # m/s, lateral activity threshold


@dataclass
class Tag:
    kind: str
    subject_id: int
    start: float
    end: float

    def covers(self, t: float) -> bool:
        return self.start - 1e-9 <= t <= self.end + 1e-9


@dataclass
class ScenarioInstance:
    """A mined, non-parameterized scenario: a time slice of an ego view."""

    category: str
    view: EgoView
    t_start: float
    t_end: float
    key_time: float
    maneuver_start: float
    maneuver_end: float
    principal_id: int
    secondary_id: int | None = None
    filters: dict = field(default_factory=dict)

    @property
    def scenario_id(self) -> str:
        frame = int(round(self.key_time * self.view.frame_rate))
        return f"{self.view.recording_id}:{self.view.ego.vehicle_id}:{self.category}:{frame}"

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


class _Frame:
    """Ego view resampled onto one dense (vehicle x sample) grid."""

    def __init__(self, view: EgoView):
        self.view = view
        ego = view.ego
        self.t = ego.t
        self.dt = view.dt
        k = len(self.t)
        ids = sorted({tr.vehicle_id for tr in view.others})
        self.ids = ids
        self.row = {vid: i for i, vid in enumerate(ids)}
        m = len(ids)
        self.x = np.full((m, k), np.nan)
        self.y = np.full((m, k), np.nan)
        self.vx = np.full((m, k), np.nan)
        self.vy = np.full((m, k), np.nan)
        self.ax = np.full((m, k), np.nan)
        self.length = np.zeros(m)
        self.width = np.zeros(m)
        for seg in view.others:
            r = self.row[seg.vehicle_id]
            i0 = int(round((seg.t[0] - self.t[0]) / self.dt))
            sl = slice(i0, i0 + len(seg))
            self.x[r, sl] = seg.x
            self.y[r, sl] = seg.y
            self.vx[r, sl] = seg.vx
            self.vy[r, sl] = seg.vy
            self.ax[r, sl] = seg.ax
            self.length[r] = seg.length
            self.width[r] = seg.width
        self.present = ~np.isnan(self.x)

        lo, hi = _lane_bounds_arrays(view, ego.y)
        self.ego_lane_lo = lo
        self.ego_lane_hi = hi
        in_ego_lane = (self.y > lo) & (self.y < hi)
        gap = (self.x - self.length[:, None] / 2) - (ego.x + ego.length / 2)
        self.gap = gap
        candidates = self.present & in_ego_lane & (gap > 0)
        gap_masked = np.where(candidates, gap, np.inf)
        lead = np.argmin(gap_masked, axis=0) if m else np.zeros(k, dtype=int)
        self.lead_row = np.where(candidates.any(axis=0), lead, -1)
        self.in_ego_lane = in_ego_lane

    def index_at(self, t: float) -> int:
        return int(round((t - self.t[0]) / self.dt))


def _lane_bounds_arrays(view: EgoView, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(len(y), np.nan)
    hi = np.full(len(y), np.nan)
    for group in (view.lower_markings, view.upper_markings):
        if len(group) < 2:
            continue
        g = np.asarray(group)
        idx = np.searchsorted(g, y)
        inside = (idx > 0) & (idx < len(g))
        lo[inside] = g[idx[inside] - 1]
        hi[inside] = g[idx[inside]]
    return lo, hi


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def detect_tags(view: EgoView, cfg: TagConfig | None = None) -> list[Tag]:
    """All activity and status tags of the view's surrounding vehicles."""
    cfg = cfg or TagConfig()
    frame = _Frame(view)
    tags: list[Tag] = []
    t = frame.t
    for r, vid in enumerate(frame.ids):
        present = frame.present[r]
        tags.extend(_lane_change_tags(frame, r, vid, cfg))
        tags.extend(_braking_tags(frame, r, vid, cfg))
        for i0, i1 in _runs(present & (frame.lead_row == r)):
            tags.append(Tag(LEADING_VEHICLE, vid, t[i0], t[i1 - 1]))
        slower = present & (frame.vx[r] < view.ego.vx)
        for i0, i1 in _runs(slower):
            tags.append(Tag(DRIVING_SLOWER, vid, t[i0], t[i1 - 1]))
    tags = _merge_touching(tags, frame.dt)
    tags.sort(key=lambda tag: (tag.subject_id, tag.kind, tag.start))
    return tags


def _lane_change_tags(frame: _Frame, r: int, vid: int, cfg: TagConfig) -> list[Tag]:
    y = frame.y[r]
    active = frame.present[r] & (np.abs(frame.vy[r]) >= cfg.lat_speed_active)
    markings = frame.view.markings()
    tags = []
    for i0, i1 in _runs(active):
        yy = y[i0:i1]
        crossed = False
        for m in markings:
            s = yy - m
            if np.any((s[:-1] * s[1:] < 0) | (s[:-1] == 0)):
                crossed = True
                break
        if not crossed or i1 - i0 < 2:
            continue
        kind = LANE_CHANGE_LEFT if yy[-1] < yy[0] else LANE_CHANGE_RIGHT
        tags.append(Tag(kind, vid, frame.t[i0], frame.t[i1 - 1]))
    return tags


def _braking_tags(frame: _Frame, r: int, vid: int, cfg: TagConfig) -> list[Tag]:
    """Hysteresis: onset below brake_on sustained for the minimum duration,
    release when the acceleration rises above brake_off. The tag includes
    the instant the deceleration has ended."""
    ax = frame.ax[r]
    t = frame.t
    n = len(t)
    n_min = max(1, int(round(cfg.brake_on_min_duration / frame.dt)))
    tags = []
    i = 0
    while i < n:
        if not (ax[i] < cfg.brake_on):  # False for NaN: absence breaks runs
            i += 1
            continue
        j = i
        while j < n and ax[j] < cfg.brake_on:
            j += 1
        if j - i >= n_min:
            k = j
            while k < n and ax[k] <= cfg.brake_off:
                k += 1
            end = min(k, n - 1)
            tags.append(Tag(BRAKING, vid, t[i], t[end]))
            i = end + 1
        else:
            i = j
    return tags


def _merge_touching(tags: list[Tag], dt: float) -> list[Tag]:
    merged: list[Tag] = []
    by_key: dict[tuple[str, int], list[Tag]] = {}
    for tag in tags:
        by_key.setdefault((tag.kind, tag.subject_id), []).append(tag)
    for group in by_key.values():
        group.sort(key=lambda tag: tag.start)
        cur = group[0]
        for nxt in group[1:]:
            if nxt.start - cur.end < 1.5 * dt:
                cur = Tag(cur.kind, cur.subject_id, cur.start, max(cur.end, nxt.end))
            else:
                merged.append(cur)
                cur = nxt
        merged.append(cur)
    return merged


def _window(view: EgoView, key_time: float) -> tuple[float, float]:
    return (max(view.t_start, key_time - SCENARIO_PRE_S),
            min(view.t_end, key_time + SCENARIO_POST_S))


def mine_cut_ins(tags: list[Tag], view: EgoView) -> list[ScenarioInstance]:
    """Cut-in instances: lane change into the ego lane, ahead of the ego,
    actor slower than 95 % of the ego speed, THW < 2 s at the crossing."""
    frame = _Frame(view)
    ego = view.ego
    out = []
    for tag in tags:
        if tag.kind not in (LANE_CHANGE_LEFT, LANE_CHANGE_RIGHT):
            continue
        r = frame.row[tag.subject_id]
        i0, i1 = frame.index_at(tag.start), frame.index_at(tag.end)
        for i in range(max(i0, 1), i1 + 1):
            if not (frame.in_ego_lane[r, i] and not frame.in_ego_lane[r, i - 1]):
                continue
            if not frame.present[r, i]:
                continue
            gap = frame.gap[r, i]
            v_e, v_a = ego.vx[i], frame.vx[r, i]
            if gap <= 0 or v_e <= 0:
                continue
            ratio = v_a / v_e
            thw = gap / v_e
            if ratio < CUT_IN_SPEED_RATIO and thw < CUT_IN_THW_MAX:
                key = float(frame.t[i])
                t_lo, t_hi = _window(view, key)
                out.append(ScenarioInstance(
                    category="cut_in", view=view, t_start=t_lo, t_end=t_hi,
                    key_time=key, maneuver_start=tag.start, maneuver_end=tag.end,
                    principal_id=tag.subject_id,
                    filters={"speed_ratio": float(ratio), "thw": float(thw),
                             "gap": float(gap)},
                ))
            break  # one candidate crossing per lane-change tag
    out.sort(key=lambda s: (s.key_time, s.principal_id))
    return out


def mine_cut_outs(tags: list[Tag], view: EgoView) -> list[ScenarioInstance]:
    """Cut-out instances: the ego's lead leaves the ego lane and reveals a
    slower vehicle ahead of it."""
    frame = _Frame(view)
    ego = view.ego
    lead_tags = [t for t in tags if t.kind == LEADING_VEHICLE]
    out = []
    for tag in tags:
        if tag.kind not in (LANE_CHANGE_LEFT, LANE_CHANGE_RIGHT):
            continue
        r = frame.row[tag.subject_id]
        i0, i1 = frame.index_at(tag.start), frame.index_at(tag.end)
        for i in range(max(i0, 1), i1 + 1):
            if not (frame.in_ego_lane[r, i - 1] and not frame.in_ego_lane[r, i]):
                continue
            if not frame.present[r, i]:
                continue
            was_lead = any(lt.subject_id == tag.subject_id and lt.covers(frame.t[i - 1])
                           for lt in lead_tags)
            if not was_lead:
                break
            rev = frame.lead_row[i]
            if rev < 0 or frame.ids[rev] == tag.subject_id:
                break
            v_e, v_r = ego.vx[i], frame.vx[rev, i]
            ahead_of_principal = frame.x[rev, i] > frame.x[r, i]
            if ahead_of_principal and v_r < v_e:
                key = float(frame.t[i])
                t_lo, t_hi = _window(view, key)
                out.append(ScenarioInstance(
                    category="cut_out", view=view, t_start=t_lo, t_end=t_hi,
                    key_time=key, maneuver_start=tag.start, maneuver_end=tag.end,
                    principal_id=tag.subject_id, secondary_id=int(frame.ids[rev]),
                    filters={"v_lead": float(v_r), "v_ego": float(v_e),
                             "lead_gap": float(frame.gap[rev, i])},
                ))
            break
    out.sort(key=lambda s: (s.key_time, s.principal_id))
    return out


def mine_lvd(tags: list[Tag], view: EgoView) -> list[ScenarioInstance]:
    """Lead-vehicle-deceleration instances: the ego's lead brakes with a
    peak deceleration above 2 m/s^2; the key instant is the braking onset."""
    frame = _Frame(view)
    lead_tags = [t for t in tags if t.kind == LEADING_VEHICLE]
    out = []
    for tag in tags:
        if tag.kind != BRAKING:
            continue
        r = frame.row[tag.subject_id]
        i0, i1 = frame.index_at(tag.start), frame.index_at(tag.end)
        ax = frame.ax[r, i0:i1 + 1]
        peak = -np.nanmin(ax) if np.isfinite(ax).any() else 0.0
        if peak <= LVD_PEAK_DECEL_MIN:
            continue
        is_lead = any(lt.subject_id == tag.subject_id and lt.covers(tag.start)
                      for lt in lead_tags)
        if not is_lead:
            continue
        key = tag.start
        t_lo, t_hi = _window(view, key)
        out.append(ScenarioInstance(
            category="lvd", view=view, t_start=t_lo, t_end=t_hi,
            key_time=key, maneuver_start=tag.start, maneuver_end=tag.end,
            principal_id=tag.subject_id,
            filters={"peak_decel": float(peak),
                     "decel_duration": float(tag.end - tag.start)},
        ))
    out.sort(key=lambda s: (s.key_time, s.principal_id))
    return out


def mine_view(view: EgoView, cfg: TagConfig | None = None) -> list[ScenarioInstance]:
    tags = detect_tags(view, cfg)
    return mine_cut_ins(tags, view) + mine_cut_outs(tags, view) + mine_lvd(tags, view)


def instance_record(inst: ScenarioInstance) -> dict:
    """Catalog export: everything needed to rebuild the instance from its
    recording."""
    return {
        "scenario_id": inst.scenario_id,
        "category": inst.category,
        "recording_id": inst.view.recording_id,
        "ego_id": inst.view.ego.vehicle_id,
        "principal_id": inst.principal_id,
        "secondary_id": inst.secondary_id,
        "t_start": inst.t_start,
        "t_end": inst.t_end,
        "key_time": inst.key_time,
        "maneuver_start": inst.maneuver_start,
        "maneuver_end": inst.maneuver_end,
        "filters": inst.filters,
    }


def write_catalog(instances: list[ScenarioInstance], path: str | Path,
                  meta: dict | None = None) -> None:
    payload = dict(meta or {})
    payload["instances"] = [instance_record(i) for i in instances]
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def instance_from_record(record: dict, view: EgoView) -> ScenarioInstance:
    return ScenarioInstance(
        category=record["category"],
        view=view,
        t_start=record["t_start"],
        t_end=record["t_end"],
        key_time=record["key_time"],
        maneuver_start=record["maneuver_start"],
        maneuver_end=record["maneuver_end"],
        principal_id=record["principal_id"],
        secondary_id=record["secondary_id"],
        filters=dict(record.get("filters", {})),
    )
