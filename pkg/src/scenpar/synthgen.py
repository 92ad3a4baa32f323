"""Deterministic generator of synthetic recordings with planted scenarios.

Builds a straight two-lane motorway and a set of small scripted vignettes
("plants"), each in its own longitudinal corridor far outside every other
plant's perception range: cut-ins, cut-outs and lead-vehicle-deceleration
events, compliant or deliberately non-compliant with the mining filters,
plus constant-speed nuisance traffic. Ground-truth labels for every plant
are returned alongside the recording so mining can be scored exactly.

All tracks are kinematically consistent: speeds integrate accelerations
and positions integrate speeds (trapezoidal) to float precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .ingest import Recording, VehicleTrack

LANE_MARKINGS = [0.0, 3.75, 7.5]  # two lanes driving toward +x
LANE1_CENTER = 1.875
LANE2_CENTER = 5.625
LANE1_ID = 2
LANE2_ID = 3
DT = 0.04  # 25 Hz
CAR_LENGTH = 4.6
CAR_WIDTH = 1.9

CUT_IN_SPEED_RATIO_MAX = 0.95
CUT_IN_THW_MAX = 2.0  # s
LVD_DECEL_MIN = 2.0  # m/s^2


class GenerationError(Exception):
    pass


@dataclass
class PlantSpec:
    """What to plant. Counts are numbers of scenarios per kind."""

    seed: int = 0
    cut_in: int = 0
    cut_out: int = 0
    lvd: int = 0
    cut_in_decoys: int = 0
    cut_out_decoys: int = 0
    lvd_decoys: int = 0
    nuisance: int = 0
    corridor_spacing: float = 800.0  # m, keeps plants mutually invisible
    recording_id: str = "1"


@dataclass
class PlantLabel:
    category: str  # cut_in | cut_out | lvd
    ego_id: int
    principal_id: int
    secondary_id: int | None
    key_time: float
    compliant: bool
    params: dict = field(default_factory=dict)


def generate(spec: PlantSpec) -> tuple[Recording, list[PlantLabel]]:
    """Build the recording and its ground-truth labels.

    Deterministic in ``spec`` (including the seed): identical specs yield
    bit-identical recordings.
    """
    for name in ("cut_in", "cut_out", "lvd", "cut_in_decoys",
                 "cut_out_decoys", "lvd_decoys", "nuisance"):
        if getattr(spec, name) < 0:
            raise GenerationError(f"negative count for {name}")
    rng = np.random.default_rng(spec.seed)
    builder = _Builder(spec.corridor_spacing)

    for _ in range(spec.cut_in):
        builder.plant_cut_in(rng, compliant=True)
    for _ in range(spec.cut_in_decoys):
        builder.plant_cut_in(rng, compliant=False)
    for _ in range(spec.cut_out):
        builder.plant_cut_out(rng, compliant=True)
    for _ in range(spec.cut_out_decoys):
        builder.plant_cut_out(rng, compliant=False)
    for _ in range(spec.lvd):
        builder.plant_lvd(rng, compliant=True)
    for _ in range(spec.lvd_decoys):
        builder.plant_lvd(rng, compliant=False)
    for _ in range(spec.nuisance):
        builder.plant_nuisance(rng)

    return builder.finish(spec.recording_id)


def save_recording(rec: Recording, labels: list[PlantLabel], out_dir: str | Path) -> Path:
    """Write the recording in the ingest CSV schema plus a labels JSON.

    Returns the tracks CSV path. Floats are written with full round-trip
    precision so a reload reproduces the arrays bit for bit.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = out / f"{rec.recording_id.zfill(2)}"
    tracks_path = Path(f"{prefix}_tracks.csv")
    meta_path = Path(f"{prefix}_recordingMeta.csv")

    with open(tracks_path, "w") as f:
        f.write("frame,id,x,y,width,height,xVelocity,yVelocity,"
                "xAcceleration,yAcceleration,laneId\n")
        for tr in rec.tracks:
            frames = np.rint(tr.t / (1.0 / rec.frame_rate)).astype(int)
            for i in range(len(tr)):
                f.write(f"{frames[i]},{tr.vehicle_id},{float(tr.x[i])!r},{float(tr.y[i])!r},"
                        f"{float(tr.length)!r},{float(tr.width)!r},"
                        f"{float(tr.vx[i])!r},{float(tr.vy[i])!r},"
                        f"{float(tr.ax[i])!r},{float(tr.ay[i])!r},{int(tr.lane_id[i])}\n")
    with open(meta_path, "w") as f:
        f.write("id,frameRate,duration,lowerLaneMarkings,upperLaneMarkings\n")
        lower = ";".join(repr(float(v)) for v in rec.lower_markings)
        upper = ";".join(repr(float(v)) for v in rec.upper_markings)
        f.write(f"{rec.recording_id},{float(rec.frame_rate)!r},{float(rec.duration)!r},"
                f"{lower},{upper}\n")
    with open(out / f"{rec.recording_id.zfill(2)}_labels.json", "w") as f:
        json.dump({"recording_id": rec.recording_id,
                   "labels": [asdict(l) for l in labels]}, f, indent=1, sort_keys=True)
    return tracks_path


def load_labels(path: str | Path) -> list[PlantLabel]:
    with open(path) as f:
        raw = json.load(f)
    return [PlantLabel(**d) for d in raw["labels"]]


def _speed_profile(v0: float, n: int, accel_segments) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Piecewise-constant acceleration (left-aligned per sample interval)."""
    a = np.zeros(n)
    for i0, i1, val in accel_segments:
        a[i0:i1] = val
    v = np.empty(n)
    v[0] = v0
    v[1:] = v0 + np.cumsum(a[:-1]) * DT
    if (v < -1e-12).any():
        raise GenerationError("speed profile went negative")
    x = np.concatenate([[0.0], np.cumsum(0.5 * (v[:-1] + v[1:]) * DT)])
    a = np.zeros(n)
    a[:-1] = np.diff(v) / DT
    return x, v, a


def _lateral_profile(y0: float, y1: float, n: int, i_start: int, i_end: int):
    """Lane move between sample indices; vy ramps over single steps so the
    trapezoidal integral lands exactly on y1."""
    if not (0 < i_start < i_end - 1 < n - 1):
        raise GenerationError("lateral maneuver indices out of range")
    c = (y1 - y0) / ((i_end - i_start - 1) * DT)
    vy = np.zeros(n)
    vy[i_start + 1:i_end] = c
    y = y0 + np.concatenate([[0.0], np.cumsum(0.5 * (vy[:-1] + vy[1:]) * DT)])
    ay = np.zeros(n)
    ay[:-1] = np.diff(vy) / DT
    return y, vy, ay


def _lane_ids(y: np.ndarray) -> np.ndarray:
    return np.where(y < LANE_MARKINGS[1], LANE1_ID, LANE2_ID)


class _Builder:
    def __init__(self, corridor_spacing: float):
        self.spacing = corridor_spacing
        self.tracks: list[VehicleTrack] = []
        self.labels: list[PlantLabel] = []
        self._corridor = 0

    def _next_base(self) -> float:
        base = self._corridor * self.spacing
        self._corridor += 1
        return base

    def _add_vehicle(self, x, y, vx, vy, ax, ay) -> int:
        vid = len(self.tracks) + 1
        n = len(x)
        self.tracks.append(VehicleTrack(
            vehicle_id=vid,
            t=np.arange(n) * DT,
            x=x, y=y, vx=vx, vy=vy, ax=ax, ay=ay,
            lane_id=_lane_ids(y).astype(np.int64),
            length=CAR_LENGTH, width=CAR_WIDTH, vclass="car",
        ))
        return vid

    @staticmethod
    def _const(n: int, v: float, x0: float, y0: float):
        x = x0 + np.arange(n) * v * DT
        return (x, np.full(n, y0), np.full(n, v), np.zeros(n), np.zeros(n), np.zeros(n))

    def plant_cut_in(self, rng: np.random.Generator, compliant: bool) -> None:
        base = self._next_base()
        v_e = rng.uniform(25.0, 31.0)
        if compliant:
            ratio = rng.uniform(0.82, 0.91)
            thw_target = rng.uniform(0.9, 1.7)
        elif rng.random() < 0.5:
            ratio = rng.uniform(0.96, 0.99)  # fails the 95 % speed filter
            thw_target = rng.uniform(0.9, 1.7)
        else:
            ratio = rng.uniform(0.82, 0.91)
            thw_target = rng.uniform(2.6, 3.4)  # fails the THW < 2 s filter
        v_a = ratio * v_e
        t_move = 6.0
        lc_duration = rng.uniform(2.6, 4.2)
        i_move = int(round(t_move / DT))
        i_done = i_move + int(round(lc_duration / DT))
        t_cross = t_move + lc_duration / 2.0
        duration = t_cross + 10.0 + 100.0 / min(v_a, v_e) + 3.0
        n = int(round(duration / DT)) + 1

        # ego: constant speed, then a gentle give-way deceleration so the
        # recorded data stays free of near-collisions
        i_brake = int(round((t_cross + 1.0) / DT))
        dv = v_e - v_a
        i_brake_end = i_brake + int(round(dv / 1.2 / DT))
        xe, ve, ae = _speed_profile(v_e, n, [(i_brake, i_brake_end, -1.2)])
        ego_id = self._add_vehicle(xe + base, np.full(n, LANE1_CENTER), ve,
                                   np.zeros(n), ae, np.zeros(n))

        gap0 = thw_target * v_e + (v_e - v_a) * t_cross + CAR_LENGTH
        xa, va, aa = _speed_profile(v_a, n, [])
        ya, vya, aya = _lateral_profile(LANE2_CENTER, LANE1_CENTER, n, i_move, i_done)
        actor_id = self._add_vehicle(xa + base + gap0, ya, va, vya, aa, aya)

        key_time = self._crossing_time(ya, LANE_MARKINGS[1], below=True)
        self.labels.append(PlantLabel(
            category="cut_in", ego_id=ego_id, principal_id=actor_id,
            secondary_id=None, key_time=key_time, compliant=compliant,
            params={"v_ego": v_e, "v_actor": v_a, "speed_ratio": ratio,
                    "thw_target": thw_target, "lc_duration": lc_duration},
        ))

    def plant_cut_out(self, rng: np.random.Generator, compliant: bool) -> None:
        base = self._next_base()
        v_e = rng.uniform(25.0, 31.0)
        thw_s = rng.uniform(1.2, 1.8)
        ratio_r = rng.uniform(0.85, 0.90) if compliant else rng.uniform(1.05, 1.12)
        v_r = ratio_r * v_e
        t_move = 6.0
        lc_duration = rng.uniform(2.6, 4.2)
        i_move = int(round(t_move / DT))
        i_done = i_move + int(round(lc_duration / DT))
        t_cross = t_move + lc_duration / 2.0
        duration = t_cross + 10.0 + 100.0 / min(v_e, v_r) + 3.0
        n = int(round(duration / DT)) + 1

        ego_id = self._add_vehicle(*[arr + (base if i == 0 else 0) for i, arr in
                                     enumerate(self._const(n, v_e, 0.0, LANE1_CENTER))])

        # cutting-out vehicle: ego's lead at the ego speed, leaves lane 1
        x_s0 = base + CAR_LENGTH + thw_s * v_e
        xs, vs, as_ = _speed_profile(v_e, n, [])
        ys, vys, ays = _lateral_profile(LANE1_CENTER, LANE2_CENTER, n, i_move, i_done)
        s_id = self._add_vehicle(xs + x_s0, ys, vs, vys, as_, ays)

        # revealed lead: slower (compliant) or faster (decoy) than the ego
        closure = max(v_e - v_r, 0.0)
        gap_sr = 12.0 + closure * (t_cross + 3.0)  # keeps the data collision-free
        x_r0 = x_s0 + CAR_LENGTH + gap_sr
        r_id = self._add_vehicle(*[arr + (x_r0 if i == 0 else 0) for i, arr in
                                   enumerate(self._const(n, v_r, 0.0, LANE1_CENTER))])

        key_time = self._crossing_time(ys, LANE_MARKINGS[1], below=False)
        self.labels.append(PlantLabel(
            category="cut_out", ego_id=ego_id, principal_id=s_id,
            secondary_id=r_id, key_time=key_time, compliant=compliant,
            params={"v_ego": v_e, "v_lead": v_r, "lead_ratio": ratio_r,
                    "thw_cutout": thw_s, "gap_sr": gap_sr, "lc_duration": lc_duration},
        ))

    def plant_lvd(self, rng: np.random.Generator, compliant: bool) -> None:
        base = self._next_base()
        v_e = rng.uniform(25.0, 31.0)
        thw_l = rng.uniform(1.8, 2.2)
        decel = rng.uniform(2.4, 4.2) if compliant else rng.uniform(1.2, 1.7)
        dv = min(rng.uniform(8.0, 13.0), v_e - 8.0)
        t_on = 8.0
        i_on = int(round(t_on / DT))
        brake_steps = int(round(dv / decel / DT))
        i_off = i_on + brake_steps
        dv = decel * brake_steps * DT  # realized speed drop on the grid
        duration = t_on + 12.0 + 100.0 / (v_e - dv) + 3.0
        n = int(round(duration / DT)) + 1

        # ego follows suit with a softer deceleration, slightly delayed
        e_decel = min(decel * 0.7, 2.0)
        i_e_on = i_on + int(round(1.0 / DT))
        i_e_off = i_e_on + int(round(dv / e_decel / DT))
        xe, ve, ae = _speed_profile(v_e, n, [(i_e_on, i_e_off, -e_decel)])
        ego_id = self._add_vehicle(xe + base, np.full(n, LANE1_CENTER), ve,
                                   np.zeros(n), ae, np.zeros(n))

        x_l0 = base + CAR_LENGTH + thw_l * v_e
        xl, vl, al = _speed_profile(v_e, n, [(i_on, i_off, -decel)])
        self._add_vehicle(xl + x_l0, np.full(n, LANE1_CENTER), vl,
                          np.zeros(n), al, np.zeros(n))

        self.labels.append(PlantLabel(
            category="lvd", ego_id=ego_id, principal_id=len(self.tracks),
            secondary_id=None, key_time=t_on, compliant=compliant,
            params={"v_ego": v_e, "decel": decel, "dv": dv,
                    "thw_lead": thw_l, "decel_duration": brake_steps * DT},
        ))

    def plant_nuisance(self, rng: np.random.Generator) -> None:
        base = self._next_base()
        v = rng.uniform(23.0, 33.0)
        y = LANE1_CENTER if rng.random() < 0.5 else LANE2_CENTER
        n = int(round((12.0 + 100.0 / v + 3.0) / DT)) + 1
        self._add_vehicle(*[arr + (base if i == 0 else 0) for i, arr in
                            enumerate(self._const(n, v, 0.0, y))])

    @staticmethod
    def _crossing_time(y: np.ndarray, marking: float, below: bool) -> float:
        on_new_side = (y < marking) if below else (y > marking)
        idx = int(np.argmax(on_new_side))
        if not on_new_side[idx]:
            raise GenerationError("lateral maneuver never crosses the marking")
        return idx * DT

    def finish(self, recording_id: str) -> tuple[Recording, list[PlantLabel]]:
        self._check_spawns()
        duration = max((tr.t[-1] for tr in self.tracks), default=0.0)
        rec = Recording(
            recording_id=recording_id,
            tracks=self.tracks,
            lower_markings=list(LANE_MARKINGS),
            upper_markings=[],
            frame_rate=1.0 / DT,
            duration=float(duration),
        )
        return rec, self.labels

    def _check_spawns(self) -> None:
        for i, a in enumerate(self.tracks):
            for b in self.tracks[i + 1:]:
                if abs(a.x[0] - b.x[0]) < (a.length + b.length) / 2 and \
                   abs(a.y[0] - b.y[0]) < (a.width + b.width) / 2:
                    raise GenerationError(
                        f"vehicles {a.vehicle_id} and {b.vehicle_id} spawn overlapping")
