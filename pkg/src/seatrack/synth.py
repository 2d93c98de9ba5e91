"""Deterministic synthetic AIS scenarios.

Vessels follow waypoint routes with flat lat/lon kinematics (no great-circle
correction; scenario regions are a few tens of kilometres across). Heading
turns toward the active waypoint at a bounded rate, speed wanders around a
base value inside ``base +/- speed_jitter``, and reports arrive at irregular
whole-second intervals. A fraction of the fleet (``overlap``) shares a few
corridors so their tracks cross and coincide.

Units in the emitted records match the input CSV: speed in tenths of knots,
course in degrees.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, fields
from datetime import timedelta
from pathlib import Path

import numpy as np

from .data import AisRecord, parse_timestamp
from .errors import ConfigError
from .tensor import Rng

NM_PER_DEG = 60.0
SUBSTEP_S = 5.0


@dataclass
class ScenarioConfig:
    name: str = "custom"
    vessel_count: int = 5
    region: tuple = (37.80, 38.00, 23.45, 23.75)  # lat_min, lat_max, lon_min, lon_max
    duration_s: float = 43200.0
    overlap: float = 0.0
    corridors: int = 3
    seed: int = 0
    start: str = "2020-02-29T22:00:00Z"
    rows_per_vessel: int = 1422
    rows_spread: float = 0.0
    interval_jitter: float = 0.6
    speed_range: tuple = (60.0, 160.0)  # tenths of knots
    speed_jitter: float = 8.0  # tenths of knots
    course_noise: float = 2.0  # degrees, uniform +/-
    turn_rate: float = 1.0  # degrees per second
    lane_width_m: float = 600.0
    gap_prob: float = 0.0
    gap_len: tuple = (10, 40)

    def __post_init__(self):
        if self.vessel_count < 2:
            raise ConfigError("vessel_count must be at least 2")
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be positive")
        lat0, lat1, lon0, lon1 = self.region
        if not (-90 <= lat0 < lat1 <= 90 and -180 <= lon0 < lon1 <= 180):
            raise ConfigError(f"region {self.region} is empty or out of bounds")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError("overlap must be in [0, 1]")
        if not 0.0 <= self.gap_prob <= 1.0:
            raise ConfigError("gap_prob must be in [0, 1]")
        if self.rows_per_vessel < 2:
            raise ConfigError("rows_per_vessel must be at least 2")
        if not 0.0 <= self.interval_jitter < 1.0:
            raise ConfigError("interval_jitter must be in [0, 1)")
        if self.speed_range[0] - self.speed_jitter < 0:
            raise ConfigError("speed_range minus speed_jitter must stay non-negative")


@dataclass
class VesselProfile:
    vessel_id: str
    origin: tuple
    waypoints: list
    base_speed: float  # tenths of knots
    speed_jitter: float  # tenths of knots
    course_noise: float  # degrees
    mean_interval_s: float
    interval_jitter: float
    turn_rate: float
    gap_prob: float = 0.0
    gap_len: tuple = (10, 40)
    corridor: int | None = None


SCENARIOS = {
    "small5": ScenarioConfig(
        name="small5", vessel_count=5, overlap=0.0, rows_per_vessel=1422, seed=5,
    ),
    "port30": ScenarioConfig(
        name="port30", vessel_count=30, overlap=0.6, corridors=4, rows_per_vessel=1010,
        rows_spread=0.5, gap_prob=0.001, gap_len=(10, 40), seed=30,
    ),
}


def scenario(name: str, seed: int | None = None) -> ScenarioConfig:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; available: {', '.join(sorted(SCENARIOS))}")
    base = SCENARIOS[name]
    kwargs = {f.name: getattr(base, f.name) for f in fields(base)}
    if seed is not None:
        kwargs["seed"] = seed
    return ScenarioConfig(**kwargs)


def load_scenario(path, seed: int | None = None) -> ScenarioConfig:
    """Read a flat ``key = value`` scenario file; tuples are comma-separated."""
    kinds = {f.name: f for f in fields(ScenarioConfig)}
    defaults = ScenarioConfig()
    kwargs = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        current = getattr(defaults, key)
        try:
            if isinstance(current, tuple):
                kwargs[key] = tuple(type(c)(v.strip()) for c, v in zip(current, value.split(",")))
                if len(kwargs[key]) != len(current):
                    raise ValueError
            elif isinstance(current, str):
                kwargs[key] = value
            else:
                kwargs[key] = type(current)(value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    if seed is not None:
        kwargs["seed"] = seed
    return ScenarioConfig(**kwargs)


def _grid(n: int) -> tuple[int, int]:
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    return rows, cols


def build_profiles(config: ScenarioConfig) -> list[VesselProfile]:
    rng = Rng(config.seed)
    lat0, lat1, lon0, lon1 = config.region
    n = config.vessel_count
    n_shared = int(round(config.overlap * n))
    n_private = n - n_shared
    m_per_deg_lat = NM_PER_DEG * 1852.0
    m_per_deg_lon = m_per_deg_lat * math.cos(math.radians((lat0 + lat1) / 2))

    corridors = []
    for _ in range(max(1, config.corridors) if n_shared else 0):
        # one end in the western third (port side), the other toward the east
        a = (lat0 + (lat1 - lat0) * rng.uniform((1,), 0.15, 0.85)[0].item(),
             lon0 + (lon1 - lon0) * rng.uniform((1,), 0.05, 0.30)[0].item())
        b = (lat0 + (lat1 - lat0) * rng.uniform((1,), 0.15, 0.85)[0].item(),
             lon0 + (lon1 - lon0) * rng.uniform((1,), 0.70, 0.95)[0].item())
        corridors.append((a, b))

    rows, cols = _grid(max(n_private, 1))
    profiles = []
    for k in range(n):
        base = float(rng.uniform((1,), config.speed_range[0], config.speed_range[1], dtype=np.float64)[0])
        spread = float(rng.uniform((1,), -config.rows_spread, config.rows_spread + 1e-12, dtype=np.float64)[0])
        n_rows = config.rows_per_vessel * math.exp(spread)
        if k < n_private:
            r, c = divmod(k, cols)
            cl0 = lat0 + (lat1 - lat0) * r / rows
            cw0 = lon0 + (lon1 - lon0) * c / cols
            dlat, dlon = (lat1 - lat0) / rows, (lon1 - lon0) / cols
            count = int(rng.integers(3, 6))
            pts = rng.uniform((count, 2), 0.2, 0.8, dtype=np.float64)
            # order around the cell centre so the loop does not self-cross
            ang = np.arctan2(pts[:, 0] - 0.5, pts[:, 1] - 0.5)
            pts = pts[np.argsort(ang)]
            wps = [(cl0 + dlat * p[0], cw0 + dlon * p[1]) for p in pts]
            corridor = None
        else:
            corridor = (k - n_private) % len(corridors)
            (alat, alon), (blat, blon) = corridors[corridor]
            dx, dy = (blon - alon) * m_per_deg_lon, (blat - alat) * m_per_deg_lat
            length = math.hypot(dx, dy)
            off = float(rng.uniform((1,), -0.5, 0.5, dtype=np.float64)[0]) * config.lane_width_m
            # unit normal in metres, back to degrees
            olat, olon = (dx / length) * off / m_per_deg_lat, (-dy / length) * off / m_per_deg_lon
            a = (alat + olat, alon + olon)
            b = (blat + olat, blon + olon)
            wps = [a, b] if k % 2 == 0 else [b, a]
        profiles.append(VesselProfile(
            vessel_id=f"vessel {k + 1}", origin=wps[0], waypoints=wps, base_speed=base,
            speed_jitter=config.speed_jitter, course_noise=config.course_noise,
            mean_interval_s=config.duration_s / n_rows, interval_jitter=config.interval_jitter,
            turn_rate=config.turn_rate, gap_prob=config.gap_prob, gap_len=tuple(config.gap_len),
            corridor=corridor,
        ))
    return profiles


def _bearing(lat, lon, tlat, tlon) -> float:
    dy = tlat - lat
    dx = (tlon - lon) * math.cos(math.radians(lat))
    return math.degrees(math.atan2(dx, dy)) % 360.0


def _dist_m(lat, lon, tlat, tlon) -> float:
    dy = (tlat - lat) * NM_PER_DEG * 1852.0
    dx = (tlon - lon) * NM_PER_DEG * 1852.0 * math.cos(math.radians(lat))
    return math.hypot(dx, dy)


def simulate_vessel(profile: VesselProfile, duration_s: float, rng: Rng):
    """Yield ``(t_seconds, lat, lon, speed_tenths, course_deg)`` reports."""
    lat, lon = profile.origin
    wps = profile.waypoints
    target = 1 % len(wps)
    heading = _bearing(lat, lon, *wps[target])
    base_kn = profile.base_speed / 10.0
    jit_kn = profile.speed_jitter / 10.0
    v = base_kn
    tau = 300.0
    sigma = jit_kn * math.sqrt(2.0 / tau) * 0.5
    gen = rng.generator
    t = float(gen.integers(0, max(1, int(profile.mean_interval_s))))
    clock = 0.0
    while t <= duration_s:
        # advance state to time t in bounded substeps
        while clock < t:
            dt = min(SUBSTEP_S, t - clock)
            tlat, tlon = wps[target]
            turn_radius = (v * 1852.0 / 3600.0) / math.radians(max(profile.turn_rate, 1e-6))
            if _dist_m(lat, lon, tlat, tlon) < max(2.5 * turn_radius, 200.0):
                target = (target + 1) % len(wps)
                tlat, tlon = wps[target]
            want = _bearing(lat, lon, tlat, tlon)
            diff = (want - heading + 180.0) % 360.0 - 180.0
            limit = profile.turn_rate * dt
            heading = (heading + max(-limit, min(limit, diff))) % 360.0
            v += -(v - base_kn) * dt / tau + sigma * math.sqrt(dt) * gen.standard_normal()
            v = min(max(v, base_kn - jit_kn), base_kn + jit_kn)
            dist_nm = v * dt / 3600.0
            rad = math.radians(heading)
            lat += dist_nm * math.cos(rad) / NM_PER_DEG
            lon += dist_nm * math.sin(rad) / (NM_PER_DEG * math.cos(math.radians(lat)))
            clock += dt
        noise = gen.uniform(-profile.course_noise, profile.course_noise)
        yield t, lat, lon, v * 10.0, (heading + noise) % 360.0
        step = profile.mean_interval_s * gen.uniform(1 - profile.interval_jitter, 1 + profile.interval_jitter)
        t += max(1.0, float(round(step)))


def generate(config: ScenarioConfig, profiles: list[VesselProfile] | None = None) -> list[AisRecord]:
    """Simulate every vessel and merge the reports into one time-ordered list."""
    profiles = profiles if profiles is not None else build_profiles(config)
    start = parse_timestamp(config.start)
    root = Rng(np.random.SeedSequence([config.seed & 0xFFFFFFFF, 7919]))
    rows = []
    for k, prof in enumerate(profiles):
        vrng = root.spawn()
        for t, lat, lon, speed, course in simulate_vessel(prof, config.duration_s, vrng):
            rows.append((t, k, round(float(lat), 7), round(float(lon), 7), round(float(speed), 1),
                         round(float(course), 1) % 360.0))
    rows.sort(key=lambda r: (r[0], r[1]))
    records = [
        AisRecord(object_id=i + 1, vessel_id=profiles[k].vessel_id, timestamp=start + timedelta(seconds=t),
                  lat=lat, lon=lon, speed=speed, course=course)
        for i, (t, k, lat, lon, speed, course) in enumerate(rows)
    ]
    if config.gap_prob > 0:
        records = inject_gaps(records, config.gap_prob, config.gap_len, seed=config.seed)
    return records


def inject_gaps(records: list[AisRecord], gap_prob: float, gap_len=(1, 1), seed: int = 0) -> list[AisRecord]:
    """Remove contiguous stretches of each vessel's reports.

    At every eligible row a gap starts with probability ``gap_prob`` and
    removes ``gap_len`` rows (an int or an inclusive ``(lo, hi)`` range). A
    vessel's first and last reports are never removed. Order is preserved.
    """
    if not 0.0 <= gap_prob <= 1.0:
        raise ValueError("gap_prob must be in [0, 1]")
    lo, hi = (gap_len, gap_len) if isinstance(gap_len, int) else tuple(gap_len)
    if lo < 1 or hi < lo:
        raise ValueError(f"bad gap length range {gap_len}")
    if gap_prob == 0:
        return list(records)
    rng = Rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 104729]))
    by_vessel = defaultdict(list)
    for pos, rec in enumerate(records):
        by_vessel[rec.vessel_id].append(pos)
    removed = set()
    for vid in sorted(by_vessel, key=str):
        idx = by_vessel[vid]
        i = 1
        while i < len(idx) - 1:
            if rng.random() < gap_prob:
                length = int(rng.integers(lo, hi + 1))
                for j in range(i, min(i + length, len(idx) - 1)):
                    removed.add(idx[j])
                i += length
            else:
                i += 1
    return [rec for pos, rec in enumerate(records) if pos not in removed]


def iter_stream(config: ScenarioConfig, rows: int, start_id: int = 1):
    """Endless-style generator of records for load testing; cycles the scenario with shifted times.

    Memory use is one scenario's worth of records regardless of ``rows``.
    """
    base = generate(config)
    span = timedelta(seconds=config.duration_s + 1)
    emitted, cycle = 0, 0
    while emitted < rows:
        shift = span * cycle
        for rec in base:
            if emitted >= rows:
                return
            yield AisRecord(start_id + emitted, rec.vessel_id, rec.timestamp + shift,
                            rec.lat, rec.lon, rec.speed, rec.course)
            emitted += 1
        cycle += 1
