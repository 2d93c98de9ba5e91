import io
from collections import defaultdict

import numpy as np
import pytest

from seatrack import data, synth
from seatrack.errors import ConfigError
from seatrack.synth import ScenarioConfig, generate, inject_gaps


def _csv_bytes(records):
    buf = io.StringIO()
    data.write_csv(records, buf)
    return buf.getvalue().encode()


def _by_vessel(records):
    out = defaultdict(list)
    for r in records:
        out[r.vessel_id].append(r)
    return out


def test_small5_shape(small5_records):
    per = _by_vessel(small5_records)
    assert len(per) == 5
    assert 6_500 <= len(small5_records) <= 7_700
    prepared = data.prepare(small5_records, seed=0)
    assert abs(len(prepared.train) + len(prepared.val) - 5688) < 300
    assert abs(len(prepared.test) - 1422) < 100


def test_same_seed_same_bytes(small5_records):
    assert _csv_bytes(generate(synth.scenario("small5"))) == _csv_bytes(small5_records)
    assert _csv_bytes(generate(synth.scenario("small5", seed=6))) != _csv_bytes(small5_records)


def test_small5_nearest_centroid_on_position(small5_records):
    prepared = data.prepare(small5_records, seed=0)
    tr, te = prepared.train, prepared.test
    k = len(prepared.label_map)
    cent = np.stack([tr.features[tr.labels == c, :2].mean(axis=0) for c in range(k)])
    dist = ((te.features[:, None, :2] - cent[None]) ** 2).sum(axis=-1)
    assert (dist.argmin(axis=1) == te.labels).mean() >= 0.99


def test_output_passes_pipeline_unchanged(small5_records):
    records, rejects = data.parse_text(_csv_bytes(small5_records).decode())
    assert not rejects
    kept, dropped = data.clean_and_threshold(records)
    assert dropped == [] and len(kept) == len(small5_records)
    assert [r.timestamp for r in records] == sorted(r.timestamp for r in records)
    assert [r.object_id for r in records] == list(range(1, len(records) + 1))


def test_speed_matches_displacement(small5_records):
    cfg = synth.scenario("small5")
    for prof in synth.build_profiles(cfg):
        rows = _by_vessel(small5_records)[prof.vessel_id]
        band = 2 * prof.speed_jitter / 10  # knots
        top = (prof.base_speed + prof.speed_jitter) / 10
        for a, b in zip(rows, rows[1:]):
            dt = (b.timestamp - a.timestamp).total_seconds()
            implied = synth._dist_m(a.lat, a.lon, b.lat, b.lon) / 1852 / (dt / 3600)
            assert implied <= top * 1.001
            assert abs(implied - (a.speed + b.speed) / 20) <= band


def test_course_changes_bounded(small5_records):
    cfg = synth.scenario("small5")
    for prof in synth.build_profiles(cfg):
        rows = _by_vessel(small5_records)[prof.vessel_id]
        for a, b in zip(rows, rows[1:]):
            assert 0 <= a.course < 360
            dt = (b.timestamp - a.timestamp).total_seconds()
            turn = abs((b.course - a.course + 180) % 360 - 180)
            assert turn <= prof.turn_rate * dt + 2 * prof.course_noise + 0.1


def test_irregular_intervals(small5_records):
    rows = _by_vessel(small5_records)["vessel 1"]
    gaps = {(b.timestamp - a.timestamp).total_seconds() for a, b in zip(rows, rows[1:])}
    assert len(gaps) > 10


def test_port30_overlaps():
    cfg = synth.scenario("port30")
    recs = generate(cfg)
    per = _by_vessel(recs)
    assert len(per) == 30
    assert 27_000 <= len(recs) <= 33_000
    shared = [p for p in synth.build_profiles(cfg) if p.corridor is not None]
    assert len(shared) == 18
    lane = [p.vessel_id for p in shared if p.corridor == 0][:2]
    boxes = []
    for vid in lane:
        lat = [r.lat for r in per[vid]]
        lon = [r.lon for r in per[vid]]
        boxes.append((min(lat), max(lat), min(lon), max(lon)))
    (a0, a1, a2, a3), (b0, b1, b2, b3) = boxes
    assert a0 < b1 and b0 < a1 and a2 < b3 and b2 < a3


def test_config_errors():
    with pytest.raises(ConfigError):
        ScenarioConfig(vessel_count=1)
    with pytest.raises(ConfigError):
        ScenarioConfig(duration_s=0)
    with pytest.raises(ConfigError):
        ScenarioConfig(region=(38.0, 38.0, 23.0, 24.0))
    with pytest.raises(ConfigError, match="small5"):
        synth.scenario("harbor")


def test_load_scenario(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_text("# tiny\nname = tiny\nvessel_count = 3\nrows_per_vessel = 60\nregion = 10, 10.1, 20, 20.1\n")
    cfg = synth.load_scenario(path, seed=4)
    assert (cfg.name, cfg.vessel_count, cfg.seed, cfg.region) == ("tiny", 3, 4, (10.0, 10.1, 20.0, 20.1))
    assert len(_by_vessel(generate(cfg))) == 3
    path.write_text("vessels = 3\n")
    with pytest.raises(ConfigError):
        synth.load_scenario(path)


def _line(n_vessels=2, rows=5000):
    cfg = ScenarioConfig(vessel_count=n_vessels, rows_per_vessel=rows, duration_s=rows * 10.0, seed=1)
    return generate(cfg)


def test_gaps_identity_and_boundary(small5_records):
    assert inject_gaps(small5_records, 0.0) == small5_records
    per = _by_vessel(small5_records)
    left = inject_gaps(small5_records, 1.0, gap_len=10**6)
    assert len(left) == 2 * len(per)
    for vid, rows in _by_vessel(left).items():
        assert rows == [per[vid][0], per[vid][-1]]


@pytest.mark.parametrize("gap_len,expected", [(1, 0.1), (3, 0.3 / 1.2)])
def test_gap_fraction(gap_len, expected):
    recs = _line()
    out = inject_gaps(recs, 0.1, gap_len, seed=9)
    assert abs((1 - len(out) / len(recs)) - expected) <= 0.02
    pos = {id(r): k for k, r in enumerate(recs)}
    order = [pos[id(r)] for r in out]
    assert order == sorted(order)


def test_stream_cycles_with_shifted_times():
    cfg = ScenarioConfig(vessel_count=2, rows_per_vessel=20, duration_s=200, seed=3)
    base = generate(cfg)
    rows = list(synth.iter_stream(cfg, 3 * len(base) + 1))
    assert len(rows) == 3 * len(base) + 1
    assert [r.object_id for r in rows] == list(range(1, len(rows) + 1))
    assert [r.timestamp for r in rows] == sorted(r.timestamp for r in rows)
