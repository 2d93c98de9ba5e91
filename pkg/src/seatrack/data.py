"""AIS ingestion and preprocessing.

Input files are UTF-8 CSV with the header
``ID,VID,SEQUENCE_DTTM,LAT,LON,SPEED,COURSE``. Speed is in tenths of knots
and course in degrees; raw units go straight into the scaler.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np

from .errors import DimensionError, FormatError, PipelineError
from .tensor import FLOAT, Rng

log = logging.getLogger(__name__)

HEADER = ("ID", "VID", "SEQUENCE_DTTM", "LAT", "LON", "SPEED", "COURSE")
FEATURES = ("lat", "lon", "speed", "course")


@dataclass(frozen=True)
class AisRecord:
    """One AIS report. ``None`` marks a missing field."""

    object_id: int | None
    vessel_id: str | None
    timestamp: datetime | None
    lat: float | None
    lon: float | None
    speed: float | None
    course: float | None
    line: int = 0

    @property
    def complete(self) -> bool:
        return None not in (self.object_id, self.vessel_id, self.timestamp,
                            self.lat, self.lon, self.speed, self.course)

    @property
    def features(self) -> tuple:
        return (self.lat, self.lon, self.speed, self.course)


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    if ts.microsecond:
        return ts.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def _number(text: str, name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{name} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"{name} is not finite: {text!r}")
    return value


def parse_row(fields: list[str], line: int) -> AisRecord:
    """Parse one data row; raises ``ValueError`` with a readable reason."""
    if len(fields) != len(HEADER):
        raise ValueError(f"expected {len(HEADER)} fields, got {len(fields)}")
    raw = [f.strip() for f in fields]
    oid, vid, ts, lat, lon, speed, course = (r if r != "" else None for r in raw)

    object_id = None
    if oid is not None:
        try:
            object_id = int(oid)
        except ValueError:
            raise ValueError(f"ID is not an integer: {oid!r}") from None
    timestamp = None
    if ts is not None:
        try:
            timestamp = parse_timestamp(ts)
        except ValueError:
            raise ValueError(f"SEQUENCE_DTTM is not ISO-8601: {ts!r}") from None
    lat_v = _number(lat, "LAT") if lat is not None else None
    if lat_v is not None and not -90.0 <= lat_v <= 90.0:
        raise ValueError(f"LAT out of range: {lat_v}")
    lon_v = _number(lon, "LON") if lon is not None else None
    if lon_v is not None and not -180.0 <= lon_v <= 180.0:
        raise ValueError(f"LON out of range: {lon_v}")
    speed_v = _number(speed, "SPEED") if speed is not None else None
    if speed_v is not None and speed_v < 0:
        raise ValueError(f"SPEED is negative: {speed_v}")
    course_v = _number(course, "COURSE") % 360.0 if course is not None else None
    return AisRecord(object_id, vid, timestamp, lat_v, lon_v, speed_v, course_v, line)


def _check_header(row: list[str] | None) -> None:
    if row is None:
        raise FormatError("missing header row")
    got = tuple(c.strip().lstrip("﻿") for c in row)
    if got != HEADER:
        raise FormatError(f"header must be {','.join(HEADER)}; got {','.join(got)}")


def iter_rows(stream: TextIO) -> Iterator[AisRecord | Reject]:
    """Yield a record or a :class:`Reject` per data row, in file order."""
    reader = csv.reader(stream)
    _check_header(next(reader, None))
    for fields in reader:
        line = reader.line_num
        if not fields:
            continue
        try:
            yield parse_row(fields, line)
        except ValueError as exc:
            yield Reject(line, str(exc))


def parse_csv(path) -> tuple[list[AisRecord], list[Reject]]:
    """Read an AIS CSV into records plus a list of rejected lines."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(iter_rows(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    records = [r for r in rows if isinstance(r, AisRecord)]
    rejects = [r for r in rows if isinstance(r, Reject)]
    if rejects:
        log.warning("%s: rejected %d malformed rows", path, len(rejects))
    return records, rejects


def parse_text(text: str) -> tuple[list[AisRecord], list[Reject]]:
    rows = list(iter_rows(io.StringIO(text)))
    return ([r for r in rows if isinstance(r, AisRecord)],
            [r for r in rows if isinstance(r, Reject)])


def format_row(rec: AisRecord) -> list[str]:
    def num(v, fmt):
        return "" if v is None else format(v, fmt)
    return [
        "" if rec.object_id is None else str(rec.object_id),
        rec.vessel_id or "",
        "" if rec.timestamp is None else format_timestamp(rec.timestamp),
        num(rec.lat, ".7f"), num(rec.lon, ".7f"), num(rec.speed, ".1f"), num(rec.course, ".1f"),
    ]


def write_csv(records: Iterable[AisRecord], out) -> None:
    """Write records in the input schema to a path or open text stream."""
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="", encoding="utf-8") as fh:
            write_csv(records, fh)
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(HEADER)
    for rec in records:
        writer.writerow(format_row(rec))


def write_rejects(rejects: Iterable[Reject], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("line", "reason"))
        for r in rejects:
            writer.writerow((r.line, r.reason))


# -- cleaning --------------------------------------------------------------------

def clean_and_threshold(records: Iterable[AisRecord], min_obs: int = 50):
    """Drop incomplete rows, then every vessel with fewer than ``min_obs`` rows.

    Returns ``(kept, dropped)`` where ``dropped`` lists ``(vessel_id, count)``
    for removed vessels. Vessels with exactly ``min_obs`` rows are kept.
    """
    complete = [r for r in records if r.complete]
    counts = Counter(r.vessel_id for r in complete)
    dropped = sorted((v, n) for v, n in counts.items() if n < min_obs)
    gone = {v for v, _ in dropped}
    kept = [r for r in complete if r.vessel_id not in gone]
    if counts and not kept:
        raise PipelineError(f"all {len(counts)} vessels have fewer than {min_obs} observations")
    if not kept:
        raise PipelineError("no complete records to train on")
    return kept, dropped


def select_vessels(records: list[AisRecord], max_vessels: int | None = 30,
                   allowlist: Iterable[str] | None = None) -> list[AisRecord]:
    """Keep an explicit allowlist, or else the ``max_vessels`` most-observed vessels."""
    if allowlist is not None:
        allowed = set(allowlist)
    else:
        counts = Counter(r.vessel_id for r in records)
        if max_vessels is None or len(counts) <= max_vessels:
            return list(records)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        allowed = {v for v, _ in ranked[:max_vessels]}
    return [r for r in records if r.vessel_id in allowed]


# -- encoding & scaling ------------------------------------------------------------

@dataclass(frozen=True)
class LabelMap:
    """Sorted vessel ids; a class index is a position in ``classes``."""

    classes: tuple

    @classmethod
    def from_vessels(cls, vessel_ids: Iterable[str]) -> "LabelMap":
        return cls(tuple(sorted(set(vessel_ids))))

    def __len__(self) -> int:
        return len(self.classes)

    def __contains__(self, vessel_id) -> bool:
        return vessel_id in self._index

    @property
    def _index(self) -> dict:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {v: k for k, v in enumerate(self.classes)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def encode(self, vessel_id: str) -> int:
        try:
            return self._index[vessel_id]
        except KeyError:
            raise KeyError(f"unknown vessel {vessel_id!r}") from None

    def decode(self, index: int) -> str:
        return self.classes[int(index)]


@dataclass(frozen=True)
class ScalerParams:
    mean: tuple
    std: tuple

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))


def fit_scaler(train_features: np.ndarray) -> ScalerParams:
    """Per-feature mean and population standard deviation of the training rows."""
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise PipelineError(f"cannot fit a scaler on features of shape {x.shape}")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    for k, s in enumerate(std):
        if not s > 0:
            name = FEATURES[k] if x.shape[1] == len(FEATURES) else f"feature {k}"
            raise PipelineError(f"{name} is constant in the training split; cannot scale it")
    return ScalerParams(tuple(float(v) for v in mean), tuple(float(v) for v in std))


def apply_scaler(params: ScalerParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    return ((x - np.asarray(params.mean)) / np.asarray(params.std)).astype(FLOAT)


def invert_scaler(params: ScalerParams, scaled: np.ndarray) -> np.ndarray:
    z = np.asarray(scaled, dtype=np.float64)
    return z * np.asarray(params.std) + np.asarray(params.mean)


def to_model_input(features: np.ndarray) -> np.ndarray:
    """``[N, 4]`` -> ``[N, 4, 1]`` (lat, lon, speed, course as a length-4 sequence)."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != len(FEATURES):
        raise DimensionError(f"expected [N, {len(FEATURES)}] features, got {features.shape}")
    return features.reshape(features.shape[0], len(FEATURES), 1)


# -- datasets & splitting ------------------------------------------------------------

@dataclass
class Dataset:
    features: np.ndarray  # [N, 4]
    labels: np.ndarray  # [N] int64
    timestamps: list = field(default_factory=list)
    object_ids: list = field(default_factory=list)
    tag: str = "all"

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, idx, tag: str) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx],
                       [self.timestamps[i] for i in idx] if self.timestamps else [],
                       [self.object_ids[i] for i in idx] if self.object_ids else [], tag)

    def model_input(self) -> np.ndarray:
        return to_model_input(self.features)


def build_dataset(records: list[AisRecord], label_map: LabelMap) -> Dataset:
    """Encode complete records into a raw-unit dataset, time-ordered."""
    order = sorted(range(len(records)),
                   key=lambda k: (records[k].timestamp, records[k].object_id, k))
    recs = [records[k] for k in order]
    feats = np.array([r.features for r in recs], dtype=np.float64).reshape(len(recs), len(FEATURES))
    labels = np.array([label_map.encode(r.vessel_id) for r in recs], dtype=np.int64)
    return Dataset(feats, labels, [r.timestamp for r in recs], [r.object_id for r in recs])


def split(dataset: Dataset, ratios=(70, 10, 20), seed: int = 0):
    """Stratified train/val/test split; each class is divided by ``ratios``.

    Rows keep their original (time) order inside every split.
    """
    ratios = tuple(ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) != 100:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 100, got {ratios}")
    rng = Rng(seed)
    parts = ([], [], [])
    for cls in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == cls)
        if idx.size < 3:
            raise PipelineError(f"class {cls} has {idx.size} rows; at least 3 are needed to stratify")
        idx = idx[rng.permutation(idx.size)]
        n_train = int(math.floor(idx.size * ratios[0] / 100 + 0.5))
        n_val = int(math.floor(idx.size * ratios[1] / 100 + 0.5))
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    tags = ("train", "val", "test")
    return tuple(dataset.subset(np.sort(np.concatenate(p)), t) for p, t in zip(parts, tags))


@dataclass
class Prepared:
    """Everything training needs, produced by :func:`prepare`."""

    train: Dataset
    val: Dataset
    test: Dataset
    scaler: ScalerParams
    label_map: LabelMap
    dropped: list
    raw_test: Dataset  # unscaled copy of the test split


def prepare(records: list[AisRecord], *, min_obs: int = 50, max_vessels: int | None = 30,
            allowlist=None, ratios=(70, 10, 20), seed: int = 0) -> Prepared:
    """clean -> select vessels -> threshold -> encode -> split -> scale (train-fitted)."""
    complete = [r for r in records if r.complete]
    chosen = select_vessels(complete, max_vessels, allowlist)
    kept, dropped = clean_and_threshold(chosen, min_obs)
    label_map = LabelMap.from_vessels(r.vessel_id for r in kept)
    if len(label_map) < 2:
        raise PipelineError(f"need at least two vessels, have {len(label_map)}")
    full = build_dataset(kept, label_map)
    train, val, test = split(full, ratios, seed)
    scaler = fit_scaler(train.features)
    raw_test = replace(test)
    scaled = [replace(d, features=apply_scaler(scaler, d.features)) for d in (train, val, test)]
    return Prepared(*scaled, scaler=scaler, label_map=label_map, dropped=dropped, raw_test=raw_test)
