"""Dataset records, ten-shard splits, JSONL persistence, batching and CSV input.

On disk a dataset is a directory holding ``shard-00.jsonl`` ... ``shard-09.jsonl``
and ``manifest.json``. Each shard line is one JSON object with fields ``id``,
``label`` (0/1), ``label_raw``, ``global`` (2001 numbers), ``local`` (201) and
``gaussian`` (251). Shards 0-7 train, 8 validates, 9 tests.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, InputFormatError, PreprocessingError, ShardFormatError
from .fileutil import atomic_write_text
from .lightcurve import LightCurve, TceMeta, ViewSet
from .numerics import DTYPE, make_rng

log = logging.getLogger(__name__)

N_SHARDS = 10
TRAIN_SHARDS = tuple(range(8))
VALIDATION_SHARD = 8
TEST_SHARD = 9
RECORD_LABELS = ("PC", "AFP", "NTP")
VIEW_FIELDS = {"global": 2001, "local": 201, "gaussian": 251}
MANIFEST_NAME = "manifest.json"

# sub-stream keys under a seed
_SHARD_STREAM = 10
_BATCH_STREAM = 2

LIGHTCURVE_COLUMNS = ("time", "flux")
TCE_COLUMNS = ("id", "period_days", "epoch_days", "duration_hours", "label")


def shard_filename(index: int) -> str:
    return f"shard-{index:02d}.jsonl"


@dataclass(frozen=True)
class TceRecord:
    id: str
    label: int
    label_raw: str
    views: ViewSet

    def __post_init__(self):
        if self.label_raw not in RECORD_LABELS:
            raise ArgumentError(f"record {self.id}: label_raw {self.label_raw!r} not in {RECORD_LABELS}")
        if self.label != int(self.label_raw == "PC"):
            raise ArgumentError(
                f"record {self.id}: label {self.label} inconsistent with {self.label_raw}")

    def to_json(self) -> str:
        def nums(a):
            return "[" + ",".join(format(x, ".17g") for x in a.tolist()) + "]"
        v = self.views
        return (f'{{"id":{json.dumps(self.id)},"label":{self.label},'
                f'"label_raw":{json.dumps(self.label_raw)},'
                f'"global":{nums(v.global_view)},"local":{nums(v.local_view)},'
                f'"gaussian":{nums(v.gaussian_view)}}}')

    @classmethod
    def from_json(cls, line: str, path="<string>", lineno=None) -> "TceRecord":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ShardFormatError(path, lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise ShardFormatError(path, lineno, "record is not a JSON object")
        for name in ("id", "label", "label_raw", *VIEW_FIELDS):
            if name not in obj:
                raise ShardFormatError(path, lineno, f"missing field '{name}'")
        views = {}
        for name, n in VIEW_FIELDS.items():
            try:
                arr = np.asarray(obj[name], dtype=DTYPE)
            except (TypeError, ValueError):
                raise ShardFormatError(path, lineno, f"field '{name}' is not numeric") from None
            if arr.shape != (n,):
                raise ShardFormatError(path, lineno, f"field '{name}' has {arr.size} values, expected {n}")
            views[name] = arr
        try:
            return cls(str(obj["id"]), int(obj["label"]), str(obj["label_raw"]),
                       ViewSet(views["global"], views["local"], views["gaussian"]))
        except ArgumentError as exc:
            raise ShardFormatError(path, lineno, str(exc)) from None


@dataclass
class ArraySplit:
    """Stacked views of a list of records, ready for batched training."""

    ids: list[str]
    labels: np.ndarray
    views: dict[str, np.ndarray]

    def __len__(self):
        return len(self.ids)


def to_arrays(records: Sequence[TceRecord], views: Iterable[str] = tuple(VIEW_FIELDS)) -> ArraySplit:
    views = tuple(views)
    stacked = {}
    for name in views:
        n = VIEW_FIELDS[name]
        stacked[name] = (np.stack([r.views[name] for r in records]) if records
                         else np.zeros((0, n), DTYPE))
    labels = np.array([r.label for r in records], dtype=np.int64)
    return ArraySplit([r.id for r in records], labels, stacked)


@dataclass
class ShardSet:
    shards: list[list[TceRecord]]
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.shards) != N_SHARDS:
            raise ArgumentError(f"a shard set has {N_SHARDS} shards, got {len(self.shards)}")
        seen = set()
        for shard in self.shards:
            for r in shard:
                if r.id in seen:
                    raise ArgumentError(f"record id {r.id!r} appears in more than one place")
                seen.add(r.id)

    @property
    def train(self) -> list[TceRecord]:
        return [r for i in TRAIN_SHARDS for r in self.shards[i]]

    @property
    def validation(self) -> list[TceRecord]:
        return list(self.shards[VALIDATION_SHARD])

    @property
    def test(self) -> list[TceRecord]:
        return list(self.shards[TEST_SHARD])

    def split(self, name: str) -> list[TceRecord]:
        key = {"train": "train", "val": "validation", "validation": "validation",
               "test": "test"}.get(name)
        if key is None:
            raise ArgumentError(f"unknown split {name!r}; choose train, val or test")
        return getattr(self, key)

    def train_arrays(self, views=tuple(VIEW_FIELDS)) -> ArraySplit:
        return to_arrays(self.train, views)

    def validation_arrays(self, views=tuple(VIEW_FIELDS)) -> ArraySplit:
        return to_arrays(self.validation, views)

    def test_arrays(self, views=tuple(VIEW_FIELDS)) -> ArraySplit:
        return to_arrays(self.test, views)

    def __len__(self):
        return sum(len(s) for s in self.shards)


def split_shards(records: Sequence[TceRecord], seed: int) -> ShardSet:
    """Seeded shuffle, then round-robin assignment to ten shards."""
    records = list(records)
    if len(records) < N_SHARDS:
        raise ArgumentError(f"need at least {N_SHARDS} records to shard, got {len(records)}")
    order = make_rng(seed, _SHARD_STREAM).permutation(len(records))
    shards = [[] for _ in range(N_SHARDS)]
    for i, j in enumerate(order):
        shards[i % N_SHARDS].append(records[j])
    return ShardSet(shards, seed)


def _role(index: int) -> str:
    if index == VALIDATION_SHARD:
        return "validation"
    if index == TEST_SHARD:
        return "test"
    return "train"


def manifest_for(shard_set: ShardSet) -> dict:
    return {
        "format_version": 1,
        "seed": shard_set.seed,
        "n_records": len(shard_set),
        "roles": {"train": list(TRAIN_SHARDS), "validation": [VALIDATION_SHARD],
                  "test": [TEST_SHARD]},
        "shards": [
            {"file": shard_filename(i), "role": _role(i), "count": len(s),
             "positives": sum(r.label for r in s)}
            for i, s in enumerate(shard_set.shards)
        ],
        "view_lengths": dict(VIEW_FIELDS),
        **shard_set.extra,
    }


def write_shards(shard_set: ShardSet, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, shard in enumerate(shard_set.shards):
        text = "".join(r.to_json() + "\n" for r in shard)
        atomic_write_text(directory / shard_filename(i), text)
    atomic_write_text(directory / MANIFEST_NAME,
                      json.dumps(manifest_for(shard_set), indent=2, sort_keys=True) + "\n")
    return directory


def read_shard_file(path) -> list[TceRecord]:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(TceRecord.from_json(line, path, lineno))
    return records


def read_shards(directory) -> ShardSet:
    directory = Path(directory)
    if not directory.is_dir():
        raise InputFormatError(f"{directory}: not a directory")
    seed = None
    manifest_path = directory / MANIFEST_NAME
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ShardFormatError(manifest_path, exc.lineno, f"invalid JSON: {exc.msg}") from None
        seed = manifest.get("seed")
    shards = []
    for i in range(N_SHARDS):
        path = directory / shard_filename(i)
        if not path.exists():
            raise ShardFormatError(path, None, "shard file missing")
        shards.append(read_shard_file(path))
    try:
        return ShardSet(shards, seed)
    except ArgumentError as exc:
        raise ShardFormatError(directory, None, str(exc)) from None


def batch_indices(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index batches for one epoch: seeded permutation, trailing partial batch dropped."""
    if batch_size < 1:
        raise ArgumentError("batch_size must be >= 1")
    if n < 1:
        raise ArgumentError("cannot batch an empty training set")
    order = make_rng(seed, _BATCH_STREAM, epoch).permutation(n)
    full = n // batch_size
    return [order[i * batch_size:(i + 1) * batch_size] for i in range(full)]


def batches(records: Sequence[TceRecord], batch_size: int, seed: int, epoch: int) -> list[list[TceRecord]]:
    return [[records[i] for i in idx]
            for idx in batch_indices(len(records), batch_size, seed, epoch)]


def _read_csv_rows(path, required: Sequence[str]):
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputFormatError(f"{path}: cannot read ({exc.strerror})") from None
    with fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in required:
            if col not in header:
                raise InputFormatError(f"{path}: missing column '{col}'")
        reader.fieldnames = header
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def read_lightcurve_csv(path) -> LightCurve:
    """Read a ``time,flux`` CSV. Non-finite rows are dropped; rows are sorted by time."""
    times, fluxes = [], []
    for lineno, row in _read_csv_rows(path, LIGHTCURVE_COLUMNS):
        try:
            t, f = float(row["time"]), float(row["flux"])
        except (TypeError, ValueError):
            raise InputFormatError(f"{path}:{lineno}: time/flux not numeric") from None
        if math.isfinite(t) and math.isfinite(f):
            times.append(t)
            fluxes.append(f)
    return _as_lightcurve(np.array(times), np.array(fluxes), path)


def _as_lightcurve(t: np.ndarray, f: np.ndarray, source) -> LightCurve:
    order = np.argsort(t, kind="stable")
    t, f = t[order], f[order]
    if t.size:
        keep = np.concatenate([[True], np.diff(t) > 0])
        if not keep.all():
            log.warning("%s: dropped %d duplicate timestamps", source, int((~keep).sum()))
        t, f = t[keep], f[keep]
    if t.size < 2:
        raise PreprocessingError(f"{source}: fewer than 2 usable points")
    return LightCurve(t, f)


def load_lightcurve(lightcurve_dir, tce_id: str) -> LightCurve:
    """Load ``<dir>/<id>.csv``, or concatenate the sorted segments in ``<dir>/<id>/*.csv``."""
    base = Path(lightcurve_dir)
    single = base / f"{tce_id}.csv"
    if single.exists():
        return read_lightcurve_csv(single)
    segdir = base / tce_id
    parts = sorted(segdir.glob("*.csv")) if segdir.is_dir() else []
    if not parts:
        raise InputFormatError(f"{base}: no light curve for {tce_id!r}")
    segs = [read_lightcurve_csv(p) for p in parts]
    return _as_lightcurve(np.concatenate([s.time for s in segs]),
                          np.concatenate([s.flux for s in segs]), segdir)


def read_tce_table(path) -> list[TceMeta]:
    """Read the ``id,period_days,epoch_days,duration_hours,label`` table."""
    out = []
    for lineno, row in _read_csv_rows(path, TCE_COLUMNS):
        label = (row["label"] or "").strip().upper()
        try:
            out.append(TceMeta(period=float(row["period_days"]), epoch_t0=float(row["epoch_days"]),
                               duration=float(row["duration_hours"]), label_raw=label,
                               tce_id=row["id"].strip()))
        except (TypeError, ValueError) as exc:
            raise InputFormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_lightcurve_csv(lc: LightCurve, path) -> None:
    lines = ["time,flux"] + [f"{t!r},{f!r}" for t, f in zip(lc.time.tolist(), lc.flux.tolist())]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_tce_table(metas: Sequence[TceMeta], path) -> None:
    lines = [",".join(TCE_COLUMNS)]
    for m in metas:
        lines.append(f"{m.tce_id},{m.period!r},{m.epoch_t0!r},{m.duration!r},{m.label_raw}")
    atomic_write_text(path, "\n".join(lines) + "\n")
