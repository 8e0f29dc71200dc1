import json

import numpy as np
import pytest

from transitnet.dataio import (
    TceRecord,
    batch_indices,
    batches,
    load_lightcurve,
    read_lightcurve_csv,
    read_shard_file,
    read_shards,
    read_tce_table,
    shard_filename,
    split_shards,
    write_lightcurve_csv,
    write_shards,
    write_tce_table,
)
from transitnet.errors import ArgumentError, InputFormatError, ShardFormatError
from transitnet.lightcurve import LightCurve, TceMeta, ViewSet, flatten, raw_views
from transitnet.numerics import make_rng
from transitnet.synthetic import EB, NOISE, PLANET, synth_curves, synth_generate, synth_kinds

_ZERO_VIEWS = ViewSet(np.zeros(2001), np.zeros(201), np.zeros(251))


def fake_records(n):
    return [TceRecord(f"tce-{i}", int(i % 3 == 0), "PC" if i % 3 == 0 else "AFP", _ZERO_VIEWS)
            for i in range(n)]


def random_record(i, rng):
    views = ViewSet(rng.standard_normal(2001), rng.standard_normal(201), rng.standard_normal(251))
    return TceRecord(f"r{i}", 0, "NTP", views)


def records_equal(a, b):
    return (a.id == b.id and a.label == b.label and a.label_raw == b.label_raw
            and all(np.array_equal(a.views[k], b.views[k]) for k in ("global", "local", "gaussian")))


# -- records -----------------------------------------------------------------

def test_record_label_consistency():
    with pytest.raises(ArgumentError):
        TceRecord("x", 1, "AFP", _ZERO_VIEWS)
    with pytest.raises(ArgumentError):
        TceRecord("x", 0, "UNK", _ZERO_VIEWS)


def test_record_json_exact():
    rec = random_record(0, make_rng(0))
    assert records_equal(TceRecord.from_json(rec.to_json()), rec)
    assert list(json.loads(rec.to_json())) == ["id", "label", "label_raw", "global", "local", "gaussian"]


def test_missing_field_names_field():
    obj = json.loads(random_record(0, make_rng(0)).to_json())
    del obj["gaussian"]
    with pytest.raises(ShardFormatError, match="gaussian") as info:
        TceRecord.from_json(json.dumps(obj), "shard-03.jsonl", 7)
    assert "shard-03.jsonl:7" in str(info.value)


def test_wrong_view_length():
    obj = json.loads(random_record(0, make_rng(0)).to_json())
    obj["local"] = obj["local"][:-1]
    with pytest.raises(ShardFormatError, match="local"):
        TceRecord.from_json(json.dumps(obj))


# -- sharding ----------------------------------------------------------------

@pytest.mark.parametrize("n, sizes", [
    (20, [2] * 10),
    (15740, [1574] * 10),
    (23, [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]),
])
def test_shard_sizes(n, sizes):
    assert [len(s) for s in split_shards(fake_records(n), seed=1).shards] == sizes


def test_shards_partition_ids():
    recs = fake_records(137)
    ss = split_shards(recs, seed=4)
    ids = [r.id for s in ss.shards for r in s]
    assert sorted(ids) == sorted(r.id for r in recs)
    assert len(ss.train) == sum(len(s) for s in ss.shards[:8])
    assert ss.validation == ss.shards[8] and ss.test == ss.shards[9]
    assert ss.split("val") == ss.validation


def test_shard_seed_determinism():
    recs = fake_records(50)
    a, b, c = (split_shards(recs, s) for s in (3, 3, 4))
    ids = lambda ss: [[r.id for r in s] for s in ss.shards]
    assert ids(a) == ids(b) and ids(a) != ids(c)


def test_too_few_records():
    with pytest.raises(ArgumentError):
        split_shards(fake_records(9), seed=0)


def test_shard_roundtrip(tmp_path):
    rng = make_rng(2)
    recs = [random_record(i, rng) for i in range(100)]
    ss = split_shards(recs, seed=8)
    write_shards(ss, tmp_path)
    back = read_shards(tmp_path)
    assert back.seed == 8
    for s_in, s_out in zip(ss.shards, back.shards):
        assert len(s_in) == len(s_out)
        assert all(records_equal(a, b) for a, b in zip(s_in, s_out))
    assert [r.id for r in read_shard_file(tmp_path / "shard-09.jsonl")] == [r.id for r in ss.test]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["shards"][9] == {"file": "shard-09.jsonl", "role": "test", "count": 10,
                                     "positives": 0}
    assert manifest["seed"] == 8


def test_shard_filename():
    assert shard_filename(9) == "shard-09.jsonl"


def test_malformed_line_cites_location(tmp_path):
    ss = split_shards([random_record(i, make_rng(i)) for i in range(10)], seed=0)
    write_shards(ss, tmp_path)
    path = tmp_path / shard_filename(4)
    path.write_text(path.read_text() + "{not json\n")
    with pytest.raises(ShardFormatError, match=r"shard-04\.jsonl:2"):
        read_shards(tmp_path)


def test_missing_shard_file(tmp_path):
    write_shards(split_shards(fake_records(10), 0), tmp_path)
    (tmp_path / shard_filename(2)).unlink()
    with pytest.raises(ShardFormatError, match="shard-02"):
        read_shards(tmp_path)


# -- batching ----------------------------------------------------------------

def test_batches_drop_partial():
    recs = fake_records(130)
    out = batches(recs, 64, seed=0, epoch=0)
    assert [len(b) for b in out] == [64, 64]


def test_batches_deterministic_and_epoch_dependent():
    a = batch_indices(100, 10, seed=1, epoch=0)
    b = batch_indices(100, 10, seed=1, epoch=0)
    c = batch_indices(100, 10, seed=1, epoch=1)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


@pytest.mark.parametrize("n, size", [(130, 64), (100, 7), (5, 5)])
def test_batches_have_no_duplicates(n, size):
    used = np.concatenate(batch_indices(n, size, seed=3, epoch=2))
    assert used.size == (n // size) * size
    assert np.unique(used).size == used.size and used.max() < n


def test_batches_errors():
    with pytest.raises(ArgumentError):
        batch_indices(0, 4, 0, 0)
    with pytest.raises(ArgumentError):
        batch_indices(10, 0, 0, 0)


# -- csv input ---------------------------------------------------------------

def test_lightcurve_csv_roundtrip(tmp_path):
    lc = LightCurve(np.array([0.1, 0.2, 0.35]), np.array([1.0, 0.999, 1.0 + 1e-12]))
    write_lightcurve_csv(lc, tmp_path / "a.csv")
    back = read_lightcurve_csv(tmp_path / "a.csv")
    assert np.array_equal(back.time, lc.time) and np.array_equal(back.flux, lc.flux)


def test_lightcurve_csv_cleans_rows(tmp_path):
    (tmp_path / "a.csv").write_text("time,flux\n3,1.0\n1,nan\n2,0.5\n2,0.7\n0,1.1\n")
    lc = read_lightcurve_csv(tmp_path / "a.csv")
    np.testing.assert_array_equal(lc.time, [0, 2, 3])
    np.testing.assert_array_equal(lc.flux, [1.1, 0.5, 1.0])


def test_lightcurve_csv_missing_column(tmp_path):
    (tmp_path / "a.csv").write_text("time,brightness\n1,2\n")
    with pytest.raises(InputFormatError, match="missing column 'flux'"):
        read_lightcurve_csv(tmp_path / "a.csv")


def test_segmented_lightcurve(tmp_path):
    seg = tmp_path / "k1"
    seg.mkdir()
    write_lightcurve_csv(LightCurve(np.array([5.0, 6.0]), np.array([2.0, 3.0])), seg / "q2.csv")
    write_lightcurve_csv(LightCurve(np.array([1.0, 2.0]), np.array([4.0, 5.0])), seg / "q1.csv")
    lc = load_lightcurve(tmp_path, "k1")
    np.testing.assert_array_equal(lc.time, [1, 2, 5, 6])
    with pytest.raises(InputFormatError):
        load_lightcurve(tmp_path, "absent")


def test_tce_table_roundtrip(tmp_path):
    metas = [TceMeta(3.5, 1.25, 2.0, "PC", "a"), TceMeta(10.0, 0.5, 5.5, "UNK", "b")]
    write_tce_table(metas, tmp_path / "t.csv")
    assert read_tce_table(tmp_path / "t.csv") == metas


# -- synthetic generator -----------------------------------------------------

def test_synth_positive_count():
    kinds = synth_kinds(1000, 0.229, seed=0)
    assert kinds.count(PLANET) == 229
    assert kinds.count(NOISE) == 385 and kinds.count(EB) == 386


def test_synth_generate_labels(small_synth):
    assert sum(r.label for r in small_synth) == round(200 * 0.229)
    assert {r.label_raw for r in small_synth} == {"PC", "AFP", "NTP"}
    assert all(r.label == (r.label_raw == "PC") for r in small_synth)


def test_synth_deterministic():
    a, b = synth_generate(12, seed=3), synth_generate(12, seed=3)
    assert all(records_equal(x, y) for x, y in zip(a, b))
    c = synth_generate(12, seed=4)
    assert not all(records_equal(x, y) for x, y in zip(a, c))


@pytest.mark.parametrize("n, frac", [(9, 0.2), (100, 0.0), (100, 1.0)])
def test_synth_invalid_arguments(n, frac):
    with pytest.raises(ArgumentError):
        synth_generate(n, frac)


def _global_minima(n, sigma, seed):
    out = []
    for kind, lc, meta, _ in synth_curves(n, noise_sigma=sigma, seed=seed):
        out.append((kind, raw_views(flatten(lc, meta), meta)["global"].min()))
    return out


def test_noiseless_positive_below_every_pure_noise():
    minima = _global_minima(60, 0.0, seed=21)
    planets = [m for k, m in minima if k == PLANET]
    noise = [m for k, m in minima if k == NOISE]
    assert planets and noise
    assert max(planets) < min(noise)


def test_depth_band_classifier_separates():
    # planets dip 0.5-3 %, eclipsing binaries at least 8 %, pure noise ~0.3 %
    minima = _global_minima(200, 1e-3, seed=22)
    depth = np.array([1.0 - m for _, m in minima])
    truth = np.array([k == PLANET for k, _ in minima])
    pred = (depth > 0.004) & (depth < 0.04)
    assert np.mean(pred == truth) >= 0.95
