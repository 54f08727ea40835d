import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tonematch import dataset as ds
from tonematch.dataset import (AugmentSpec, DatasetError, TrainingPair, augment, build_dataset, dataset_manifest,
                               load_pairs, rank_scene, read_csv_rows, read_dataset_cfg, resize_bilinear)
from tonematch.hdrio import write_hdr
from tonematch.synthetic import scene, scene_luminance
from tonematch.tmo import TmoId

FAST_OPS = ["gamma", "log", "reinhard", "drago"]


def test_rank_single_operator_is_target():
    rec = rank_scene(scene_luminance(0, 40, 40), ["drago"], "s")
    assert rec.target == TmoId.DRAGO
    assert [r[-1] for r in rec.csv_rows()] == [1]


def test_rank_picks_argmax():
    rec = rank_scene(scene_luminance(1, 40, 48), FAST_OPS, "s")
    best = max(e.report.score for e in rec.entries)
    assert rec.target_entry().report.score == best
    assert sum(r[-1] for r in rec.csv_rows()) == 1


def test_constant_output_never_wins(monkeypatch):
    real = ds.apply_tmo

    def fake(op, params, lum):
        if op == TmoId.GAMMA:
            return np.full(np.shape(lum), 0.5, dtype=np.float32)
        return real(op, params, lum)

    monkeypatch.setattr(ds, "apply_tmo", fake)
    rec = rank_scene(scene_luminance(2, 40, 40), ["gamma", "reinhard"], "s")
    assert rec.target == TmoId.REINHARD


def test_operator_failure_recorded(monkeypatch):
    real = ds.apply_tmo

    def fake(op, params, lum):
        if op == TmoId.LOG:
            raise ArithmeticError("boom")
        return real(op, params, lum)

    monkeypatch.setattr(ds, "apply_tmo", fake)
    rec = rank_scene(scene_luminance(2, 40, 40), ["log", "reinhard"], "s")
    failed = [e for e in rec.entries if not e.ok]
    assert [e.tmo for e in failed] == [TmoId.LOG] and "boom" in failed[0].error
    assert rec.csv_rows()[0][2:5] == ["", "", ""]
    monkeypatch.setattr(ds, "apply_tmo", lambda *a: (_ for _ in ()).throw(ArithmeticError("x")))
    with pytest.raises(DatasetError, match="every operator failed"):
        rank_scene(scene_luminance(2, 40, 40), ["log"], "s")


def test_tie_goes_to_declaration_order(monkeypatch):
    real = ds.apply_tmo
    monkeypatch.setattr(ds, "apply_tmo", lambda op, p, lum: real(TmoId.DRAGO, None, lum))
    rec = rank_scene(scene_luminance(3, 40, 40), ["reinhard", "drago", "log"], "s")
    assert rec.target == TmoId.LOG


def test_bilinear_checker_upscale():
    checker = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = resize_bilinear(checker, (4, 4))
    # half-pixel centres: sample positions -0.25, 0.25, 0.75, 1.25 clamp to weights 0, .25, .75, 1
    t = np.array([0.0, 0.25, 0.75, 1.0])
    expected = (1 - t)[:, None] * t[None, :] + t[:, None] * (1 - t)[None, :]
    np.testing.assert_allclose(out, expected, atol=1e-7)


def test_resize_identity_and_constant(rng):
    img = rng.uniform(0, 1, (7, 9))
    np.testing.assert_allclose(resize_bilinear(img, (7, 9)), img, atol=1e-7)
    np.testing.assert_allclose(resize_bilinear(np.full((5, 6), 0.3), (11, 4)), 0.3, atol=1e-7)


def test_pure_resize_spec(rng):
    x = rng.uniform(0, 1, (10, 12)).astype(np.float32)
    spec = AugmentSpec((20, 24), (20, 24), flip_prob=0.0)
    out = augment(TrainingPair(x, x.copy()), spec, np.random.default_rng(0))
    np.testing.assert_array_equal(out.x, resize_bilinear(x, (20, 24)))


def test_forced_flip_twice_is_identity(rng):
    x = rng.uniform(0, 1, (8, 10)).astype(np.float32)
    spec = AugmentSpec((8, 10), (8, 10), flip_prob=1.0)
    once = augment(TrainingPair(x, x), spec, np.random.default_rng(0))
    twice = augment(once, spec, np.random.default_rng(1))
    np.testing.assert_array_equal(once.x, x[:, ::-1])
    np.testing.assert_allclose(twice.x, x, atol=1e-7)


@given(st.integers(0, 2**32 - 1), st.integers(8, 24), st.integers(8, 24), st.floats(0, 1))
def test_augment_keeps_alignment(seed, h, w, p):
    # a unique marker pixel must land at the same place in x and y
    x = np.zeros((h, w), np.float32)
    y = np.zeros((h, w), np.float32)
    r, c = seed % h, (seed // h) % w
    x[r, c], y[r, c] = 1.0, 2.0
    spec = AugmentSpec((h, w), (h // 2, w // 2), p)
    out = augment(TrainingPair(x, y), spec, np.random.default_rng(seed))
    np.testing.assert_array_equal(out.x * 2.0, out.y)


def test_augment_deterministic(rng):
    x = rng.uniform(0, 1, (30, 40)).astype(np.float32)
    spec = AugmentSpec((35, 55), (16, 16))
    a = augment(TrainingPair(x, x), spec, np.random.default_rng(5))
    b = augment(TrainingPair(x, x), spec, np.random.default_rng(5))
    np.testing.assert_array_equal(a.x, b.x)


def test_augment_spec_validation():
    with pytest.raises(ValueError, match="does not fit"):
        AugmentSpec((10, 10), (11, 5))
    with pytest.raises(ValueError, match="flip_prob"):
        AugmentSpec((10, 10), (5, 5), 1.5)
    assert AugmentSpec.for_scale("single").resize_to == (700, 1100)
    assert AugmentSpec.for_scale("multi", 4).crop_to == (256, 256)


def test_manifest_order_and_ranges(scene_dir):
    entries, diags = dataset_manifest(scene_dir)
    assert diags == []
    assert [e.scene for e in entries] == ["scene0", "scene1", "scene2"]
    for e in entries:
        assert (e.height, e.width) == (48, 64) and 0 < e.lum_min < e.lum_max and len(e.sha256) == 64


def test_manifest_empty_and_corrupt(tmp_path):
    assert dataset_manifest(tmp_path) == ([], [])
    (tmp_path / "bad.hdr").write_bytes(b"not radiance")
    write_hdr(scene(0, 32, 32), tmp_path / "good.hdr")
    entries, diags = dataset_manifest(tmp_path)
    assert [e.scene for e in entries] == ["good"]
    assert len(diags) == 1 and "bad.hdr" in diags[0]
    with pytest.raises(DatasetError):
        dataset_manifest(tmp_path / "missing")


def test_build_dataset_cache(scene_dir, tmp_path):
    cache = tmp_path / "cache"
    first = build_dataset(scene_dir, cache, FAST_OPS, seed=3, scale_div=4)
    assert (first["scenes"], first["ranked"], first["reused"]) == (3, 3, 0)
    files = {p.name: p.read_bytes() for p in cache.iterdir()}
    assert {"manifest.csv", "dataset.cfg", "scene0.target.pfm", "scene2.rank.csv"} <= set(files)
    second = build_dataset(scene_dir, cache, FAST_OPS, seed=3, scale_div=4)
    assert (second["ranked"], second["reused"]) == (0, 3)
    assert files == {p.name: p.read_bytes() for p in cache.iterdir()}
    cfg = read_dataset_cfg(cache)
    assert cfg["single_crop"] == 128 and cfg["multi_resize_w"] == 550
    rows = read_csv_rows(cache / "scene1.rank.csv")
    assert len(rows) == len(FAST_OPS) and sum(int(r["is_target"]) for r in rows) == 1
    assert (cache / "manifest.csv").read_text().startswith("# seed=3\n")
    pairs = load_pairs(cache)
    assert [p.scene for p in pairs] == ["scene0", "scene1", "scene2"]
    assert all(p.x.shape == (48, 64) and 0 <= p.y.min() and p.y.max() <= 1 for p in pairs)
    # a changed operator set re-ranks everything
    third = build_dataset(scene_dir, cache, FAST_OPS[:2], seed=3)
    assert third["ranked"] == 3


def test_build_dataset_parallel_matches_serial(scene_dir, tmp_path):
    build_dataset(scene_dir, tmp_path / "a", FAST_OPS, jobs=1)
    build_dataset(scene_dir, tmp_path / "b", FAST_OPS, jobs=2)
    for name in ("manifest.csv", "scene0.rank.csv", "scene1.target.pfm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_build_dataset_rehashes_changed_scene(tmp_path):
    src = tmp_path / "in"
    src.mkdir()
    write_hdr(scene(0, 32, 32), src / "a.hdr")
    write_hdr(scene(1, 32, 32), src / "b.hdr")
    build_dataset(src, tmp_path / "c", FAST_OPS)
    write_hdr(scene(5, 32, 32), src / "b.hdr")
    summary = build_dataset(src, tmp_path / "c", FAST_OPS)
    assert (summary["ranked"], summary["reused"]) == (1, 1)
    with open(tmp_path / "c" / "manifest.csv") as f:
        assert len([r for r in csv.reader(ln for ln in f if not ln.startswith("#"))]) == 3


def test_load_pairs_without_cache(tmp_path):
    with pytest.raises(DatasetError, match="build-dataset"):
        load_pairs(tmp_path)
