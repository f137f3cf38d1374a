import json
import os.path

import numpy as np
import pytest

from earsep.errors import DatasetError
from earsep.scenes.dataset import (
    SPLITS,
    SceneGrid,
    build_dataset,
    draw_pairs,
    load_example,
    make_scene,
    manifest_digest,
    read_manifest,
    split_speakers,
)


class TestGrid:
    def test_conditions_cycle(self):
        grid = SceneGrid()
        rng = np.random.default_rng(0)
        conditions = [grid.conditions(_i, rng) for _i in range(21)]
        assert len(set(conditions)) == 21
        assert {_snr for (_t60, _snr) in conditions} == set(grid.snr)
        assert len(grid.snr) == 7
        assert conditions[0] == (0.0, -10.0) and conditions[1] == (0.3, -10.0)
        assert conditions[3] == (0.0, -5.0)

    def test_t60_range(self):
        grid = SceneGrid(t60_range=(0.2, 0.4))
        t60, snr = grid.conditions(1, np.random.default_rng(0))
        assert 0.2 <= t60 <= 0.4 and snr == -5.0

    def test_invalid(self):
        with pytest.raises(DatasetError):
            SceneGrid(t60=(-0.1,))
        with pytest.raises(DatasetError):
            SceneGrid(speech_distance=(0.5, 2.0))
        with pytest.raises(DatasetError):
            SceneGrid(train=-1)


class TestSpeakers:
    def test_unique_pairs(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DatasetError, match="unique speaker pairs"):
            draw_pairs(["a", "b"], 4, rng)
        pairs = draw_pairs(["a", "b"], 4, rng, unique=False)
        assert pairs == [("a", "b")] * 4
        pairs = draw_pairs(list("abcde"), 10, rng)
        assert len(set(pairs)) == 10

    def test_split_disjoint(self):
        grid = SceneGrid()
        speakers = [f"s{_i:02d}" for _i in range(16)]
        splits = split_speakers(speakers, grid, seed=0)
        assert sorted(sum(splits.values(), [])) == speakers
        for a in SPLITS:
            assert len(splits[a]) >= 2
            for b in SPLITS:
                if a != b:
                    assert not set(splits[a]) & set(splits[b])
        assert splits == split_speakers(speakers, grid, seed=0)

    def test_too_few_speakers(self):
        with pytest.raises(DatasetError, match="distinct speakers"):
            split_speakers(["a", "b", "c"], SceneGrid(), seed=0)


class TestBuild:
    def test_manifests(self, toy_dataset, toy_grid):
        assert set(toy_dataset) == set(SPLITS)
        records = {_s: read_manifest(toy_dataset[_s]) for _s in SPLITS}
        for split in SPLITS:
            assert len(records[split]) == toy_grid.count(split)
            assert [_r["index"] for _r in records[split]] == list(
                range(toy_grid.count(split))
            )
        speakers = {
            _s: {_v for _r in records[_s] for _v in _r["speakers"].values()}
            for _s in SPLITS
        }
        assert not speakers["train"] & speakers["val"]
        assert not speakers["train"] & speakers["test"]
        assert not speakers["val"] & speakers["test"]
        pairs = [frozenset(_r["speakers"].values()) for _r in records["train"]]
        assert len(set(pairs)) == len(pairs)

    def test_example(self, toy_dataset, toy_grid):
        record = read_manifest(toy_dataset["train"])[1]
        assert (record["t60"], record["snr_db"]) == (0.2, 0.0)
        example = load_example(record, sample_rate=16000)
        n = int(toy_grid.duration * 16000)
        assert example.mixture.samples.shape == (8, n)
        assert example.target_right.samples.shape == (1, n)
        assert np.abs(example.mixture.samples).max() <= 0.99 + 1e-6
        assert os.path.exists(os.path.join(record["base_dir"], record["sources"]["left"]["file"]))

    def test_reproducible(self, toy_corpus, toy_grid, toy_dataset, tmp_path):
        """Same seed, same bytes, regardless of the number of workers."""
        manifests = build_dataset(toy_corpus, toy_grid, str(tmp_path), seed=5, workers=2)
        for split in SPLITS:
            assert manifest_digest(manifests[split]) == manifest_digest(toy_dataset[split])
        a = load_example(read_manifest(manifests["val"])[0])
        b = load_example(read_manifest(toy_dataset["val"])[0])
        assert np.array_equal(a.mixture.samples, b.mixture.samples)

    def test_seed_changes_output(self, toy_corpus, toy_grid, toy_dataset, tmp_path):
        manifests = build_dataset(toy_corpus, toy_grid, str(tmp_path), seed=6)
        assert manifest_digest(manifests["train"]) != manifest_digest(toy_dataset["train"])

    def test_refuse_overwrite(self, toy_corpus, tmp_path):
        grid = SceneGrid(t60=(0.0,), snr=(5.0,), duration=0.5, train=1, val=0, test=0)
        build_dataset(toy_corpus, grid, str(tmp_path))
        with pytest.raises(DatasetError, match="overwrite"):
            build_dataset(toy_corpus, grid, str(tmp_path))
        manifests = build_dataset(toy_corpus, grid, str(tmp_path), overwrite=True)
        assert list(manifests) == ["train"]

    def test_make_scene_order_independent(self, toy_corpus, toy_grid):
        pair = tuple(toy_corpus.speakers[:2])
        a, used_a = make_scene(toy_corpus, toy_grid, pair, 0, 3, seed=1)
        make_scene(toy_corpus, toy_grid, pair, 0, 2, seed=1)
        b, used_b = make_scene(toy_corpus, toy_grid, pair, 0, 3, seed=1)
        assert used_a == used_b
        assert a.noise.azimuth == b.noise.azimuth
        assert abs(abs(a.noise.azimuth) - 60) >= toy_grid.noise_exclusion

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError):
            read_manifest(str(tmp_path / "nope.jsonl"))
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{\n")
        with pytest.raises(DatasetError, match="invalid JSON"):
            read_manifest(str(bad))

    def test_manifest_is_json(self, toy_dataset):
        with open(toy_dataset["test"]) as f:
            for line in f:
                record = json.loads(line)
                assert record["mixture"].startswith("test/")
