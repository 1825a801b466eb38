import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from synquad.dataset_builder import (
    ConfigError,
    GenerationError,
    build_dataset,
    coco_document,
    config_from_dict,
    list_backgrounds,
    load_coco,
    load_config,
    split_indices,
    split_sizes,
    write_coco,
)
from synquad.gait import GaitAmplitudes, gait_pose, procedural_gait_corpus
from synquad.pose_filter import FilterRanges, accept_many
from synquad.skeleton import KEYPOINT_NAMES, load_skeleton


def tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def config_for(pipeline_files, out, **over):
    cfg = load_config(pipeline_files / "gen.json")
    cfg.output_dir = str(out)
    for k, v in over.items():
        setattr(cfg, k, v)
    return cfg


@pytest.mark.parametrize("n,expect", [(8, (7, 1)), (1, (1, 0)), (100, (87, 13)), (16, (14, 2)), (2, (1, 1))])
def test_split_sizes(n, expect):
    assert split_sizes(n, (7, 1)) == expect


@given(st.integers(1, 5000), st.integers(1, 9), st.integers(1, 9))
def test_split_sizes_properties(n, a, b):
    tr, va = split_sizes(n, (a, b))
    assert tr + va == n and tr >= 1 and va >= 0
    assert tr == max(1, n * a // (a + b))


def test_split_indices_partition():
    tr, va = split_indices(100, (7, 1), 3)
    assert sorted(tr + va) == list(range(100)) and len(va) == 13
    assert (tr, va) == split_indices(100, (7, 1), 3)
    assert va != split_indices(100, (7, 1), 4)[1]


def test_gait_corpus_bounds_and_determinism():
    a = procedural_gait_corpus(600, seed=5)
    assert a.shape == (600, 36)
    assert np.all(np.abs(a) <= np.pi / 2)
    assert np.abs(a).max() <= GaitAmplitudes().bound() + 1e-12
    assert np.array_equal(a, procedural_gait_corpus(600, seed=5))


def test_gait_front_knees_opposite():
    sk = load_skeleton()
    names = [sk.bones[j].name for j in sk.prior_joints]
    fl, fr = 3 * names.index("lower_fl") + 1, 3 * names.index("lower_fr") + 1
    for phase in (0.0, np.pi):
        pose = gait_pose(phase)
        assert pose[fl] * pose[fr] < 0
    assert np.sign(gait_pose(0.0)[fl]) == -np.sign(gait_pose(np.pi)[fl])


def test_config_validation(pipeline_files, tmp_path):
    for over in ({"n_images": 0}, {"split_ratio": (7, 0)}, {"species": []}):
        cfg = config_for(pipeline_files, tmp_path, **over)
        with pytest.raises(ConfigError):
            cfg.validate()


def test_missing_prior_file(pipeline_files, tmp_path):
    doc = json.loads((pipeline_files / "gen.json").read_text())
    doc["prior"] = "nope.npz"
    cfg = config_from_dict(doc, base_dir=str(pipeline_files))
    cfg.output_dir = str(tmp_path / "o")
    with pytest.raises(GenerationError, match="nope.npz"):
        build_dataset(cfg)


def test_background_manifest(tmp_path):
    (tmp_path / "manifest.txt").write_text("a.png\n# comment\nb.png\n")
    (tmp_path / "a.png").write_bytes(b"")
    with pytest.raises(GenerationError, match="b.png"):
        list_backgrounds(tmp_path)


@pytest.fixture(scope="module")
def built(pipeline_files, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "run"
    cfg = config_for(pipeline_files, out)
    return build_dataset(cfg), out


def test_layout_and_counts(built):
    manifest, out = built
    assert manifest["counts"] == {"train": 7, "val": 1}
    assert "floor" in manifest["split_rule"]
    assert len(list((out / "images").glob("*.png"))) == 8
    assert len(list((out / "masks").glob("*_mask.png"))) == 8
    for f in ("annotations/train.json", "annotations/val.json", "manifest.json"):
        assert (out / f).is_file()
    assert not list(out.rglob("*.tmp"))
    assert json.loads((out / "manifest.json").read_text()) == manifest


def test_records(built, pipeline_files):
    manifest, _ = built
    ranges = FilterRanges.load(pipeline_files / "filter.json")
    poses = np.array([r["pose"] for r in manifest["records"]])
    assert accept_many(ranges, poses).all()
    for r in manifest["records"]:
        assert len(r["keypoints"]) == 51
        x, y, w, h = r["bbox"]
        kp = np.asarray(r["keypoints"]).reshape(17, 3)
        assert np.all(kp[:, 0] >= x - 1e-3) and np.all(kp[:, 0] <= x + w + 1e-3)
        assert set(kp[:, 2]) <= {1.0, 2.0}
        assert r["provenance"]["filter_attempts"] >= 1


def test_generation_deterministic_and_parallel(built, pipeline_files, tmp_path):
    _, out = built
    ref = tree_digest(out)
    build_dataset(config_for(pipeline_files, tmp_path / "again"))
    assert tree_digest(tmp_path / "again") == ref
    build_dataset(config_for(pipeline_files, tmp_path / "par"), workers=3)
    assert tree_digest(tmp_path / "par") == ref


def test_seed_changes_output(built, pipeline_files, tmp_path):
    build_dataset(config_for(pipeline_files, tmp_path / "s", master_seed=1))
    assert tree_digest(tmp_path / "s") != tree_digest(built[1])


def test_coco_round_trip_and_reference_parser(built):
    pytest.importorskip("pycocotools")
    from pycocotools.coco import COCO

    manifest, out = built
    by_id = {r["image_id"]: r for r in manifest["records"]}
    for split in ("train", "val"):
        path = out / "annotations" / f"{split}.json"
        coco = COCO(str(path))
        assert sorted(coco.getImgIds()) == manifest["splits"][split]
        for a in coco.loadAnns(coco.getAnnIds()):
            assert len(a["keypoints"]) == 51
            assert a["num_keypoints"] == sum(1 for v in a["keypoints"][2::3] if v > 0)
        assert coco.loadCats(coco.getCatIds())[0]["keypoints"] == list(KEYPOINT_NAMES)
        for rec in load_coco(path):
            src = by_id[rec["image_id"]]
            assert rec == {k: src[k] for k in rec}


def test_occluded_keypoint_counts_as_labeled(tmp_path):
    kp = np.column_stack([np.arange(17.0), np.arange(17.0), np.full(17, 2.0)])
    kp[5, 2] = 1
    rec = {"image_id": 1, "file_name": "a.png", "width": 4, "height": 4, "category_id": 1,
           "keypoints": kp.reshape(-1).tolist(), "bbox": [0, 0, 16, 16]}
    doc = coco_document([rec], [])
    assert doc["annotations"][0]["num_keypoints"] == 17


def test_empty_val_split(pipeline_files, tmp_path):
    manifest = build_dataset(config_for(pipeline_files, tmp_path / "one", n_images=1))
    assert manifest["counts"] == {"train": 1, "val": 0}
    doc = json.loads((tmp_path / "one" / "annotations" / "val.json").read_text())
    assert doc["annotations"] == [] and doc["images"] == []
    write_coco(manifest, tmp_path / "again")
    assert (tmp_path / "again" / "annotations" / "val.json").is_file()


def test_multi_species_categories(pipeline_files, tmp_path):
    doc = json.loads((pipeline_files / "gen.json").read_text())
    doc["species"] = [
        {"name": "zebra", "prior": doc.pop("prior"), "filter": doc.pop("filter")},
        {"name": "horse", "prior": "prior.npz", "filter": "filter.json", "category_id": 7},
    ]
    doc.pop("category")
    doc["n_images"] = 4
    cfg = config_from_dict(doc, base_dir=str(pipeline_files))
    cfg.output_dir = str(tmp_path / "multi")
    m = build_dataset(cfg)
    assert [c["id"] for c in m["categories"]] == [1, 7]
    assert [r["category_id"] for r in m["records"]] == [1, 7, 1, 7]
