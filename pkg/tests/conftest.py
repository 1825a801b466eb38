import numpy as np
import pytest

from synquad.gait import procedural_gait_corpus
from synquad.pose_prior import Dense, PriorModel, TrainConfig, train_prior
from synquad.skeleton import load_skeleton

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def skeleton():
    return load_skeleton()


@pytest.fixture(scope="session")
def gait_corpus():
    return procedural_gait_corpus(600, seed=1)


@pytest.fixture(scope="session")
def trained_model(gait_corpus):
    """Prior trained with the default hyperparameters on the gait corpus."""
    return train_prior(gait_corpus, TrainConfig(rng_seed=3))


def linear_model(decoder_w, decoder_b=None, latent_dim=16, input_dim=36):
    """Model with no hidden layers: decode(z) = z @ W + b; encoder heads are zero."""
    w = np.asarray(decoder_w, float)
    b = np.zeros(input_dim) if decoder_b is None else np.asarray(decoder_b, float)
    zeros = Dense(np.zeros((input_dim, latent_dim)), np.zeros(latent_dim))
    lv = Dense(np.zeros((input_dim, latent_dim)), np.zeros(latent_dim))
    return PriorModel([], zeros, lv, [Dense(w, b)])


def standard_normal_decoder():
    """Every output component is one latent coordinate, hence exactly N(0, 1) under the prior."""
    w = np.zeros((16, 36))
    for j in range(36):
        w[j % 16, j] = 1.0
    return linear_model(w)


@pytest.fixture
def identity_decoder():
    return standard_normal_decoder()


def pck_fixture():
    """Five images with hand-counted PCK@0.05 outcomes.

    1: bbox 200x100 (radius 10): kp0 off by exactly 10.0 (6, 8) -> correct,
       kp1 off by 10.01 -> wrong, rest exact. 16/17.
    2: bbox 100x200 (radius 10): kp3 unlabeled (v=0, prediction far off),
       kp4 occluded (v=1) off by 3 -> correct, kp5 off by 11 -> wrong. 15/16.
    3: bbox 40x40 (radius 2): everything off by (1, 1) -> 17/17.
    4: bbox 0x0 -> skipped.
    5: bbox 300x60, no prediction -> 0/17.
    Totals 48 correct of 67 evaluated.
    """
    from synquad.skeleton import KEYPOINT_NAMES

    base = np.stack([50.0 + 5 * np.arange(17), 40.0 + 3 * np.arange(17)], axis=1)
    bboxes = {1: [10, 10, 200, 100], 2: [5, 5, 100, 200], 3: [0, 0, 40, 40], 4: [3, 3, 0, 0], 5: [0, 0, 300, 60]}
    vis = {i: np.full(17, 2.0) for i in bboxes}
    vis[2][3] = 0
    vis[2][4] = 1
    anns, images = [], []
    for i, bb in bboxes.items():
        kp = np.column_stack([base, vis[i]])
        anns.append({"id": i, "image_id": i, "category_id": 1, "bbox": bb, "keypoints": kp.reshape(-1).tolist(),
                     "num_keypoints": int((vis[i] > 0).sum()), "iscrowd": 0, "area": bb[2] * bb[3]})
        images.append({"id": i, "file_name": f"{i}.png", "width": 400, "height": 400})
    gt = {"images": images, "annotations": anns,
          "categories": [{"id": 1, "name": "zebra", "keypoints": list(KEYPOINT_NAMES), "skeleton": []}]}
    preds = {}
    p = base.copy()
    p[0] += [6, 8]
    p[1, 0] += 10.01
    preds[1] = p
    p = base.copy()
    p[3] += 50
    p[4, 1] += 3
    p[5, 0] -= 11
    preds[2] = p
    preds[3] = base + 1.0
    preds[4] = base + 100.0
    pred_doc = [{"image_id": i, "keypoints": np.column_stack([q, np.ones(17)]).reshape(-1).tolist()} for i, q in preds.items()]
    correct = [3] * 17
    evaluated = [4] * 17
    correct[1] = 2
    correct[3], evaluated[3] = 2, 3
    correct[5] = 2
    return gt, pred_doc, {"correct": correct, "evaluated": evaluated, "total_correct": 48, "total_evaluated": 67}


@pytest.fixture(scope="session")
def pipeline_files(tmp_path_factory, trained_model):
    """Prior, filter, backgrounds and a generation config JSON in one directory."""
    import json

    from synquad.dataset_builder import procedural_backgrounds
    from synquad.pose_filter import calibrate_filter
    from synquad.pose_prior import save_model

    root = tmp_path_factory.mktemp("pipeline")
    save_model(trained_model, root / "prior.npz")
    calibrate_filter(trained_model, 10_000, 0.05, rng_seed=0).save(root / "filter.json")
    procedural_backgrounds(root / "backgrounds", 6, (320, 320), seed=0)
    cfg = {
        "n_images": 8,
        "prior": "prior.npz",
        "filter": "filter.json",
        "category": "zebra",
        "background_dir": "backgrounds",
        "output_dir": "out",
        "render": {"stripes": True},
    }
    (root / "gen.json").write_text(json.dumps(cfg))
    return root
