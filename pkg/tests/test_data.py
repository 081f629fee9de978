import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from asgan.data import (ATTRIBUTES, AttributeLabel, ManifestError, TaskConfig, Triplet,
                        attribute_mask, augment_flip, completion_box, grayscale,
                        load_manifest, load_triplet, resize_normalize, synth_triplet,
                        synthetic_dataset, synthetic_face_seed, task_transform,
                        write_dataset)


def _in_range(*imgs):
    return all(img.min() >= -1.0 and img.max() <= 1.0 for img in imgs)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), label=st.integers(0, 2))
def test_synthetic_triplets_in_range_and_masked(seed, label):
    t = synth_triplet(seed, label, 64)
    assert t.x1.shape == (64, 64, 3) and t.x1.dtype == np.float32
    assert _in_range(t.x1, t.x2, t.y)
    changed = np.any(t.x2 != t.x1, axis=2)
    mask = attribute_mask(seed, label, 64)
    assert changed.any()
    assert not (changed & ~mask).any()


def test_x1_independent_of_label():
    a, b = synth_triplet(5, "glasses"), synth_triplet(5, "bowtie")
    assert np.array_equal(a.x1, b.x1)
    assert not np.array_equal(a.x2, b.x2)


def test_synthetic_is_deterministic():
    a, b = synthetic_dataset(4, 64, seed=3), synthetic_dataset(4, 64, seed=3)
    assert a == b
    assert [t.label.index for t in a] == [0, 1, 2, 0]


def test_synthetic_faces_repeat_across_labels():
    ts = synthetic_dataset(6, 64, seed=2)
    assert np.array_equal(ts[0].x1, ts[2].x1) and not np.array_equal(ts[0].x1, ts[3].x1)
    assert not np.array_equal(ts[0].x2, ts[1].x2)
    assert np.array_equal(ts[4].x2, synth_triplet(synthetic_face_seed(4, 2), 1).x2)


def test_sketch_is_mostly_white():
    ts = synthetic_dataset(30, 64, seed=0)
    white = [np.mean(t.y > 0.9) for t in ts]
    assert min(white) > 0.6


def test_too_small_resolution_rejected():
    with pytest.raises(ValueError):
        synth_triplet(0, 0, 16)


def test_attribute_label_parse():
    assert AttributeLabel.parse("beard").index == 1
    assert AttributeLabel.parse(2).name == "bowtie"
    assert AttributeLabel.parse("0") == AttributeLabel(0)
    assert AttributeLabel(1).as_one_hot.tolist() == [0.0, 1.0, 0.0]
    with pytest.raises(ValueError, match="glasses"):
        AttributeLabel.parse("hat")
    with pytest.raises(ValueError):
        AttributeLabel(3)


def test_triplet_shape_check():
    a = np.zeros((8, 8, 3), np.float32)
    with pytest.raises(ValueError):
        Triplet(a, a, np.zeros((4, 4, 3), np.float32), AttributeLabel(0))


def test_resize_normalize_endpoints():
    raw = np.zeros((10, 10, 3), np.uint8)
    raw[:, 5:] = 255
    out = resize_normalize(raw, 10)
    assert out.min() == -1.0 and out.max() == 1.0
    assert resize_normalize(raw, 16).shape == (16, 16, 3)


def test_resize_normalize_rejects_garbage():
    with pytest.raises(OSError):
        resize_normalize(b"not a png", 8)


def test_dataset_round_trip(tmp_path):
    ts = synthetic_dataset(6, 32, seed=1)
    splits = ["train", "test"] * 3
    write_dataset(ts, tmp_path, splits)
    tr = load_manifest(tmp_path, "train")
    te = load_manifest(tmp_path, "test")
    assert len(tr) == 3 and len(te) == 3
    assert len(load_manifest(tmp_path, None)) == 6
    back = load_triplet(tr, tr.entries[0], 32)
    # 8-bit quantisation
    assert np.abs(back.x2 - ts[0].x2).max() <= 1.0 / 127.5 + 1e-6
    assert back.label == ts[0].label


def test_manifest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path)
    ts = synthetic_dataset(2, 32)
    write_dataset(ts, tmp_path, ["train", "train"])
    (tmp_path / "images" / f"{ts[1].id}_y.png").unlink()
    with pytest.raises(FileNotFoundError, match=ts[1].id):
        load_manifest(tmp_path)
    lines = (tmp_path / "manifest.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    (tmp_path / "manifest.jsonl").write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(tmp_path)
    (tmp_path / "manifest.jsonl").write_text("{broken\n")
    with pytest.raises(ManifestError, match=":1:"):
        load_manifest(tmp_path)


def test_flip_is_involution():
    t = synth_triplet(2, 0)
    assert augment_flip(augment_flip(t, True), True) == t
    assert augment_flip(t, False) is t


def test_task_transforms():
    t = synth_triplet(4, 1)
    inp, attr, out = task_transform(t, TaskConfig("attributed_sketch"))
    assert inp is t.x1 and attr is t.x2 and out is t.y

    inp, attr, out = task_transform(t, TaskConfig("colorization"))
    assert np.array_equal(inp[..., 0], inp[..., 2])
    assert np.allclose(inp, grayscale(t.x1))
    assert out is t.x2

    inp, _, out = task_transform(t, TaskConfig("completion"), rng_seed=7)
    start, side = completion_box(64, 0.25)
    assert (start, side) == (24, 16)
    changed = np.any(inp != t.x1, axis=2)
    box = np.zeros_like(changed)
    box[start:start + side, start:start + side] = True
    assert not (changed & ~box).any() and changed[box].mean() > 0.9
    assert _in_range(inp) and out is t.x2
    again, _, _ = task_transform(t, TaskConfig("completion"), rng_seed=7)
    assert np.array_equal(inp, again)


def test_task_config_validation():
    with pytest.raises(ValueError):
        TaskConfig("inpainting")
    with pytest.raises(ValueError):
        TaskConfig("completion", mask_fraction=1.5)


def test_vocabulary():
    assert ATTRIBUTES == ("glasses", "beard", "bowtie")


def test_png_written_is_rgb(tmp_path):
    write_dataset(synthetic_dataset(1, 32), tmp_path, ["test"])
    img = Image.open(next((tmp_path / "images").iterdir()))
    assert img.mode == "RGB" and img.size == (32, 32)
