import json
import os
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from posemon.core import (Camera, DatasetError, FrameSample, Mesh, load_dataset, read_mask, read_pgm,
                          save_dataset, split_dataset, validate_sample, write_pgm)
from posemon.synth import CorruptionSpec, SceneConfig, generate_sequences


def _files(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for n in names:
            p = os.path.join(dirpath, n)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


def test_pgm_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, size=(7, 5), dtype=np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n5 7\n255\n")


def test_mask_threshold(tmp_path):
    write_pgm(tmp_path / "m.pgm", np.array([[0, 127, 128, 255]], dtype=np.uint8))
    assert read_mask(tmp_path / "m.pgm").tolist() == [[False, False, True, True]]


def test_empty_file_gives_empty_dataset(tmp_path):
    (tmp_path / "dataset.jsonl").write_text("")
    assert load_dataset(tmp_path) == []


def test_save_empty_writes_empty_file(tmp_path):
    save_dataset([], tmp_path / "d.jsonl")
    assert (tmp_path / "d.jsonl").read_text() == ""


def test_roundtrip_one_record_byte_identical(tmp_path, clean_frames):
    save_dataset(clean_frames[:1], tmp_path / "a" / "dataset.jsonl")
    loaded = load_dataset(tmp_path / "a")
    assert loaded == clean_frames[:1]
    save_dataset(loaded, tmp_path / "b" / "dataset.jsonl")
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_roundtrip_ten_samples(tmp_path, template):
    samples = generate_sequences(template, SceneConfig(clutter_density=0.3), 2, 5, CorruptionSpec(), seed=3)
    save_dataset(samples, tmp_path / "dataset.jsonl")
    assert load_dataset(tmp_path / "dataset.jsonl") == samples


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.floats(0.0, 0.5))
def test_roundtrip_property(tmp_path_factory, seed, eps):
    from posemon.synth import default_template

    samples = generate_sequences(default_template(), SceneConfig(width=32, height=32), 1, 2,
                                 CorruptionSpec(eps, eps, eps / 10), seed=seed)
    d = tmp_path_factory.mktemp("rt")
    save_dataset(samples, d / "dataset.jsonl")
    assert load_dataset(d) == samples


def test_unwritable_path_raises(tmp_path, clean_frames):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        save_dataset(clean_frames[:1], blocker / "sub" / "dataset.jsonl")


def test_parse_error_names_line(tmp_path, clean_frames):
    save_dataset(clean_frames[:2], tmp_path / "dataset.jsonl")
    lines = (tmp_path / "dataset.jsonl").read_text().splitlines()
    (tmp_path / "dataset.jsonl").write_text(lines[0] + "\n{not json\n")
    with pytest.raises(DatasetError, match=r":2:"):
        load_dataset(tmp_path)


def test_face_index_equal_to_v_names_faces(tmp_path, clean_frames):
    save_dataset(clean_frames[:1], tmp_path / "dataset.jsonl")
    rec = json.loads((tmp_path / "dataset.jsonl").read_text())
    rec["faces"][0][0] = len(rec["vertices"])
    (tmp_path / "dataset.jsonl").write_text(json.dumps(rec) + "\n")
    with pytest.raises(DatasetError, match="faces"):
        load_dataset(tmp_path)


def test_missing_referenced_file(tmp_path, clean_frames):
    save_dataset(clean_frames[:1], tmp_path / "dataset.jsonl")
    os.remove(tmp_path / "images" / f"{clean_frames[0].frame_id}.pgm")
    with pytest.raises(DatasetError, match="not found"):
        load_dataset(tmp_path)


def test_missing_dataset_path(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope.jsonl")


def test_validate_valid_sample(clean_frames):
    assert validate_sample(clean_frames[0]) == []


def test_validate_zero_scale(clean_frames):
    s = clean_frames[0]
    bad = replace(s, estimate=replace(s.estimate, camera=Camera(0.0, 0.0, 0.0)))
    assert validate_sample(bad) == ["camera.scale must be > 0"]


def test_validate_mismatched_mask_size(clean_frames):
    s = clean_frames[0]
    bad = replace(s, gt_mask=np.zeros((10, 12), dtype=bool))
    v = validate_sample(bad)
    assert len(v) == 1 and "12x10" in v[0] and "128x128" in v[0]


def test_validate_detects_inconsistent_joints(clean_frames):
    s = clean_frames[0]
    joints = s.estimate.joints.copy()
    joints[3] += 1e-6
    bad = replace(s, estimate=replace(s.estimate, joints=joints))
    assert validate_sample(bad) == ["joints inconsistent with mesh via the joint regressor"]


def test_validate_degenerate_face(clean_frames):
    s = clean_frames[0]
    faces = s.estimate.mesh.faces.copy()
    faces[0] = [1, 1, 2]
    bad = replace(s, estimate=replace(s.estimate, mesh=Mesh(s.estimate.mesh.vertices, faces)))
    assert any("degenerate" in v for v in validate_sample(bad))


def test_validate_pure(clean_frames):
    s = clean_frames[1]
    assert validate_sample(s) == validate_sample(s)


def test_split_sizes():
    tr, va, te = split_dataset(list(range(10)), 0.5, 0.1)
    assert (len(tr), len(va), len(te)) == (5, 1, 4)


def test_split_empty():
    assert split_dataset([], 0.5, 0.1) == ([], [], [])


def test_split_invalid():
    with pytest.raises(ValueError):
        split_dataset(list(range(4)), 1.0, 0.5)
    with pytest.raises(ValueError):
        split_dataset(list(range(4)), -0.1, 0.1)


@given(n=st.integers(0, 300), a=st.floats(0, 1), b=st.floats(0, 1))
def test_split_partitions(n, a, b):
    if a + b > 1:
        return
    items = list(range(n))
    tr, va, te = split_dataset(items, a, b)
    assert tr + va + te == items
    assert len(tr) == int(np.floor(a * n)) and len(va) == int(np.floor(b * n))


def test_frame_sample_is_immutable(clean_frames):
    with pytest.raises(ValueError):
        clean_frames[0].image[0, 0] = 1
    assert isinstance(clean_frames[0], FrameSample)
