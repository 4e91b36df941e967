import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from posetransfer.data import (
    ImageBuffer,
    PairingPolicy,
    check_level,
    decode_image,
    encode_image,
    load_manifest,
    pair_records,
    sample_pair,
    save_image,
    to_unit_range,
    write_manifest,
)
from posetransfer.errors import ImageDecodeError, LevelError, ManifestError, ShapeError


def test_level_validation():
    assert check_level(256) == 256
    with pytest.raises(LevelError):
        check_level(100)


@pytest.mark.parametrize(
    "px", [np.zeros((4, 4)), np.zeros((4, 5, 3)), np.full((4, 4, 3), 1.5), np.full((4, 4, 3), np.nan)]
)
def test_image_buffer_validation(px):
    with pytest.raises(ShapeError):
        ImageBuffer(px)


def test_all_uint8_values_round_trip():
    v = np.arange(256, dtype=np.uint8).reshape(16, 16)
    rgb = np.stack([v, v[::-1], v.T], axis=-1)
    assert np.array_equal(encode_image(ImageBuffer(to_unit_range(rgb))), rgb)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1))
def test_encode_is_within_half_a_step(v):
    px = np.full((2, 2, 3), v, np.float32)
    assert abs(encode_image(px)[0, 0, 0] - (v + 1) * 127.5) <= 0.5 + 1e-4


@pytest.mark.parametrize("mode", ["RGB", "RGBA", "L", "P"])
def test_decode_accepts_8bit_modes(tmp_path, mode):
    Image.new("RGB", (64, 64), (255, 0, 128)).convert(mode).save(tmp_path / "x.png")
    img = decode_image(tmp_path / "x.png", 64)
    assert img.resolution == (64, 64) and img.pixels.dtype == np.float32


def test_decode_resizes_to_level(tmp_path):
    Image.new("RGB", (200, 300), (10, 20, 30)).save(tmp_path / "x.png")
    img = decode_image(tmp_path / "x.png", 128)
    assert img.resolution == (128, 128)
    np.testing.assert_allclose(img.pixels[0, 0], to_unit_range([10, 20, 30]), atol=1e-6)


def test_decode_errors(tmp_path):
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(ImageDecodeError):
        decode_image(tmp_path / "junk.png", 64)
    with pytest.raises(ImageDecodeError):
        decode_image(tmp_path / "missing.png", 64)
    Image.new("I;16", (64, 64)).save(tmp_path / "deep.png")
    with pytest.raises(ImageDecodeError, match="mode"):
        decode_image(tmp_path / "deep.png", 64)


def test_save_and_decode_round_trip(tmp_path):
    px = to_unit_range(np.random.default_rng(0).integers(0, 256, (64, 64, 3)))
    save_image(ImageBuffer(px), tmp_path / "o.png")
    np.testing.assert_array_equal(decode_image(tmp_path / "o.png", 64).pixels, px)


def test_manifest_pairs_and_epoch(toy_manifest):
    m = load_manifest(toy_manifest)
    assert sorted(m.subjects) == ["subject00", "subject01"]
    assert m.epoch_size == 2 * 3 * 2
    assert all(m.records[a].subject_id == m.records[b].subject_id and a != b for a, b in m.pairs())
    assert load_manifest(toy_manifest, PairingPolicy("with_identity")).epoch_size == 12 + 6


def test_each_epoch_visits_every_pair_once(toy_manifest):
    m = load_manifest(toy_manifest)
    seen = Counter(
        tuple(r.frame_id + r.subject_id for r in pair_records(m, seed=9, index=i)) for i in range(m.epoch_size)
    )
    assert len(seen) == m.epoch_size and set(seen.values()) == {1}
    with pytest.raises(IndexError):
        pair_records(m, 9, m.epoch_size)


def test_sample_pair_is_deterministic(toy_manifest):
    m = load_manifest(toy_manifest)
    a, b = sample_pair(m, 4, 2), sample_pair(m, 4, 2)
    assert a.subject_id == b.subject_id and a.target_frame == b.target_frame
    np.testing.assert_array_equal(a.target.pixels, b.target.pixels)
    assert a.target_keypoints.source_resolution == (64, 64)


def _write(tmp_path, lines):
    p = tmp_path / "m.jsonl"
    p.write_text("\n".join(lines) + "\n")
    return p


@pytest.fixture
def frames(tmp_path):
    for name in ("a", "b"):
        Image.new("RGB", (8, 8)).save(tmp_path / f"{name}.png")
        (tmp_path / f"{name}.json").write_text(json.dumps([[1, 1, 1]] * 18))
    return tmp_path


def _rec(subject, frame, name):
    return json.dumps({"subject_id": subject, "frame_id": frame, "image": f"{name}.png", "keypoints": f"{name}.json"})


@pytest.mark.parametrize(
    "lines, message",
    [
        (["{oops"], ":1: malformed JSON"),
        ([_rec("s", "0", "a"), '{"subject_id": "s"}'], ":2: missing"),
        ([_rec("s", "0", "a"), _rec("s", "0", "b")], "duplicate"),
        ([_rec("s", "0", "a"), _rec("s", "1", "zzz")], "does not exist"),
        ([_rec("s", "0", "a")], "single frame"),
        ([""], "no records"),
    ],
)
def test_manifest_errors(frames, lines, message):
    with pytest.raises(ManifestError, match=message):
        load_manifest(_write(frames, lines))


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path / "none.jsonl")


def test_write_manifest_round_trip(frames):
    recs = [json.loads(_rec("s", "0", "a")), json.loads(_rec("s", "1", "b"))]
    write_manifest(recs, frames / "w.jsonl")
    assert [r.frame_id for r in load_manifest(frames / "w.jsonl").records] == ["0", "1"]


def test_unknown_pairing_policy():
    with pytest.raises(ManifestError):
        PairingPolicy("random")
