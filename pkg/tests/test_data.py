import struct
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from seuseg.data import (
    VOCAB,
    Dataset,
    caption_for,
    decode_pgm,
    decode_tensors,
    detokenize,
    dice_score,
    encode_pgm,
    encode_tensors,
    load_dataset,
    miou,
    rasterize,
    read_pgm,
    save_dataset,
    synth_generate,
    tokenize,
    write_pgm,
)
from seuseg.data.synth import QUADRANTS, DatasetManifest, default_splits
from seuseg.errors import ConfigurationError, DataError, DimensionError, FormatError


@pytest.fixture(scope="module")
def small_set():
    return synth_generate(seed=5, count=24, size=32)


# ---------------------------------------------------------------- vocabulary


def test_tokenize_pads_with_zero():
    ids = tokenize("segment the disc", 6)
    assert list(ids) == [VOCAB.id("segment"), VOCAB.id("the"), VOCAB.id("disc"), 0, 0, 0]


def test_empty_caption_is_all_padding():
    np.testing.assert_array_equal(tokenize("", 5), 0)


def test_tokenize_roundtrip_every_caption_class():
    for shape in ("disc", "square", "triangle"):
        for vert, horiz in QUADRANTS:
            cap = f"segment the {shape} in the {vert} {horiz}"
            assert detokenize(tokenize(cap, 12)) == cap


def test_unknown_word_is_named():
    with pytest.raises(DataError, match="hexagon"):
        tokenize("segment the hexagon", 12)


def test_vocab_is_bijective():
    ids = [VOCAB.id(w) for w in VOCAB.words]
    assert sorted(ids) == list(range(1, VOCAB.size))
    assert all(VOCAB.word(VOCAB.id(w)) == w for w in VOCAB.words)


# ---------------------------------------------------------------- generator


def test_generation_is_deterministic(small_set):
    again, manifest = synth_generate(seed=5, count=24, size=32)
    for a, b in zip(small_set[0], again):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.mask, b.mask)
        assert a.caption == b.caption
    assert manifest == small_set[1]


def test_different_seeds_differ(small_set):
    other, _ = synth_generate(seed=6, count=24, size=32)
    assert any(not np.array_equal(a.image, b.image) for a, b in zip(small_set[0], other))


def test_sample_invariants(small_set):
    for s in small_set[0]:
        h = s.image.shape[-1]
        assert s.image.shape == (3, h, h) and s.image.min() >= 0 and s.image.max() <= 1
        np.testing.assert_array_equal(s.image[0], s.image[2])
        np.testing.assert_array_equal(s.mask.sum(axis=0), 1.0)
        area = s.mask[1].sum()
        assert 0 < area < 0.25 * h * h
        n = np.count_nonzero(s.token_ids)
        assert np.all(s.token_ids[:n] > 0) and np.all(s.token_ids[n:] == 0)
        assert 2 <= len(s.shapes) <= 3
        assert len({sh.quadrant for sh in s.shapes}) == len(s.shapes)
        assert len({sh.gray for sh in s.shapes}) == len(s.shapes)


def test_caption_names_target_and_mask_rerasterizes(small_set):
    for s in small_set[0]:
        target = s.shapes[s.target]
        assert s.caption == caption_for(target)
        np.testing.assert_array_equal(rasterize(target, s.image.shape[-1]), s.mask[1].astype(bool))


def test_shapes_do_not_overlap(small_set):
    for s in small_set[0]:
        cover = sum(rasterize(sh, 32).astype(int) for sh in s.shapes)
        assert cover.max() == 1


def test_caption_classes_near_uniform():
    samples, _ = synth_generate(seed=11, count=1000, size=32)
    counts = Counter(s.caption for s in samples)
    assert len(counts) == 12
    expected = 1000 / 12
    assert all(0.8 * expected <= c <= 1.2 * expected for c in counts.values()), counts


def test_target_classes_balanced_per_block():
    from seuseg.data.synth import target_class
    for seed in (0, 3):
        for block in range(4):
            assert sorted(target_class(seed, 12 * block + j) for j in range(12)) == list(range(12))


def test_generator_rejects_bad_size():
    with pytest.raises(ConfigurationError):
        synth_generate(0, 4, 48)
    with pytest.raises(ConfigurationError):
        synth_generate(0, 4, 16)


def test_default_splits():
    assert default_splits(300) == (200, 50, 50)
    for n in (1, 7, 10, 301):
        assert sum(default_splits(n)) == n


def test_manifest_splits_disjoint():
    m = DatasetManifest(0, 10, 32, 6, 2, 2)
    parts = [set(m.split_indices(s)) for s in ("train", "val", "test")]
    assert set().union(*parts) == set(range(10))
    assert sum(len(p) for p in parts) == 10
    with pytest.raises(ConfigurationError):
        DatasetManifest(0, 10, 32, 6, 2, 3)


def test_rasterize_shapes_by_hand():
    from seuseg.data import Shape
    sq = rasterize(Shape("square", 0, 4.0, 4.0, 1.0, 0.5), 8)
    assert sq.sum() == 4 and sq[3:5, 3:5].all()
    disc = rasterize(Shape("disc", 0, 4.0, 4.0, 1.0, 0.5), 8)
    assert disc.sum() == 4
    tri = rasterize(Shape("triangle", 0, 4.0, 4.0, 2.0, 0.5), 8)
    # rows widen downward from the apex
    widths = tri.sum(axis=1)
    assert list(widths[2:6]) == sorted(widths[2:6]) and widths[5] > widths[2]


# ---------------------------------------------------------------- tensor container


def test_tensor_roundtrip_bit_exact(rng):
    tensors = {"a": rng.normal(size=(2, 3)), "scalar": np.array(np.pi), "ünï": rng.normal(size=(1, 1, 4)),
               "special": np.array([np.inf, -0.0, np.nan, 5e-324])}
    back = decode_tensors(encode_tensors(tensors))
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == np.asarray(tensors[k], dtype="<f8").tobytes()


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=4, max_side=4)))
def test_tensor_roundtrip_property(arr):
    back = decode_tensors(encode_tensors({"x": arr}))["x"]
    assert back.shape == arr.shape and back.tobytes() == arr.tobytes()


def test_empty_container_is_header_only():
    data = encode_tensors({})
    assert data == b"SEUT" + struct.pack("<II", 1, 0)
    assert len(data) == 12
    assert decode_tensors(data) == {}


def test_layout_matches_declared_format():
    data = encode_tensors({"w": np.array([[1.0, 2.0]])})
    assert data[12:14] == struct.pack("<H", 1) and data[14:15] == b"w"
    assert data[15] == 2
    assert struct.unpack("<2Q", data[16:32]) == (1, 2)
    assert struct.unpack("<2d", data[32:]) == (1.0, 2.0)


def test_bad_magic_reports_offset_zero():
    with pytest.raises(FormatError) as exc:
        decode_tensors(b"NOPE" + bytes(8))
    assert exc.value.offset == 0


def test_bad_version_rejected():
    with pytest.raises(FormatError) as exc:
        decode_tensors(b"SEUT" + struct.pack("<II", 99, 0))
    assert exc.value.offset == 4


def test_truncation_at_every_byte_is_positioned(rng):
    data = encode_tensors({"a": rng.normal(size=(2, 2)), "b": np.array([1.0])})
    for cut in range(len(data)):
        with pytest.raises(FormatError) as exc:
            decode_tensors(data[:cut])
        assert exc.value.offset is not None and 0 <= exc.value.offset <= cut
        assert "byte offset" in str(exc.value)


def test_payload_truncation_offset_points_at_payload():
    data = encode_tensors({"a": np.zeros(4)})
    payload_start = 12 + 2 + 1 + 1 + 8
    with pytest.raises(FormatError) as exc:
        decode_tensors(data[:-3])
    assert exc.value.offset == payload_start


def test_trailing_bytes_rejected():
    data = encode_tensors({"a": np.zeros(1)})
    with pytest.raises(FormatError) as exc:
        decode_tensors(data + b"\x00")
    assert exc.value.offset == len(data)


def test_tensor_files(tmp_path, rng):
    from seuseg.data import load_tensors, save_tensors
    t = {"k": rng.normal(size=(3,))}
    save_tensors(tmp_path / "t.seut", t)
    assert load_tensors(tmp_path / "t.seut")["k"].tobytes() == t["k"].tobytes()


# ---------------------------------------------------------------- PGM masks


def test_pgm_header_and_background():
    data = encode_pgm(np.zeros((3, 5), dtype=np.uint8))
    assert data.startswith(b"P5\n5 3\n255\n")
    assert data[len(b"P5\n5 3\n255\n"):] == bytes(15)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=2, max_dims=2, max_side=9), elements=st.integers(0, 1)))
def test_pgm_roundtrip(mask):
    np.testing.assert_array_equal(decode_pgm(encode_pgm(mask)), mask)


def test_pgm_file_roundtrip(tmp_path, rng):
    m = rng.integers(0, 2, size=(7, 4)).astype(np.uint8)
    write_pgm(tmp_path / "m.pgm", m)
    np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm"), m)


@pytest.mark.parametrize("data", [b"P6\n1 1\n255\n\x00", b"P5\n1 x\n255\n\x00", b"P5\n2 2\n255\n\x00",
                                  b"P5\n1 1\n", b"P5\n1 1\n255", b"P5\n0 1\n255\n"])
def test_pgm_malformed_rejected(data):
    with pytest.raises(FormatError) as exc:
        decode_pgm(data)
    assert exc.value.offset is not None


def test_pgm_rejects_non_binary_mask():
    with pytest.raises(DataError):
        encode_pgm(np.array([[0, 2]]))


# ---------------------------------------------------------------- metrics


def test_metrics_identical():
    a = np.array([[1, 0], [1, 1]])
    assert dice_score(a, a) == 1.0 and miou(a, a) == 1.0


def test_metrics_empty_empty():
    z = np.zeros((3, 3))
    assert dice_score(z, z) == 1.0 and miou(z, z) == 1.0


def test_metrics_disjoint_equal_area():
    p = np.array([[1, 0], [0, 0]])
    g = np.array([[0, 1], [0, 0]])
    assert dice_score(p, g) == 0.0
    bg_iou = 2 / 4
    assert miou(p, g) == pytest.approx(bg_iou / 2)


def test_dice_half_overlap_hand_count():
    assert dice_score(np.array([[1, 1], [0, 0]]), np.array([[1, 0], [1, 0]])) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 16 - 1), st.integers(0, 2 ** 16 - 1))
def test_dice_symmetric(a, b):
    pa = np.array([(a >> i) & 1 for i in range(16)]).reshape(4, 4)
    pb = np.array([(b >> i) & 1 for i in range(16)]).reshape(4, 4)
    assert dice_score(pa, pb) == dice_score(pb, pa)
    assert 0.0 <= dice_score(pa, pb) <= 1.0


def test_metric_shape_mismatch():
    with pytest.raises(DimensionError):
        dice_score(np.zeros((2, 2)), np.zeros((2, 3)))


# ---------------------------------------------------------------- dataset directory


def test_dataset_directory_roundtrip(tmp_path, small_set):
    samples, manifest = small_set
    save_dataset(tmp_path / "ds", samples, manifest)
    assert (tmp_path / "ds" / "manifest.txt").is_file()
    assert (tmp_path / "ds" / "images" / "0000.seut").is_file()
    assert (tmp_path / "ds" / "masks" / "0023.pgm").is_file()
    assert len((tmp_path / "ds" / "captions.txt").read_text().splitlines()) == 24
    ds = load_dataset(tmp_path / "ds")
    ref = Dataset.from_samples(samples, manifest)
    assert ds.manifest == manifest
    assert ds.images.tobytes() == ref.images.tobytes()
    np.testing.assert_array_equal(ds.masks, ref.masks)
    np.testing.assert_array_equal(ds.token_ids, ref.token_ids)
    assert len(ds.split("train")) == manifest.n_train


def test_dataset_manifest_unknown_key(tmp_path, small_set):
    save_dataset(tmp_path / "ds", *small_set)
    path = tmp_path / "ds" / "manifest.txt"
    path.write_text(path.read_text() + "colour = 3\n")
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "ds")


def test_missing_dataset_directory(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nothing")
