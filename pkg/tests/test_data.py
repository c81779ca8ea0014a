"""Seed derivation, noise, patches, image I/O, and dataset indexing."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cspcn.data import (DatasetIndex, add_awgn, augment_pair, derive_seed,
                        extract_patches, from_tensor, image_bit_depth,
                        index_dataset, load_image, patch_coords, rgb_to_luma,
                        save_image, split_index, to_tensor)

cv2 = pytest.importorskip("cv2")


# ---------------------------------------------------------------------------
# seeds and noise

def test_derive_seed_deterministic_and_nonnegative():
    assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)
    assert derive_seed(7, 1, 2) >= 0


def test_derive_seed_stream_and_order_sensitivity():
    vals = {derive_seed(3), derive_seed(3, 0), derive_seed(3, 1),
            derive_seed(3, 1, 2), derive_seed(3, 2, 1), derive_seed(4)}
    assert len(vals) == 6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 62), st.lists(st.integers(0, 2 ** 30), max_size=3))
def test_derive_seed_fits_numpy_seed_range(seed, streams):
    v = derive_seed(seed, *streams)
    assert 0 <= v < 2 ** 63
    np.random.default_rng(v)  # accepted as a seed


def test_add_awgn_zero_sigma_is_identity():
    img = np.random.default_rng(1).random((5, 6, 3)).astype(np.float32)
    out = add_awgn(img, 0.0, seed=9)
    assert np.array_equal(out, img)


def test_add_awgn_statistics_and_dtype():
    img = np.zeros((400, 400, 1), dtype=np.float32)
    out = add_awgn(img, 50.0, seed=4)
    assert out.dtype == np.float32
    noise = out - img
    assert abs(float(noise.mean())) < 2e-3
    assert abs(float(noise.std()) - 50.0 / 255.0) < 2e-3
    assert float(out.min()) < 0.0  # noise is left unclipped


def test_add_awgn_is_seed_deterministic():
    img = np.random.default_rng(2).random((8, 8, 3)).astype(np.float32)
    assert np.array_equal(add_awgn(img, 25, 5), add_awgn(img, 25, 5))
    assert not np.array_equal(add_awgn(img, 25, 5), add_awgn(img, 25, 6))


def test_add_awgn_rejects_negative_sigma():
    with pytest.raises(ValueError, match="sigma"):
        add_awgn(np.zeros((4, 4, 1), np.float32), -1.0, 0)


# ---------------------------------------------------------------------------
# patches

def test_patch_coords_grid_tiles_exactly():
    coords = patch_coords(256, 256, 64, count=0, seed=0, mode="grid")
    assert len(coords) == 16
    assert len(set(coords)) == 16
    assert all(t % 64 == 0 and l % 64 == 0 for t, l in coords)


def test_patch_coords_full_size_patch():
    assert patch_coords(64, 64, 64, count=0, seed=0, mode="grid") == [(0, 0)]


def test_patch_coords_random_bounds_and_determinism():
    a = patch_coords(65, 97, 32, count=50, seed=3)
    b = patch_coords(65, 97, 32, count=50, seed=3)
    assert a == b
    assert all(0 <= t <= 65 - 32 and 0 <= l <= 97 - 32 for t, l in a)


def test_patch_coords_rejects_oversized_patch_and_bad_mode():
    with pytest.raises(ValueError, match="exceeds"):
        patch_coords(16, 64, 32, 1, 0)
    with pytest.raises(ValueError, match="mode"):
        patch_coords(64, 64, 8, 1, 0, mode="mosaic")
    with pytest.raises(ValueError, match="patch_size"):
        patch_coords(64, 64, 0, 1, 0)


def test_extract_patches_grid_reassembles_image():
    rng = np.random.default_rng(6)
    img = rng.random((128, 128, 3)).astype(np.float32)
    coords = patch_coords(128, 128, 64, 0, 0, mode="grid")
    tiles = extract_patches(img, coords, 64)
    assert tiles.shape == (4, 64, 64, 3)
    rebuilt = np.zeros_like(img)
    for (t, l), tile in zip(coords, tiles):
        rebuilt[t:t + 64, l:l + 64] = tile
    assert np.array_equal(rebuilt, img)


def test_extract_patches_count_when_patch_equals_image():
    img = np.random.default_rng(7).random((32, 32, 1)).astype(np.float32)
    coords = patch_coords(32, 32, 32, count=5, seed=1, mode="random")
    tiles = extract_patches(img, coords, 32)
    assert tiles.shape[0] == 5
    assert all(np.array_equal(tiles[i], img) for i in range(5))


# ---------------------------------------------------------------------------
# augmentation

def test_augment_pair_applies_same_flips_to_both():
    rng = np.random.default_rng(8)
    clean = rng.random((6, 8, 3)).astype(np.float32)
    noisy = clean + 0.25
    for seed in range(20):
        c2, n2 = augment_pair(clean, noisy, seed)
        assert np.allclose(n2 - c2, 0.25)


def test_augment_pair_is_an_involution_under_the_same_seed():
    rng = np.random.default_rng(9)
    clean = rng.random((5, 7, 3)).astype(np.float32)
    noisy = rng.random((5, 7, 3)).astype(np.float32)
    for seed in range(12):
        once = augment_pair(clean, noisy, seed)
        twice = augment_pair(*once, seed)
        assert np.array_equal(twice[0], clean) and np.array_equal(twice[1], noisy)


def test_augment_pair_flip_frequency_is_balanced():
    x = np.arange(4.0, dtype=np.float32).reshape(1, 4, 1)
    flips = 0
    n = 10_000
    for seed in range(n):
        c, _ = augment_pair(x, x, seed)
        flips += not np.array_equal(c, x)
    assert 0.47 < flips / n < 0.53


def test_augment_pair_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="differ"):
        augment_pair(np.zeros((4, 4, 3), np.float32), np.zeros((4, 5, 3), np.float32), 0)


# ---------------------------------------------------------------------------
# color and tensors

def test_rgb_to_luma_weights():
    img = np.zeros((2, 2, 3), np.float32)
    img[..., 0] = 1.0
    assert np.allclose(rgb_to_luma(img), 0.299)
    img = np.ones((2, 2, 3), np.float32)
    out = rgb_to_luma(img)
    assert out.shape == (2, 2, 1)
    assert np.allclose(out, 1.0, atol=1e-6)


def test_tensor_round_trip_and_layout():
    img = np.random.default_rng(10).random((6, 7, 3)).astype(np.float32)
    t = to_tensor(img)
    assert t.shape == (3, 6, 7)
    assert float(t[1, 2, 3]) == pytest.approx(float(img[2, 3, 1]))
    assert np.array_equal(from_tensor(t), img)
    batch = to_tensor(img[None])
    assert batch.shape == (1, 3, 6, 7)
    assert np.array_equal(from_tensor(batch), img)


def test_tensor_helpers_reject_bad_ranks():
    with pytest.raises(ValueError, match="dims"):
        to_tensor(np.zeros((4, 4), np.float32))
    with pytest.raises(ValueError, match="single image"):
        from_tensor(torch.zeros(2, 3, 4, 4))


# ---------------------------------------------------------------------------
# image files

def test_image_round_trip_8bit(tmp_path):
    img = np.random.default_rng(11).integers(0, 256, (9, 11, 3)).astype(np.uint8)
    path = tmp_path / "a.png"
    cv2.imwrite(str(path), img)
    loaded = load_image(path)
    assert loaded.dtype == np.float32 and loaded.shape == (9, 11, 3)
    save_image(tmp_path / "b.png", loaded)
    again = cv2.imread(str(tmp_path / "b.png"))
    assert np.array_equal(again, img)


def test_image_round_trip_16bit(tmp_path):
    img = np.random.default_rng(12).integers(0, 65536, (6, 5)).astype(np.uint16)
    path = tmp_path / "deep.png"
    cv2.imwrite(str(path), img)
    assert image_bit_depth(path) == 16
    loaded = load_image(path, grayscale=True)
    assert loaded.shape == (6, 5, 1)
    save_image(tmp_path / "deep2.png", loaded, bit_depth=16)
    again = cv2.imread(str(tmp_path / "deep2.png"), cv2.IMREAD_UNCHANGED)
    assert np.array_equal(again, img)


def test_load_image_channel_conversions(tmp_path):
    gray = np.full((4, 4), 128, np.uint8)
    cv2.imwrite(str(tmp_path / "gray.png"), gray)
    color = load_image(tmp_path / "gray.png")  # promoted to three channels
    assert color.shape == (4, 4, 3)
    assert np.allclose(color, 128 / 255)

    bgr = np.zeros((4, 4, 3), np.uint8)
    bgr[..., 2] = 255  # red in BGR file order
    cv2.imwrite(str(tmp_path / "red.png"), bgr)
    rgb = load_image(tmp_path / "red.png")
    assert np.allclose(rgb[..., 0], 1.0) and np.allclose(rgb[..., 1:], 0.0)
    luma = load_image(tmp_path / "red.png", grayscale=True)
    assert luma.shape == (4, 4, 1)
    assert np.allclose(luma, 0.299, atol=1e-6)


def test_load_image_drops_alpha(tmp_path):
    rgba = np.random.default_rng(13).integers(0, 256, (4, 4, 4)).astype(np.uint8)
    cv2.imwrite(str(tmp_path / "a.png"), rgba)
    assert load_image(tmp_path / "a.png").shape == (4, 4, 3)


def test_load_image_missing_file():
    with pytest.raises(FileNotFoundError):
        load_image("/nonexistent/zz.png")
    with pytest.raises(FileNotFoundError):
        image_bit_depth("/nonexistent/zz.png")


def test_save_image_quantizes_with_rounding(tmp_path):
    img = np.array([[[0.0], [0.4996], [0.5004], [1.0], [1.7], [-0.3]]], np.float32)
    save_image(tmp_path / "q.png", img)
    raw = cv2.imread(str(tmp_path / "q.png"), cv2.IMREAD_UNCHANGED)
    assert raw.tolist() == [[0, 127, 128, 255, 255, 0]]


def test_save_image_leaves_no_partial_file_on_failure(tmp_path):
    img = np.random.default_rng(14).random((4, 4, 3)).astype(np.float32)
    with pytest.raises(ValueError):
        save_image(tmp_path / "bad.depth", img, bit_depth=12)
    assert list(tmp_path.iterdir()) == []


# ---------------------------------------------------------------------------
# dataset indexing

def _make_flat(root, names):
    root.mkdir(parents=True, exist_ok=True)
    for n in names:
        cv2.imwrite(str(root / n), np.zeros((8, 8, 3), np.uint8))


def test_index_dataset_flat(tmp_path):
    _make_flat(tmp_path / "d", ["b.png", "a.png"])
    (tmp_path / "d" / "notes.txt").write_text("skip me")
    idx = index_dataset(tmp_path / "d")
    assert idx.kind == "synthetic"
    assert [p.name for p in idx.clean_paths] == ["a.png", "b.png"]
    assert idx.noisy_paths is None


def test_index_dataset_paired(tmp_path):
    _make_flat(tmp_path / "d" / "clean", ["x.png", "y.png"])
    _make_flat(tmp_path / "d" / "noisy", ["x.png", "y.png"])
    idx = index_dataset(tmp_path / "d")
    assert idx.kind == "paired"
    assert len(idx) == 2
    assert [p.name for p in idx.noisy_paths] == ["x.png", "y.png"]


def test_index_dataset_names_first_unmatched_file(tmp_path):
    _make_flat(tmp_path / "d" / "clean", ["a.png", "b.png"])
    _make_flat(tmp_path / "d" / "noisy", ["a.png"])
    with pytest.raises(ValueError, match="no noisy partner for b.png"):
        index_dataset(tmp_path / "d")
    _make_flat(tmp_path / "e" / "clean", ["a.png"])
    _make_flat(tmp_path / "e" / "noisy", ["a.png", "c.png"])
    with pytest.raises(ValueError, match="no clean partner for c.png"):
        index_dataset(tmp_path / "e")


def test_index_dataset_mode_enforcement(tmp_path):
    _make_flat(tmp_path / "flat", ["a.png"])
    _make_flat(tmp_path / "pair" / "clean", ["a.png"])
    _make_flat(tmp_path / "pair" / "noisy", ["a.png"])
    assert index_dataset(tmp_path / "flat", mode="synthetic").kind == "synthetic"
    assert index_dataset(tmp_path / "pair", mode="paired").kind == "paired"
    with pytest.raises(ValueError, match="clean/ and noisy/"):
        index_dataset(tmp_path / "flat", mode="paired")
    with pytest.raises(ValueError, match="paired clean/noisy layout"):
        index_dataset(tmp_path / "pair", mode="synthetic")
    with pytest.raises(ValueError, match="mode"):
        index_dataset(tmp_path / "flat", mode="blended")


def test_index_dataset_empty_and_missing(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError, match="no image files"):
        index_dataset(tmp_path / "empty")
    with pytest.raises(FileNotFoundError):
        index_dataset(tmp_path / "gone")


def test_split_index_tail_holdout():
    paths = tuple(f"p{i}.png" for i in range(10))
    idx = DatasetIndex("synthetic", paths)
    train, val = split_index(idx, 0.2)
    assert len(train) == 8 and len(val) == 2
    assert val.clean_paths == paths[8:]


def test_split_index_edge_cases():
    idx = DatasetIndex("synthetic", ("a.png", "b.png", "c.png"))
    train, val = split_index(idx, 0.0)
    assert train is idx and val is None
    lone = DatasetIndex("synthetic", ("only.png",))
    train, val = split_index(lone, 0.5)
    assert val is None
    # at least one held out, but never all
    train, val = split_index(idx, 0.01)
    assert len(val) == 1
    train, val = split_index(idx, 0.99)
    assert len(train) >= 1
    with pytest.raises(ValueError, match="val_fraction"):
        split_index(idx, 1.0)
