import numpy as np
import pytest

from geocaps.data import (PairDataset, SyntheticSpec, epoch_batches, generate_synthetic_pairs, load_image_directory,
                          sample_batch, save_image_directory)
from geocaps.errors import ConfigError, DataError


@pytest.fixture(scope="module")
def small():
    return generate_synthetic_pairs(SyntheticSpec(n_locations=40, image_size=32, seed=3))


def test_same_seed_bit_identical(small):
    again = generate_synthetic_pairs(SyntheticSpec(n_locations=40, image_size=32, seed=3))
    assert again.ground.tobytes() == small.ground.tobytes()
    assert again.satellite.tobytes() == small.satellite.tobytes()


def test_different_seed_differs(small):
    other = generate_synthetic_pairs(SyntheticSpec(n_locations=40, image_size=32, seed=4))
    assert not np.array_equal(other.ground, small.ground)


def test_counts_and_alignment():
    ds = generate_synthetic_pairs(SyntheticSpec(n_locations=512, image_size=16, seed=0))
    assert ds.ground.shape == ds.satellite.shape == (512, 3, 16, 16)
    assert ds.ids.tolist() == list(range(512))
    assert ds[7].location_id == 7


def test_noise_free_locations_are_distinct():
    ds = generate_synthetic_pairs(SyntheticSpec(n_locations=30, image_size=24, noise_std=0.0))
    for view in (ds.ground, ds.satellite):
        flat = view.reshape(30, -1)
        assert len({row.tobytes() for row in flat}) == 30
    assert not np.array_equal(ds.ground[0], ds.satellite[0])  # distinct renderers


@pytest.mark.parametrize("spec", [SyntheticSpec(image_size=8), SyntheticSpec(n_locations=1),
                                  SyntheticSpec(latent_dim=0), SyntheticSpec(noise_std=-1)])
def test_invalid_spec(spec):
    with pytest.raises(ConfigError):
        generate_synthetic_pairs(spec)


def test_split_is_disjoint_by_location(small):
    train, test = small.split(0.8)
    assert len(train) == 32 and len(test) == 8
    assert set(train.ids).isdisjoint(test.ids)
    assert train.ids.max() < test.ids.min()


def test_sample_batch_distinct_and_matched(small):
    g, s, ids = sample_batch(small, 32, np.random.default_rng(0))
    assert g.shape[0] == s.shape[0] == 32
    assert len(set(ids.tolist())) == 32
    for row, loc in enumerate(ids):
        np.testing.assert_array_equal(g[row], small.ground[loc])
        np.testing.assert_array_equal(s[row], small.satellite[loc])


def test_sample_batch_full_dataset_is_permutation(small):
    _, _, ids = sample_batch(small, len(small), np.random.default_rng(1))
    assert sorted(ids.tolist()) == list(range(40))


def test_sample_batch_reproducible(small):
    a = sample_batch(small, 8, np.random.default_rng(9))[2]
    b = sample_batch(small, 8, np.random.default_rng(9))[2]
    np.testing.assert_array_equal(a, b)


def test_sample_batch_too_large(small):
    with pytest.raises(DataError):
        sample_batch(small, 41, np.random.default_rng(0))


def test_epoch_drops_remainder(small):
    batches = list(epoch_batches(small, 16, np.random.default_rng(0)))
    assert len(batches) == 2
    seen = np.concatenate([ids for _, _, ids in batches])
    assert len(set(seen.tolist())) == 32


def test_dataset_rejects_duplicate_ids():
    x = np.zeros((2, 3, 4, 4), np.float32)
    with pytest.raises(DataError):
        PairDataset([1, 1], x, x)


# --- PNG directories ---------------------------------------------------------
def test_directory_round_trip(tmp_path, small):
    part = small.subset(np.arange(5))
    save_image_directory(part, tmp_path)
    loaded = load_image_directory(tmp_path, train_fraction=0.8)
    assert len(loaded) == 5
    assert loaded.names == [f"{i:06d}" for i in range(5)]
    train = np.concatenate([loaded.ground[:4], loaded.satellite[:4]])
    np.testing.assert_allclose(train.mean(axis=(0, 2, 3), dtype=np.float64), 0, atol=1e-4)
    np.testing.assert_allclose(train.std(axis=(0, 2, 3)), 1, atol=1e-4)


def test_directory_two_pairs(tmp_path, small):
    part = PairDataset([0, 1], small.ground[:2].clip(0, 1), small.satellite[:2].clip(0, 1), ["a", "b"])
    save_image_directory(part, tmp_path)
    assert load_image_directory(tmp_path).names == ["a", "b"]


def test_directory_orphan_named(tmp_path, small):
    save_image_directory(small.subset(np.arange(3)), tmp_path)
    (tmp_path / "satellite" / "000001.png").unlink()
    with pytest.raises(DataError, match="000001"):
        load_image_directory(tmp_path)


def test_directory_empty(tmp_path):
    (tmp_path / "ground").mkdir()
    (tmp_path / "satellite").mkdir()
    with pytest.raises(DataError, match="no pairs found"):
        load_image_directory(tmp_path)


def test_directory_missing(tmp_path):
    with pytest.raises(DataError):
        load_image_directory(tmp_path / "nope")
