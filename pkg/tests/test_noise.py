import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asfs.data import Dataset
from asfs.errors import ConfigError
from asfs.noise import NoiseSpec, apply_all, apply_noise, gaussian_kernel, missing_mask

CELLS = (1000, 100)


@pytest.fixture(scope="module")
def x():
    return np.random.default_rng(0).uniform(size=CELLS)


def test_gaussian_zero_variance_is_identity(x):
    np.testing.assert_array_equal(apply_noise(x, NoiseSpec("gaussian", var=0.0)), x)


def test_gaussian_variance_before_clipping(x):
    out = apply_noise(x, NoiseSpec("gaussian", seed=3), clip=False)
    assert 0.0097 <= np.var(out - x) <= 0.0103


def test_gaussian_output_clipped(x):
    out = apply_noise(x, NoiseSpec("gaussian", var=0.5))
    assert out.min() >= 0 and out.max() <= 1


def test_salt_and_pepper_fraction(x):
    out = apply_noise(x, NoiseSpec("salt_pepper", amount=0.05, seed=1))
    changed = out != x
    assert 0.045 <= changed.mean() <= 0.055
    assert set(np.unique(out[changed])) <= {0.0, 1.0}
    salt = np.mean(out[changed] == 1.0)
    assert 0.45 < salt < 0.55


def test_speckle_is_multiplicative():
    x = np.zeros((10, 10))
    x[0] = 0.5
    out = apply_noise(x, NoiseSpec("speckle", seed=2))
    assert not out[1:].any()
    assert np.any(out[0] != 0.5)


def test_poisson_keeps_range_and_mean(x):
    out = apply_noise(x, NoiseSpec("poisson", seed=0))
    assert out.min() >= 0 and out.max() <= 1
    assert abs(out.mean() - x.mean()) < 0.01


@pytest.mark.parametrize("kind", ["mean_blur", "gaussian_blur"])
def test_blur_of_constant_image_is_constant(kind):
    x = np.full((3, 16), 0.4)
    out = apply_noise(x, NoiseSpec(kind, grid=(4, 4), kernel_size=3))
    np.testing.assert_allclose(out, 0.4, atol=1e-15)


def test_mean_blur_by_hand():
    img = np.zeros((1, 9))
    img[0, 4] = 0.9  # centre of a 3x3 grid
    out = apply_noise(img, NoiseSpec("mean_blur", grid=(3, 3), kernel_size=3))
    assert out[0, 4] == pytest.approx(0.1)


def test_gaussian_kernel_normalised():
    k = gaussian_kernel(5, 1.3)
    assert k.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k, k.T)


def test_missing_fraction_and_determinism(x):
    out, miss = missing_mask(x, 0.3, seed=4)
    assert abs(miss.mean() - 0.3) <= 0.005
    assert not out[miss].any()
    np.testing.assert_array_equal(out[~miss], x[~miss])
    _, again = missing_mask(x, 0.3, seed=4)
    np.testing.assert_array_equal(miss, again)


def test_missing_zero_fraction_is_identity(x):
    out, miss = missing_mask(x, 0.0, seed=0)
    np.testing.assert_array_equal(out, x)
    assert not miss.any()


def test_dataset_inputs_keep_metadata():
    ds = Dataset(np.full((4, 3), 0.5), np.array([0, 1, 0, 1]))
    out = apply_noise(ds, NoiseSpec("missing", fraction=0.5))
    assert isinstance(out, Dataset)
    np.testing.assert_array_equal(out.labels, ds.labels)
    assert np.sum(out.features == 0) == 6
    masked, miss = missing_mask(ds, 0.25, seed=0)
    assert isinstance(masked, Dataset) and miss.sum() == 3


def test_apply_all_chains(x):
    specs = [NoiseSpec("salt_pepper", amount=0.05), NoiseSpec("missing", fraction=0.3)]
    out = apply_all(x, specs)
    np.testing.assert_array_equal(out, apply_noise(apply_noise(x, specs[0]), specs[1]))


@given(st.sampled_from(["gaussian", "salt_pepper", "poisson", "speckle", "missing"]), st.integers(0, 1000))
def test_seeded_noise_reproducible_and_in_range(kind, seed):
    x = np.random.default_rng(seed).uniform(size=(20, 5))
    a = apply_noise(x, NoiseSpec(kind, seed=seed))
    b = apply_noise(x, NoiseSpec(kind, seed=seed))
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


@pytest.mark.parametrize("spec", [
    NoiseSpec("rain"),
    NoiseSpec("salt_pepper", amount=1.5),
    NoiseSpec("gaussian", var=-1.0),
    NoiseSpec("mean_blur"),
    NoiseSpec("mean_blur", grid=(3, 3)),
    NoiseSpec("mean_blur", grid=(2, 2), kernel_size=2),
    NoiseSpec("gaussian_blur", grid=(2, 2), sigma=0),
])
def test_invalid_specs(spec):
    with pytest.raises(ConfigError):
        apply_noise(np.zeros((2, 4)), spec)


def test_spec_dict_roundtrip():
    spec = NoiseSpec("gaussian_blur", grid=(28, 28), sigma=0.8, seed=7)
    assert NoiseSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        NoiseSpec.from_dict({"kind": "gaussian", "sigmaa": 1})
