import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from asfs import checkpoint
from asfs.rng import make_rng

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=2, max_side=6), elements=finite))
def test_roundtrip_is_bit_exact(arr):
    header, back = checkpoint.loads(checkpoint.dumps({"seed": 3}, {"w": arr}))
    assert header["seed"] == 3
    assert back["w"].shape == arr.shape
    assert back["w"].tobytes() == arr.astype(np.float64).tobytes()


def test_file_roundtrip_and_determinism(tmp_path):
    arrays = {"a.weight": make_rng(0, "t").normal(size=(3, 4)), "a.bias": np.zeros(3)}
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    checkpoint.save(p1, {"kind": "x", "z": [1, 2]}, arrays)
    checkpoint.save(p2, {"z": [1, 2], "kind": "x"}, arrays)
    assert p1.read_bytes() == p2.read_bytes()
    header, back = checkpoint.load(p1)
    assert header["format_version"] == checkpoint.FORMAT_VERSION
    np.testing.assert_array_equal(back["a.weight"], arrays["a.weight"])


@pytest.mark.parametrize("text", [
    "",
    "garbage\n{}\n",
    checkpoint.MAGIC + "\n{not json\n",
    checkpoint.MAGIC + '\n{"format_version": 99}\n',
    checkpoint.MAGIC + '\n{"format_version": 1}\n@ w 2\n',
    checkpoint.MAGIC + '\n{"format_version": 1}\n@ w 3\n1 2\n',
    checkpoint.MAGIC + '\n{"format_version": 1}\n@ w 2\n1 x\n',
    checkpoint.MAGIC + '\n{"format_version": 1}\nw 2\n1 2\n',
])
def test_malformed_checkpoints_rejected(text):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(text)


def test_rng_streams_are_keyed():
    a = make_rng(5, "mask", 0, 1).random(4)
    np.testing.assert_array_equal(a, make_rng(5, "mask", 0, 1).random(4))
    assert not np.array_equal(a, make_rng(5, "mask", 1, 0).random(4))
    assert not np.array_equal(a, make_rng(6, "mask", 0, 1).random(4))
    with pytest.raises(ValueError):
        make_rng(0, -1)
