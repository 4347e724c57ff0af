import hashlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from catebench.seeding import derive_seed, rng_from

u64 = st.integers(min_value=0, max_value=2 ** 64 - 1)


@given(u64, st.lists(u64, max_size=5))
def test_pure_and_in_range(master, path):
    a = derive_seed(master, path)
    assert a == derive_seed(master, list(path))
    assert 0 <= a < 2 ** 64


def test_sibling_streams_do_not_collide():
    masters = np.random.default_rng(0).integers(0, 2 ** 63, size=10_000)
    for s in masters:
        assert derive_seed(int(s), [0]) != derive_seed(int(s), [1])
    seen = {derive_seed(int(s), [0]) for s in masters}
    assert len(seen) == masters.size


def test_path_structure_matters():
    # a longer path is not the same as a shorter one padded with zeros
    assert derive_seed(1, []) != derive_seed(1, [0])
    assert derive_seed(1, [2, 3]) != derive_seed(1, [3, 2])


def test_documented_layout():
    # keyed BLAKE2b over a word count and 8-byte little-endian words
    h = hashlib.blake2b(digest_size=8, person=b"catebench")
    h.update((4).to_bytes(4, "little"))
    for v in (2021, 0, 3, 7):
        h.update(v.to_bytes(8, "little"))
    assert derive_seed(2021, [0, 3, 7]) == int.from_bytes(h.digest(), "little")


@pytest.mark.parametrize("bad", [-1, 2 ** 64])
def test_component_range(bad):
    with pytest.raises(ValueError):
        derive_seed(0, [bad])
    with pytest.raises(ValueError):
        derive_seed(bad)


def test_rng_from_reproducible():
    assert np.array_equal(rng_from(5, [1]).random(4), rng_from(5, [1]).random(4))
