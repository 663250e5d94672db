import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robez.hashing import (
    MERSENNE_31,
    HashParams,
    is_prime,
    oracle_sign_array,
    random_oracle_hash,
    random_oracle_hash_array,
    sample_hash_params,
    sign_hash,
    sign_hash_array,
    uhash3,
    uhash3_array,
)


def test_is_prime_small_and_mersenne():
    primes = [n for n in range(60) if is_prime(n)]
    assert primes == [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]
    assert is_prime(MERSENNE_31)
    assert not is_prime((1 << 32) + 1)
    assert is_prime((1 << 61) - 1)


def test_uhash3_hand_computed():
    h = HashParams(3, 5, 7, 11, p=13, range=4)
    # (3*1 + 5*2 + 7*3 + 11) mod 13 = 45 mod 13 = 6, then mod 4
    assert uhash3(h, 1, 2, 3) == 2
    assert h(1, 2, 3) == 2


def test_sign_hash_is_plus_minus_one():
    h = HashParams(3, 5, 7, 11, p=13, range=2)
    assert sign_hash(h, 1, 2, 3) == -1  # 6 mod 2 = 0
    assert sign_hash(h, 1, 2, 4) == -1  # 52 mod 13 = 0
    assert sign_hash(h, 1, 2, 5) == 1  # 59 mod 13 = 7
    with pytest.raises(ValueError):
        sign_hash(HashParams(1, 1, 1, 0, p=13, range=3), 0, 0, 0)


def test_invalid_params_rejected():
    with pytest.raises(ValueError, match="not prime"):
        HashParams(1, 1, 1, 0, p=12)
    with pytest.raises(ValueError, match="a=0"):
        HashParams(0, 1, 1, 0, p=13)
    with pytest.raises(ValueError, match="range"):
        HashParams(1, 1, 1, 0, p=13, range=14)
    with pytest.raises(ValueError):
        uhash3(HashParams(1, 1, 1, 0), -1, 0, 0)


def test_sample_is_deterministic_and_in_range():
    a = sample_hash_params(42, range=100)
    assert a == sample_hash_params(42, range=100)
    assert a != sample_hash_params(43, range=100)
    assert a.seed == 42
    assert all(1 <= c < MERSENNE_31 for c in (a.a, a.b, a.c)) and 0 <= a.d < MERSENNE_31


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 10**6))
def test_array_matches_scalar(seed, rng_size):
    h = sample_hash_params(seed, range=rng_size)
    rng = np.random.default_rng(seed)
    u, v, w = (rng.integers(0, 2**40, 30) for _ in range(3))
    want = [uhash3(h, int(a), int(b), int(c)) for a, b, c in zip(u, v, w)]
    np.testing.assert_array_equal(uhash3_array(h, u, v, w), want)


def test_array_matches_scalar_large_prime():
    h = sample_hash_params(5, p=(1 << 61) - 1, range=1000)
    u = np.arange(20)
    want = [uhash3(h, int(t), 3, 4) for t in u]
    np.testing.assert_array_equal(uhash3_array(h, u, 3, 4), want)


def test_sign_hash_array_matches_scalar():
    h = sample_hash_params(9)
    i = np.arange(64)
    np.testing.assert_array_equal(sign_hash_array(h, 2, 7, i), [sign_hash(h, 2, 7, int(t)) for t in i])


def test_universal_pair_collision_rate():
    # over random members of the family, two fixed keys collide with prob ~ 1/range
    r = 50
    hits = sum(uhash3(p := sample_hash_params(s, range=r), 1, 2, 3) == uhash3(p, 1, 5, 3) for s in range(4000))
    assert abs(hits / 4000 - 1 / r) < 4 * np.sqrt(1 / r / 4000)


def test_random_oracle_array_matches_scalar_and_is_uniform():
    seeds = np.arange(1000)
    got = random_oracle_hash_array(seeds, 1, 2, 3, 10)
    np.testing.assert_array_equal(got, [random_oracle_hash(int(s), 1, 2, 3, 10) for s in seeds])
    counts = np.bincount(got, minlength=10)
    assert counts.min() > 60
    signs = oracle_sign_array(7, 0, 0, np.arange(10000))
    assert set(np.unique(signs)) == {-1, 1}
    assert abs(signs.mean()) < 0.05


def test_random_oracle_chi_square_over_seeds():
    from scipy.stats import chisquare

    assert random_oracle_hash(123, 4, 5, 6, 1) == 0
    assert random_oracle_hash(123, 4, 5, 6, 16) == random_oracle_hash(123, 4, 5, 6, 16)
    out = random_oracle_hash_array(np.arange(10**6, dtype=np.uint64), 4, 5, 6, 16)
    assert chisquare(np.bincount(out, minlength=16)).pvalue > 1e-3


def test_spec_hand_values():
    assert uhash3(HashParams(3, 5, 7, 11, p=31, range=10), 1, 2, 0) == 4
    assert uhash3(HashParams(1, 1, 1, 0, p=31, range=31), 0, 0, 0) == 0
    with pytest.raises(ValueError):
        sample_hash_params(0, p=4)
    assert sample_hash_params(1, range=100).coefficients() != sample_hash_params(2, range=100).coefficients()
