"""Universal and random-oracle hash functions.

Two backends share one calling convention ``f(u, v, w) -> [0, range)``:

* the affine universal family ``((a*u + b*v + c*w + d) mod p) mod range``
  used on the production path, and
* a seeded pseudorandom function (splitmix64 chain) standing in for a fully
  random hash when checking moment formulas.

Scalar versions work on Python integers, so there is no intermediate
overflow. The ``*_array`` versions are vectorized with numpy and keep every
intermediate below 2**63.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MERSENNE_31 = (1 << 31) - 1
MASK64 = (1 << 64) - 1

UNIVERSAL = "universal"
RANDOM_ORACLE = "random_oracle"
BACKENDS = (UNIVERSAL, RANDOM_ORACLE)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for every n < 3.3e24."""
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)
    for q in small:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in small:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class HashParams:
    """Coefficients of one member of the affine universal family.

    ``seed`` records where the coefficients came from; it is ``None`` for
    hand-built parameters (tests, injective plans).
    """

    a: int
    b: int
    c: int
    d: int
    p: int = MERSENNE_31
    range: int = 2
    seed: int | None = None

    def __post_init__(self):
        if not is_prime(self.p):
            raise ValueError(f"modulus p={self.p} is not prime")
        if not 1 <= self.range <= self.p:
            raise ValueError(f"range must satisfy 1 <= range <= p, got {self.range}")
        for name in ("a", "b", "c"):
            v = getattr(self, name)
            if not 1 <= v <= self.p - 1:
                raise ValueError(f"{name}={v} outside [1, p-1]")
        if not 0 <= self.d <= self.p - 1:
            raise ValueError(f"d={self.d} outside [0, p-1]")

    def __call__(self, u: int, v: int, w: int) -> int:
        return uhash3(self, u, v, w)

    def coefficients(self) -> tuple[int, int, int, int]:
        return (self.a, self.b, self.c, self.d)


def sample_hash_params(seed: int, p: int = MERSENNE_31, range: int = 2) -> HashParams:
    """Draw (a, b, c, d) deterministically from ``seed``."""
    if not is_prime(p):
        raise ValueError(f"modulus p={p} is not prime")
    if not 1 <= range <= p:
        raise ValueError(f"range must satisfy 1 <= range <= p, got {range}")
    rng = np.random.default_rng(seed & MASK64)
    # p may exceed int64, so draw through Python ints
    raw = [int(v) for v in rng.integers(0, 1 << 62, size=4)]
    a, b, c = (1 + v % (p - 1) for v in raw[:3])
    d = raw[3] % p
    return HashParams(a, b, c, d, p=p, range=range, seed=seed)


def uhash3(params: HashParams, u: int, v: int, w: int) -> int:
    if u < 0 or v < 0 or w < 0:
        raise ValueError("hash inputs must be non-negative")
    return ((params.a * u + params.b * v + params.c * w + params.d) % params.p) % params.range


def sign_hash(params: HashParams, e: int, x: int, i: int) -> int:
    """Map the 0/1 output of a range-2 hash to -1/+1."""
    if params.range != 2:
        raise ValueError(f"sign hash needs range=2 params, got range={params.range}")
    return 2 * uhash3(params, e, x, i) - 1


def _mulmod_array(coef: int, arr: np.ndarray, p: int) -> np.ndarray:
    return (coef * (arr % p)) % p


def uhash3_array(params: HashParams, u, v, w) -> np.ndarray:
    """Broadcasting version of :func:`uhash3`; returns int64."""
    u, v, w = (np.asarray(t, dtype=np.int64) for t in (u, v, w))
    if params.p >= (1 << 31):
        # products would overflow int64; fall back to Python ints
        out = np.vectorize(lambda a_, b_, c_: uhash3(params, int(a_), int(b_), int(c_)), otypes=[np.int64])
        return out(u, v, w)
    p = params.p
    acc = _mulmod_array(params.a, u, p)
    acc = acc + _mulmod_array(params.b, v, p)
    acc = acc + _mulmod_array(params.c, w, p)
    return ((acc + params.d) % p) % params.range


def sign_hash_array(params: HashParams, e, x, i) -> np.ndarray:
    if params.range != 2:
        raise ValueError(f"sign hash needs range=2 params, got range={params.range}")
    return 2 * uhash3_array(params, e, x, i) - 1


# -- random oracle ---------------------------------------------------------

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _splitmix(z: int) -> int:
    z = (z + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def random_oracle_hash(seed: int, u: int, v: int, w: int, range: int) -> int:
    """Seeded PRF on (u, v, w), reduced to [0, range)."""
    if range < 1:
        raise ValueError("range must be >= 1")
    h = _splitmix(seed & MASK64)
    for t in (u, v, w):
        h = _splitmix(h ^ (t & MASK64))
    return h % range


def _splitmix_array(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def random_oracle_hash_array(seed, u, v, w, range: int) -> np.ndarray:
    """Vectorized :func:`random_oracle_hash`; ``seed`` may be an array too."""
    if range < 1:
        raise ValueError("range must be >= 1")
    to_u64 = lambda t: np.asarray(t).astype(np.uint64) if np.ndim(t) else np.uint64(int(t) & MASK64)
    with np.errstate(over="ignore"):
        h = _splitmix_array(to_u64(seed))
        for t in (u, v, w):
            h = _splitmix_array(h ^ to_u64(t))
    return (h % np.uint64(range)).astype(np.int64)


def oracle_sign(seed: int, e: int, x: int, i: int) -> int:
    return 2 * random_oracle_hash(seed, e, x, i, 2) - 1


def oracle_sign_array(seed, e, x, i) -> np.ndarray:
    return 2 * random_oracle_hash_array(seed, e, x, i, 2) - 1
