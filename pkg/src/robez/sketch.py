"""ROBE-Z viewed as a sketch of a flattened parameter vector.

A hash draw assigns every block of ``z`` consecutive coordinates a start
slot in ``[0, m)`` and every coordinate an independent sign. Coordinate
``i`` lands in slot ``(start[i // z] + i % z) mod m``. This is an ``n x m``
matrix ``S`` with one signed nonzero per row; ``project(x) = S.T @ x``.

The module provides the analytic first and second moments of the
inner-product estimator ``<S.T x, S.T y>``, exact enumeration over every
hash draw for tiny instances, and Monte Carlo estimates for larger ones.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .hashing import (
    RANDOM_ORACLE,
    UNIVERSAL,
    oracle_sign_array,
    random_oracle_hash_array,
    sample_hash_params,
    sign_hash_array,
    uhash3_array,
)

MATERIALIZE_LIMIT = 10**6
ENUMERATION_LIMIT = 10**7
SIGN_SALT = 0x5DEECE66D
CIRCULAR = "circular"
LINEAR = "linear"

_BACKEND_ALIASES = {"oracle": RANDOM_ORACLE, RANDOM_ORACLE: RANDOM_ORACLE, UNIVERSAL: UNIVERSAL}


def _backend(name: str) -> str:
    try:
        return _BACKEND_ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; use 'oracle' or 'universal'") from None


@dataclass(frozen=True)
class SketchPlan:
    n: int
    m: int
    z: int
    embed_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.m, self.z) < 1:
            raise ValueError("n, m and z must be positive")
        if self.n % self.z:
            raise ValueError(f"block size z={self.z} must divide n={self.n}")
        if self.z > self.m:
            raise ValueError(f"block size z={self.z} exceeds sketch size m={self.m}")
        d = self.embed_dim
        if d is not None and self.z % d and d % self.z:
            raise ValueError(f"need z | D or D | z, got z={self.z}, D={d}")

    @property
    def n_blocks(self) -> int:
        return self.n // self.z


@dataclass(frozen=True)
class HashDraw:
    """One realization of the block hash and the sign hash."""

    starts: np.ndarray  # (n_blocks,) block start slots
    signs: np.ndarray  # (n,) values in {-1, +1}

    def slots(self, plan: SketchPlan) -> np.ndarray:
        i = np.arange(plan.n)
        return (self.starts[i // plan.z] + i % plan.z) % plan.m


@dataclass
class MomentReport:
    mean_estimate: float
    variance_estimate: float
    trials: int
    standard_error_mean: float
    standard_error_variance: float

    def to_dict(self) -> dict:
        return asdict(self)


def draw_hashes(plan: SketchPlan, trials: int, first_trial: int = 0, backend: str = "oracle"):
    """Block starts (trials, n_blocks) and signs (trials, n).

    Trial ``t`` uses the seed ``plan.seed ^ t``, so any range of trials can
    be regenerated independently of how the run was chunked.
    """
    backend = _backend(backend)
    idx = np.arange(first_trial, first_trial + trials, dtype=np.uint64)
    trial_seeds = np.uint64(plan.seed & (2**64 - 1)) ^ idx
    blocks = np.arange(plan.n_blocks)
    coords = np.arange(plan.n)
    if backend == RANDOM_ORACLE:
        starts = random_oracle_hash_array(trial_seeds[:, None], 0, blocks[None, :], 0, plan.m)
        signs = oracle_sign_array(trial_seeds[:, None] ^ np.uint64(SIGN_SALT), 1, coords[None, :], 0)
        return starts, signs
    starts = np.empty((trials, plan.n_blocks), dtype=np.int64)
    signs = np.empty((trials, plan.n), dtype=np.int64)
    for t, s in enumerate(trial_seeds.tolist()):
        starts[t] = uhash3_array(sample_hash_params(s, range=plan.m), 0, 0, blocks)
        signs[t] = sign_hash_array(sample_hash_params(s ^ SIGN_SALT, range=2), 0, 0, coords)
    return starts, signs


def draw_hash(plan: SketchPlan, trial: int = 0, backend: str = "oracle") -> HashDraw:
    starts, signs = draw_hashes(plan, 1, trial, backend)
    return HashDraw(starts[0], signs[0])


def materialize_sketch_matrix(plan: SketchPlan, draw: HashDraw) -> np.ndarray:
    if plan.n * plan.m > MATERIALIZE_LIMIT:
        raise ValueError(f"n*m={plan.n * plan.m} exceeds materialization limit {MATERIALIZE_LIMIT}")
    S = np.zeros((plan.n, plan.m))
    S[np.arange(plan.n), draw.slots(plan)] = draw.signs
    return S


def _check_vec(x, n: int, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {x.shape}")
    return x


def project(x, plan: SketchPlan, draw: HashDraw) -> np.ndarray:
    x = _check_vec(x, plan.n)
    return np.bincount(draw.slots(plan), weights=draw.signs * x, minlength=plan.m)


def inner_product_estimate(x, y, plan: SketchPlan, draw: HashDraw) -> float:
    y = _check_vec(y, plan.n, "y")
    return float(project(x, plan, draw) @ project(y, plan, draw))


# -- analytic moments ------------------------------------------------------


def _pair_sums(x: np.ndarray, y: np.ndarray) -> float:
    """sum_{i != j} (x_i^2 y_j^2 + x_i y_i x_j y_j) in closed form."""
    xx, yy, xy = x @ x, y @ y, x @ y
    diag = np.sum(x * x * y * y)
    return (xx * yy - diag) + (xy * xy - diag)


def theoretical_variance_v1(x, y, m: int) -> float:
    """Variance of the inner-product estimate under per-coordinate hashing."""
    if m < 1:
        raise ValueError("m must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    return float(_pair_sums(x, y) / m)


def _denominator(m: int, z: int, placement: str) -> int:
    if placement == CIRCULAR:
        return m
    if placement == LINEAR:
        return m - z + 1
    raise ValueError(f"placement must be {CIRCULAR!r} or {LINEAR!r}")


def _check_blocks(x, y, m, z, allow_wrap=False):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d with equal length")
    if z < 1 or x.size % z:
        raise ValueError(f"block size z={z} must divide n={x.size}")
    if m < 1 or (z > m and not allow_wrap):
        raise ValueError(f"block size z={z} exceeds m={m}")
    return x, y


def vz_restricted_sum(x, y, m: int, z: int, placement: str = CIRCULAR) -> float:
    """Variance as an explicit sum over coordinate pairs in different blocks."""
    x, y = _check_blocks(x, y, m, z)
    block = np.arange(x.size) // z
    cross = block[:, None] != block[None, :]
    total = np.sum(np.outer(x * x, y * y)[cross]) + np.sum(np.outer(x * y, x * y)[cross])
    return float(total / _denominator(m, z, placement))


def vz_decomposition(x, y, m: int, z: int, placement: str = CIRCULAR) -> float:
    """Variance as the per-coordinate value minus the per-block values."""
    x, y = _check_blocks(x, y, m, z)
    chunks = sum(_pair_sums(x[k:k + z], y[k:k + z]) for k in range(0, x.size, z))
    return float((_pair_sums(x, y) - chunks) / _denominator(m, z, placement))


def theoretical_variance_vz(x, y, m: int, z: int, placement: str = CIRCULAR, check: bool = True) -> float:
    """Variance of the inner-product estimate with block size ``z``.

    ``placement="circular"`` is the wrapping array (every alignment of two
    blocks equally likely, denominator ``m``); ``"linear"`` rescales by
    ``1/(m - z + 1)`` for comparison with non-wrapping placement.

    With ``check`` (and n <= 4096) the pairwise sum and the decomposition
    are both evaluated and must agree to 1e-12 of the per-coordinate scale.
    """
    value = vz_decomposition(x, y, m, z, placement)
    if check and np.size(x) <= 4096:
        direct = vz_restricted_sum(x, y, m, z, placement)
        scale = max(abs(direct), abs(value), theoretical_variance_v1(x, y, m), np.finfo(float).tiny)
        if abs(direct - value) > 1e-12 * scale:
            raise ArithmeticError(f"variance decomposition mismatch: {direct!r} vs {value!r}")
    return value


def variance_ratio_approx(n: int, m: int, z: int) -> float:
    """Relative variance change (V_Z - V_1) / V_1 under equal-magnitude terms.

    Uses alpha = (z-1)/m and beta = m/(n-1); only meaningful when all the
    pairwise product terms are of similar size.
    """
    if n <= 1:
        raise ValueError("need n > 1")
    if m <= z - 1:
        raise ValueError("need m > z - 1")
    alpha = (z - 1) / m
    beta = m / (n - 1)
    return alpha / (1 - alpha) * (1 - beta)


# -- empirical moments -----------------------------------------------------


def _projections(plan: SketchPlan, starts, signs, *vectors):
    """Slots (trials, n) and one (trials, m) projection per input vector."""
    t = starts.shape[0]
    i = np.arange(plan.n)
    slots = (starts[:, i // plan.z] + i % plan.z) % plan.m
    flat = (slots + plan.m * np.arange(t)[:, None]).ravel()
    out = [
        np.bincount(flat, weights=(signs * v).ravel(), minlength=t * plan.m).reshape(t, plan.m)
        for v in vectors
    ]
    return slots, out


def _chunks(trials: int, chunk: int):
    for lo in range(0, trials, chunk):
        yield lo, min(chunk, trials - lo)


def _run_chunks(trials: int, chunk: int, work, n_jobs: int = 1) -> np.ndarray:
    """Fill a (trials,) array chunk by chunk; each chunk writes only its own slice."""
    out = np.empty(trials)
    jobs = list(_chunks(trials, chunk))

    def run(job):
        lo, size = job
        out[lo:lo + size] = work(lo, size)

    if n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)
    return out


def estimator_samples(x, y, m: int, z: int, trials: int, seed: int = 0, backend: str = "oracle", n_jobs: int = 1, chunk: int = 4096) -> np.ndarray:
    """Inner-product estimates for ``trials`` independent hash draws."""
    x, y = _check_blocks(x, y, m, z)
    plan = SketchPlan(x.size, m, z, seed=seed)

    def work(lo, size):
        starts, signs = draw_hashes(plan, size, lo, backend)
        _, (px, py) = _projections(plan, starts, signs, x, y)
        return np.einsum("tj,tj->t", px, py)

    return _run_chunks(trials, chunk, work, n_jobs)


def _moments(values: np.ndarray) -> MomentReport:
    t = values.size
    mean = float(values.mean())
    dev = values - mean
    var = float(dev @ dev / (t - 1))
    m2 = float(np.mean(dev**2))
    m4 = float(np.mean(dev**4))
    se_var = math.sqrt(max(m4 - m2 * m2, 0.0) / t)
    return MomentReport(mean, var, t, math.sqrt(var / t), se_var)


def monte_carlo_moments(x, y, m: int, z: int, trials: int, seed: int = 0, backend: str = "oracle", n_jobs: int = 1) -> MomentReport:
    if trials < 2:
        raise ValueError("need at least 2 trials")
    return _moments(estimator_samples(x, y, m, z, trials, seed, backend, n_jobs))


def exhaustive_moments(x, y, m: int, z: int) -> tuple[float, float]:
    """Exact mean and variance over every block placement and sign pattern.

    Blocks longer than the array (``z > m``) are allowed here; they wrap
    onto themselves, which the analytic formulas do not model.
    """
    x, y = _check_blocks(x, y, m, z, allow_wrap=True)
    n = x.size
    nb = n // z
    n_draws = m**nb * 2**n
    if n_draws > ENUMERATION_LIMIT:
        raise ValueError(f"{n_draws} hash draws exceed enumeration limit {ENUMERATION_LIMIT}")
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    coords = np.arange(n)
    xy = np.outer(x, y)
    # est = g^T (C * x y^T) g, with C[i, k] = 1 when coordinates i, k share a slot
    values = []
    for placement in itertools.product(range(m), repeat=nb):
        slots = (np.asarray(placement)[coords // z] + coords % z) % m
        weighted = np.where(slots[:, None] == slots[None, :], xy, 0.0)
        values.append(np.einsum("si,ik,sk->s", signs, weighted, signs))
    values = np.concatenate(values)
    mean = math.fsum(values) / values.size
    dev = values - mean
    return mean, math.fsum(dev * dev) / values.size


# -- embedding structure ---------------------------------------------------


def same_block(a_offset: int, b_offset: int, D: int, z: int) -> bool:
    """True when both embeddings sit inside one block."""
    blocks = {a_offset // z, (a_offset + D - 1) // z, b_offset // z, (b_offset + D - 1) // z}
    return len(blocks) == 1


def expected_pair_factor(a_offset: int, b_offset: int, D: int, m: int, z: int) -> float:
    """Multiplicative bias of the reconstructed inner product."""
    return 1.0 if same_block(a_offset, b_offset, D, z) else 1.0 + 1.0 / m


def pair_variance_scale(theta, a_offset: int, b_offset: int, D: int, m: int) -> float:
    """D ||theta||^4 / m^2 + |sum_{i != j} a_i b_i a_j b_j| / m^2."""
    theta = np.asarray(theta, dtype=np.float64)
    ab = theta[a_offset:a_offset + D] * theta[b_offset:b_offset + D]
    cross = ab.sum() ** 2 - ab @ ab
    return (D * float(theta @ theta) ** 2 + abs(cross)) / m**2


def embedding_pair_samples(theta, a_offset: int, b_offset: int, D: int, m: int, z: int, trials: int, seed: int = 0, backend: str = "oracle", n_jobs: int = 1, chunk: int = 4096) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.size
    for off in (a_offset, b_offset):
        if off < 0 or off + D > n:
            raise ValueError(f"embedding at offset {off} with D={D} does not fit in n={n}")
    if a_offset < b_offset + D and b_offset < a_offset + D:
        raise ValueError("embeddings overlap")
    plan = SketchPlan(n, m, z, embed_dim=D, seed=seed)
    ia = np.arange(a_offset, a_offset + D)
    ib = np.arange(b_offset, b_offset + D)

    def work(lo, size):
        starts, signs = draw_hashes(plan, size, lo, backend)
        slots, (proj,) = _projections(plan, starts, signs, theta)
        rows = np.arange(size)[:, None]
        rec_a = signs[:, ia] * proj[rows, slots[:, ia]]
        rec_b = signs[:, ib] * proj[rows, slots[:, ib]]
        return np.einsum("td,td->t", rec_a, rec_b)

    return _run_chunks(trials, chunk, work, n_jobs)


def embedding_pair_moments(theta, a_offset: int, b_offset: int, D: int, m: int, z: int, trials: int, seed: int = 0, backend: str = "oracle", n_jobs: int = 1) -> MomentReport:
    """Moments of <rec_a, rec_b> where each embedding is read back from the sketch."""
    if trials < 2:
        raise ValueError("need at least 2 trials")
    return _moments(embedding_pair_samples(theta, a_offset, b_offset, D, m, z, trials, seed, backend, n_jobs))


# -- estimator wrapper -----------------------------------------------------


class RobeZProjection(TransformerMixin, BaseEstimator):
    """Project feature vectors into ``n_components`` slots with block hashing.

    Works like sklearn's random projections: ``fit`` only draws the hash
    functions from ``random_state``; ``transform`` returns ``X @ S``.
    A trailing partial block is allowed when ``block_size`` does not divide
    ``n_features``.

    Parameters
    ----------
    n_components : int
        Sketch size ``m``.
    block_size : int
        Number of consecutive features hashed together (``z``).
    backend : {"oracle", "universal"}
    random_state : int
    """

    def __init__(self, n_components=64, block_size=1, backend="oracle", random_state=0):
        self.n_components = n_components
        self.block_size = block_size
        self.backend = backend
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, accept_sparse="csr")
        n = X.shape[1]
        z = self.block_size
        if not 1 <= z <= self.n_components:
            raise ValueError("block_size must be in [1, n_components]")
        padded = -(-n // z) * z
        plan = SketchPlan(padded, self.n_components, z, seed=int(self.random_state))
        draw = draw_hash(plan, 0, self.backend)
        slots = draw.slots(plan)[:n]
        self.n_features_in_ = n
        self.block_starts_ = draw.starts
        self.components_ = sp.csr_matrix(
            (draw.signs[:n].astype(np.float64), (np.arange(n), slots)), shape=(n, self.n_components)
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, accept_sparse="csr")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = X @ self.components_
        return out.toarray() if sp.issparse(out) and not sp.issparse(X) else out
