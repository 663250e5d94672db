"""ROBE-Z embedding store.

Every embedding table shares one circular array of ``m`` weights. Element
``i`` of the embedding of token ``x`` in table ``e`` lives at::

    slot(e, x, i) = (h(e, x, i // z) + i % z) mod m

so each run of ``z`` consecutive elements (a block) occupies consecutive
slots, wrapping from the end of the array back to slot 0.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .hashing import (
    RANDOM_ORACLE,
    UNIVERSAL,
    HashParams,
    oracle_sign,
    oracle_sign_array,
    random_oracle_hash,
    random_oracle_hash_array,
    sample_hash_params,
    sign_hash,
    sign_hash_array,
    uhash3,
    uhash3_array,
)


@dataclass(frozen=True)
class TableSpec:
    table_id: int
    vocab_size: int
    dim: int

    def __post_init__(self):
        if self.table_id < 0:
            raise ValueError("table_id must be >= 0")
        if self.vocab_size < 1 or self.dim < 1:
            raise ValueError("vocab_size and dim must be positive")


class Segment(NamedTuple):
    start: int
    len: int


@dataclass(frozen=True)
class RobePlan:
    """Allocation scheme: memory size, block size, tables and hash functions."""

    m: int
    z: int
    tables: tuple[TableSpec, ...]
    index_hash: HashParams
    sign_hash: HashParams | None = None
    backend: str = UNIVERSAL
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be positive")
        if not 1 <= self.z <= self.m:
            raise ValueError(f"block size z={self.z} must satisfy 1 <= z <= m={self.m}")
        if self.backend not in (UNIVERSAL, RANDOM_ORACLE):
            raise ValueError(f"unknown hash backend {self.backend!r}")
        if self.backend == UNIVERSAL and self.index_hash.range != self.m:
            raise ValueError("index hash range must equal m")
        if self.backend == RANDOM_ORACLE and self.index_hash.seed is None:
            raise ValueError("random_oracle backend needs a seeded index hash")
        if self.sign_hash is not None and self.sign_hash.range != 2:
            raise ValueError("sign hash must have range 2")
        tables = tuple(self.tables)
        ids = [t.table_id for t in tables]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate table_id in plan")
        object.__setattr__(self, "tables", tables)
        object.__setattr__(self, "_by_id", {t.table_id: t for t in tables})

    @property
    def use_sign(self) -> bool:
        return self.sign_hash is not None

    @property
    def total_params(self) -> int:
        return sum(t.vocab_size * t.dim for t in self.tables)

    @property
    def compression_ratio(self) -> float:
        return self.total_params / self.m

    @property
    def max_dim(self) -> int:
        return max((t.dim for t in self.tables), default=1)

    def table(self, e: int) -> TableSpec:
        try:
            return self._by_id[e]
        except KeyError:
            raise IndexError(f"unknown table id {e}") from None

    def _check(self, e: int, x: int) -> TableSpec:
        spec = self.table(e)
        if not 0 <= x < spec.vocab_size:
            raise IndexError(f"token {x} out of range for table {e} (vocab {spec.vocab_size})")
        return spec

    def block_start(self, e: int, x: int, block: int) -> int:
        if self.backend == RANDOM_ORACLE:
            return random_oracle_hash(self.index_hash.seed, e, x, block, self.m)
        return uhash3(self.index_hash, e, x, block)

    def sign(self, e: int, x: int, i: int) -> int:
        if self.sign_hash is None:
            return 1
        if self.backend == RANDOM_ORACLE:
            return oracle_sign(self.sign_hash.seed, e, x, i)
        return sign_hash(self.sign_hash, e, x, i)

    # vectorized forms, used by the trainer and benchmarks

    def slot_matrix(self, e: int, xs) -> np.ndarray:
        """Slots for every (x, i) as an int64 array of shape (len(xs), dim)."""
        spec = self.table(e)
        xs = np.asarray(xs, dtype=np.int64)
        if xs.size and (xs.min() < 0 or xs.max() >= spec.vocab_size):
            raise IndexError(f"token out of range for table {e}")
        i = np.arange(spec.dim, dtype=np.int64)
        blocks = i // self.z
        n_blocks = int(blocks[-1]) + 1
        xcol = xs[:, None]
        bidx = np.arange(n_blocks, dtype=np.int64)[None, :]
        if self.backend == RANDOM_ORACLE:
            starts = random_oracle_hash_array(self.index_hash.seed, e, xcol, bidx, self.m)
        else:
            starts = uhash3_array(self.index_hash, e, xcol, bidx)
        return (starts[:, blocks] + i % self.z) % self.m

    def sign_matrix(self, e: int, xs) -> np.ndarray:
        spec = self.table(e)
        xs = np.asarray(xs, dtype=np.int64)
        if self.sign_hash is None:
            return np.ones((xs.size, spec.dim))
        i = np.arange(spec.dim, dtype=np.int64)[None, :]
        if self.backend == RANDOM_ORACLE:
            s = oracle_sign_array(self.sign_hash.seed, e, xs[:, None], i)
        else:
            s = sign_hash_array(self.sign_hash, e, xs[:, None], i)
        return s.astype(np.float64)


def make_plan(
    m: int,
    z: int,
    tables: Iterable[TableSpec | tuple[int, int]],
    seed: int = 0,
    use_sign: bool = False,
    backend: str = UNIVERSAL,
) -> RobePlan:
    """Build a plan with hash functions drawn from ``seed``.

    ``tables`` may be TableSpec objects or (vocab_size, dim) pairs, in which
    case table ids are assigned 0, 1, 2, ...
    """
    specs = [t if isinstance(t, TableSpec) else TableSpec(k, *t) for k, t in enumerate(tables)]
    index_hash = sample_hash_params(seed, range=m)
    sign = sample_hash_params(seed ^ 0x5DEECE66D, range=2) if use_sign else None
    return RobePlan(m, z, tuple(specs), index_hash, sign, backend)


def injective_plan(n_tables: int, vocab_size: int, dim: int, z: int | None = None) -> RobePlan:
    """Collision-free plan: slot(e, x, i) = (e*V + x)*D + i, with m = T*V*D.

    The array is then a flat copy of ``n_tables`` dense (V, D) tables laid
    out back to back, which makes ROBE training identical to dense training.
    """
    z = dim if z is None else z
    if dim % z:
        raise ValueError("injective plan needs z | dim")
    m = n_tables * vocab_size * dim
    h = HashParams(a=vocab_size * dim, b=dim, c=z, d=0, range=m) if m > 1 else HashParams(1, 1, 1, 0, range=1)
    tables = tuple(TableSpec(e, vocab_size, dim) for e in range(n_tables))
    return RobePlan(m, z, tables, h)


def index_of(plan: RobePlan, e: int, x: int, i: int) -> int:
    spec = plan._check(e, x)
    if not 0 <= i < spec.dim:
        raise IndexError(f"dim index {i} out of range for table {e} (dim {spec.dim})")
    return (plan.block_start(e, x, i // plan.z) + i % plan.z) % plan.m


def block_segments(plan: RobePlan, e: int, x: int) -> list[Segment]:
    """Contiguous runs of the array holding the embedding, in element order.

    A block that runs past the end of the array is split into a tail segment
    and a head segment starting at slot 0.
    """
    spec = plan._check(e, x)
    segments = []
    for block, lo in enumerate(range(0, spec.dim, plan.z)):
        length = min(plan.z, spec.dim - lo)
        start = plan.block_start(e, x, block)
        tail = plan.m - start
        if length <= tail:
            segments.append(Segment(start, length))
        else:
            segments.append(Segment(start, tail))
            segments.append(Segment(0, length - tail))
    return segments


class RobeArray:
    """The learned weight array paired with its plan."""

    def __init__(self, plan: RobePlan, weights=None):
        self.plan = plan
        if weights is None:
            weights = np.zeros(plan.m)
        weights = np.array(weights, dtype=np.float64)
        if weights.shape != (plan.m,):
            raise ValueError(f"weights must have shape ({plan.m},), got {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        self.weights = weights

    @classmethod
    def initialize(cls, plan: RobePlan, seed: int = 0) -> "RobeArray":
        """Uniform init in +-1/sqrt(max table dim)."""
        bound = 1.0 / np.sqrt(plan.max_dim)
        rng = np.random.default_rng(seed)
        return cls(plan, rng.uniform(-bound, bound, plan.m))

    def lookup(self, e: int, x: int) -> np.ndarray:
        return lookup_embedding(self, e, x)

    def save(self, path) -> None:
        from .serialization import save_robe_array

        save_robe_array(self, path)

    @classmethod
    def load(cls, path) -> "RobeArray":
        from .serialization import load_robe_array

        return load_robe_array(path)

    def __repr__(self):
        return f"RobeArray(m={self.plan.m}, z={self.plan.z}, tables={len(self.plan.tables)})"


def _signs(plan: RobePlan, e: int, x: int, dim: int) -> np.ndarray:
    return np.array([plan.sign(e, x, i) for i in range(dim)], dtype=np.float64)


def lookup_embedding(array: RobeArray, e: int, x: int) -> np.ndarray:
    plan = array.plan
    spec = plan._check(e, x)
    parts = [array.weights[s.start:s.start + s.len] for s in block_segments(plan, e, x)]
    out = np.concatenate(parts)
    if plan.use_sign:
        out *= _signs(plan, e, x, spec.dim)
    return out


def accumulate_gradient(grad_buffer: np.ndarray, plan: RobePlan, e: int, x: int, upstream) -> np.ndarray:
    """Scatter-add ``upstream`` (signed) into ``grad_buffer`` in place."""
    spec = plan._check(e, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (spec.dim,):
        raise ValueError(f"upstream must have length {spec.dim}, got {upstream.shape}")
    if grad_buffer.shape != (plan.m,):
        raise ValueError(f"grad_buffer must have length {plan.m}, got {grad_buffer.shape}")
    if plan.use_sign:
        upstream = upstream * _signs(plan, e, x, spec.dim)
    pos = 0
    for seg in block_segments(plan, e, x):
        grad_buffer[seg.start:seg.start + seg.len] += upstream[pos:pos + seg.len]
        pos += seg.len
    return grad_buffer


def lookup_batch(array: RobeArray, queries: Sequence[tuple[int, int]]) -> list[np.ndarray]:
    out = []
    for k, (e, x) in enumerate(queries):
        try:
            out.append(lookup_embedding(array, e, x))
        except IndexError as exc:
            raise IndexError(f"query {k}: {exc}") from None
    return out


def _accumulate_serial(buf, plan, updates):
    for k, (e, x, upstream) in enumerate(updates):
        try:
            accumulate_gradient(buf, plan, e, x, upstream)
        except (IndexError, ValueError) as exc:
            raise type(exc)(f"update {k}: {exc}") from None
    return buf


def accumulate_batch(
    grad_buffer: np.ndarray,
    plan: RobePlan,
    updates: Sequence[tuple[int, int, Sequence[float]]],
    n_jobs: int = 1,
) -> np.ndarray:
    """Batched :func:`accumulate_gradient`.

    With ``n_jobs > 1`` the updates are split into ``n_jobs`` contiguous
    chunks, each scattered into a private buffer, and the partial buffers
    are added into ``grad_buffer`` in chunk order. The result depends only
    on ``n_jobs``, never on thread scheduling.
    """
    updates = list(updates)
    if n_jobs <= 1 or len(updates) < 2:
        return _accumulate_serial(grad_buffer, plan, updates)
    chunks = np.array_split(np.arange(len(updates)), min(n_jobs, len(updates)))

    def work(idx):
        return _accumulate_serial(np.zeros(plan.m), plan, [updates[k] for k in idx])

    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        partials = list(pool.map(work, chunks))
    for part in partials:
        grad_buffer += part
    return grad_buffer


def scatter_slots(grad_buffer: np.ndarray, slots: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Vectorized scatter-add of ``values`` at ``slots`` (same shape), in input order."""
    grad_buffer += np.bincount(slots.ravel(), weights=values.ravel(), minlength=grad_buffer.size)
    return grad_buffer
