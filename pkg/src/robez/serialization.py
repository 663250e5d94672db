"""Binary checkpoint format for :class:`RobeArray`.

All integers little-endian::

    offset  type       field
    0       4 bytes    magic b"ROBE"
    4       u32        version (1)
    8       u64        m
    16      u64        z
    24      u32        table count T
    28      T * (u64 vocab_size, u32 dim)
    ...     u64        index hash seed
    ...     u64        sign hash seed (0 when signs are off)
    ...     u32        flags
    [if FLAG_EXPLICIT_COEFFS]
            2 * 5 u64  (a, b, c, d, p) for the index hash, then the sign hash
                       (zeros when signs are off)
    ...     m * f64    weights

Flags: bit 0 sign hash enabled, bit 1 random-oracle backend, bit 2 explicit
hash coefficients follow, bits 3/4 the index/sign hash has no seed.
Plans drawn with :func:`make_plan` only need the seeds; hand-built plans
carry their coefficients.
Table ids are stored implicitly as 0..T-1 in file order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .hashing import MERSENNE_31, RANDOM_ORACLE, UNIVERSAL, HashParams, sample_hash_params
from .robe import RobeArray, RobePlan, TableSpec

MAGIC = b"ROBE"
VERSION = 1
FLAG_SIGN = 1
FLAG_ORACLE = 2
FLAG_EXPLICIT_COEFFS = 4
FLAG_INDEX_UNSEEDED = 8
FLAG_SIGN_UNSEEDED = 16


class FormatError(ValueError):
    pass


def _seeded(h: HashParams | None, m_range: int) -> bool:
    if h is None:
        return True
    return h.seed is not None and h.p == MERSENNE_31 and sample_hash_params(h.seed, range=m_range) == h


def encode(array: RobeArray) -> bytes:
    plan = array.plan
    ids = [t.table_id for t in plan.tables]
    if ids != list(range(len(ids))):
        raise FormatError("table ids must be 0..T-1 in order to serialize")
    flags = 0
    if plan.use_sign:
        flags |= FLAG_SIGN
    if plan.backend == RANDOM_ORACLE:
        flags |= FLAG_ORACLE
    explicit = not (_seeded(plan.index_hash, plan.m) and _seeded(plan.sign_hash, 2))
    if explicit:
        flags |= FLAG_EXPLICIT_COEFFS
    if plan.index_hash.seed is None:
        flags |= FLAG_INDEX_UNSEEDED
    if plan.sign_hash is not None and plan.sign_hash.seed is None:
        flags |= FLAG_SIGN_UNSEEDED
    out = [MAGIC, struct.pack("<IQQI", VERSION, plan.m, plan.z, len(plan.tables))]
    for t in plan.tables:
        out.append(struct.pack("<QI", t.vocab_size, t.dim))
    index_seed = plan.index_hash.seed or 0
    sign_seed = plan.sign_hash.seed or 0 if plan.sign_hash else 0
    out.append(struct.pack("<QQI", index_seed, sign_seed, flags))
    if explicit:
        for h in (plan.index_hash, plan.sign_hash):
            vals = (h.a, h.b, h.c, h.d, h.p) if h else (0,) * 5
            out.append(struct.pack("<5Q", *vals))
    out.append(array.weights.astype("<f8").tobytes())
    return b"".join(out)


def decode(buf: bytes) -> RobeArray:
    view = memoryview(buf)
    if bytes(view[:4]) != MAGIC:
        raise FormatError("bad magic, not a ROBE file")
    version, m, z, n_tables = struct.unpack_from("<IQQI", view, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    pos = 28
    tables = []
    for k in range(n_tables):
        vocab, dim = struct.unpack_from("<QI", view, pos)
        tables.append(TableSpec(k, vocab, dim))
        pos += 12
    index_seed, sign_seed, flags = struct.unpack_from("<QQI", view, pos)
    pos += 20
    use_sign = bool(flags & FLAG_SIGN)
    if flags & FLAG_EXPLICIT_COEFFS:
        coeffs = []
        for _ in range(2):
            coeffs.append(struct.unpack_from("<5Q", view, pos))
            pos += 40
        a, b, c, d, p = coeffs[0]
        index_hash = HashParams(a, b, c, d, p=p, range=m, seed=None if flags & FLAG_INDEX_UNSEEDED else index_seed)
        sign = None
        if use_sign:
            a, b, c, d, p = coeffs[1]
            sign = HashParams(a, b, c, d, p=p, range=2, seed=None if flags & FLAG_SIGN_UNSEEDED else sign_seed)
    else:
        index_hash = sample_hash_params(index_seed, range=m)
        sign = sample_hash_params(sign_seed, range=2) if use_sign else None
    backend = RANDOM_ORACLE if flags & FLAG_ORACLE else UNIVERSAL
    plan = RobePlan(m, z, tuple(tables), index_hash, sign, backend)
    expected = pos + 8 * m
    if len(buf) != expected:
        raise FormatError(f"file length {len(buf)} does not match header (expected {expected})")
    weights = np.frombuffer(view[pos:], dtype="<f8").astype(np.float64)
    return RobeArray(plan, weights)


def save_robe_array(array: RobeArray, path) -> None:
    Path(path).write_bytes(encode(array))


def load_robe_array(path) -> RobeArray:
    return decode(Path(path).read_bytes())
