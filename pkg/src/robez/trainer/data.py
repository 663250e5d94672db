"""CTR-style datasets: a binary label, dense features and categorical tokens."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


def _as_rows(a, n: int, dtype) -> np.ndarray:
    a = np.asarray(a, dtype=dtype)
    if a.ndim != 2:
        a = a.reshape(n, -1) if n else a.reshape(0, 0)
    if a.shape[0] != n:
        raise DatasetError(f"expected {n} rows, got {a.shape[0]}")
    return a


@dataclass
class Dataset:
    labels: np.ndarray  # (n,) in {0, 1}
    dense: np.ndarray  # (n, n_dense) float64
    cats: np.ndarray  # (n, n_cat) int64
    vocab_sizes: tuple[int, ...]
    name: str = "dataset"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        n = self.labels.size
        self.dense = _as_rows(self.dense, n, np.float64)
        self.cats = _as_rows(self.cats, n, np.int64)
        self.vocab_sizes = tuple(int(v) for v in self.vocab_sizes)
        if self.cats.shape[1] != len(self.vocab_sizes):
            raise DatasetError(f"{self.cats.shape[1]} categorical columns but {len(self.vocab_sizes)} vocab sizes")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise DatasetError("labels must be 0 or 1")
        if n and ((self.cats < 0).any() or (self.cats >= np.array(self.vocab_sizes)).any()):
            raise DatasetError("categorical token outside its vocabulary")

    def __len__(self):
        return self.labels.size

    @property
    def n_dense(self) -> int:
        return self.dense.shape[1]

    @property
    def n_cat(self) -> int:
        return self.cats.shape[1]

    @property
    def rows(self):
        for k in range(len(self)):
            yield int(self.labels[k]), self.dense[k], self.cats[k]

    @property
    def X(self) -> np.ndarray:
        """Dense columns followed by categorical columns, as estimators expect."""
        return np.hstack([self.dense, self.cats.astype(np.float64)])

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.labels[idx], self.dense[idx], self.cats[idx], self.vocab_sizes, name or self.name)

    def split(self, train_fraction: float = 0.9, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Seeded shuffle, then cut at ``train_fraction``."""
        perm = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(train_fraction * len(self)))
        return self.subset(perm[:cut], f"{self.name}/train"), self.subset(perm[cut:], f"{self.name}/eval")


_DENSE = re.compile(r"d(\d+)$")
_CAT = re.compile(r"c(\d+)$")


def _parse_header(header: list[str]) -> tuple[int, int]:
    if not header or header[0].strip() != "label":
        raise DatasetError("header must start with 'label'")
    names = [h.strip() for h in header[1:]]
    n_dense = 0
    while n_dense < len(names) and _DENSE.match(names[n_dense]):
        n_dense += 1
    n_cat = len(names) - n_dense
    expected = [f"d{k}" for k in range(n_dense)] + [f"c{k}" for k in range(n_cat)]
    if names != expected:
        raise DatasetError(f"malformed header {header!r}; expected label,{','.join(expected)}")
    return n_dense, n_cat


def load_csv_dataset(path, vocab_sizes=None, name: str | None = None) -> Dataset:
    """Read ``label,d0..dK,c0..cJ`` rows.

    Vocabulary sizes come from ``vocab_sizes`` when given, else max token + 1.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file, no header")
        n_dense, n_cat = _parse_header(header)
        labels, dense, cats = [], [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 1 + n_dense + n_cat:
                raise DatasetError(f"{path}:{line}: expected {1 + n_dense + n_cat} fields, got {len(row)}")
            try:
                label = int(row[0])
                d = [float(v) for v in row[1:1 + n_dense]]
                c = [int(v) for v in row[1 + n_dense:]]
            except ValueError as exc:
                raise DatasetError(f"{path}:{line}: {exc}") from None
            if label not in (0, 1):
                raise DatasetError(f"{path}:{line}: label must be 0 or 1, got {label}")
            for k, tok in enumerate(c):
                if tok < 0:
                    raise DatasetError(f"{path}:{line}: column c{k} has negative token {tok}")
                if vocab_sizes is not None and tok >= vocab_sizes[k]:
                    raise DatasetError(f"{path}:{line}: column c{k} token {tok} >= vocab size {vocab_sizes[k]}")
            labels.append(label)
            dense.append(d)
            cats.append(c)
    if vocab_sizes is None:
        vocab_sizes = [max((r[k] for r in cats), default=0) + 1 for k in range(n_cat)]
    elif len(vocab_sizes) != n_cat:
        raise DatasetError(f"{len(vocab_sizes)} vocab sizes given for {n_cat} categorical columns")
    n = len(labels)
    return Dataset(
        np.array(labels, dtype=np.int64),
        np.array(dense, dtype=np.float64).reshape(n, n_dense),
        np.array(cats, dtype=np.int64).reshape(n, n_cat),
        vocab_sizes,
        name or path.stem,
    )


def save_csv_dataset(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"d{k}" for k in range(ds.n_dense)] + [f"c{k}" for k in range(ds.n_cat)])
        for label, dense, cats in ds.rows:
            w.writerow([label, *(repr(float(v)) for v in dense), *(int(v) for v in cats)])


def sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(t, dtype=np.float64)))


def synth_dataset(
    n_rows: int,
    n_cat_features: int,
    vocab_size: int,
    embed_dim_truth: int,
    noise: float,
    seed: int = 0,
    n_dense: int = 0,
    signal: float = 4.0,
    zipf_exponent: float = 0.0,
) -> Dataset:
    """Planted factorization-machine data.

    Each token gets a hidden embedding; the clean logit is the sum of
    pairwise dot products across features (plus a linear dense term),
    scaled so its standard deviation is about ``signal``. Labels are
    Bernoulli(sigmoid(logit)); with probability ``noise`` a label is
    replaced by a fair coin flip, so ``noise -> 1`` destroys the signal.

    Token ``k`` of every feature is drawn with probability proportional to
    ``(k + 1) ** -zipf_exponent``; 0 gives uniform tokens, around 1 gives the
    heavy-headed frequencies typical of click logs.
    """
    if min(n_rows, n_cat_features, vocab_size, embed_dim_truth) < 1:
        raise ValueError("sizes must be positive")
    if not 0 <= noise < 1:
        raise ValueError("noise must be in [0, 1)")
    rng = np.random.default_rng(seed)
    n_pairs = max(n_cat_features * (n_cat_features - 1) // 2, 1)
    scale = np.sqrt(signal / np.sqrt(n_pairs * embed_dim_truth))
    truth = rng.normal(0.0, scale, size=(n_cat_features, vocab_size, embed_dim_truth))
    dense_w = rng.normal(0.0, 1.0, size=n_dense)
    freq = (np.arange(vocab_size) + 1.0) ** -zipf_exponent
    cats = rng.choice(vocab_size, size=(n_rows, n_cat_features), p=freq / freq.sum())
    dense = rng.normal(0.0, 1.0, size=(n_rows, n_dense))
    emb = truth[np.arange(n_cat_features)[None, :], cats]  # (n, F, D)
    total = emb.sum(axis=1)
    pairwise = 0.5 * (np.einsum("nd,nd->n", total, total) - np.einsum("nfd,nfd->n", emb, emb))
    logit = pairwise + dense @ dense_w
    labels = (rng.random(n_rows) < sigmoid(logit)).astype(np.int64)
    flip = rng.random(n_rows) < noise
    labels[flip] = rng.integers(0, 2, size=int(flip.sum()))
    return Dataset(labels, dense, cats, (vocab_size,) * n_cat_features, f"synth-{seed}")
