"""Factorization-machine click model with full or ROBE-Z embedding storage."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..robe import RobeArray, RobePlan, TableSpec, make_plan, scatter_slots
from .data import Dataset, sigmoid
from .metrics import log_loss, roc_auc

log = logging.getLogger(__name__)

FULL = "full"
ROBE = "robe"
PRECOMPUTE_LIMIT = 5_000_000


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainReport:
    train_logloss: list[float] = field(default_factory=list)
    eval_logloss: list[float] = field(default_factory=list)
    eval_auc: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    lookups_per_second: list[float] = field(default_factory=list)
    compression_ratio: float = 1.0
    backend: str = FULL
    config: dict = field(default_factory=dict)

    @property
    def final_auc(self) -> float | None:
        return self.eval_auc[-1] if self.eval_auc else None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class _FullStore:
    """One dense (vocab, D) table per categorical feature."""

    def __init__(self, vocab_sizes, dim, rng):
        bound = 1.0 / np.sqrt(dim)
        flat = rng.uniform(-bound, bound, sum(vocab_sizes) * dim)
        offsets = np.cumsum([0, *(v * dim for v in vocab_sizes)])
        self.tables = [flat[lo:hi].reshape(-1, dim).copy() for lo, hi in zip(offsets[:-1], offsets[1:])]

    def gather(self, cats):
        return np.stack([t[cats[:, f]] for f, t in enumerate(self.tables)], axis=1)

    def params(self):
        return self.tables

    def grad(self, cats, grad_emb):
        out = []
        for f, t in enumerate(self.tables):
            g = np.zeros_like(t)
            np.add.at(g, cats[:, f], grad_emb[:, f])
            out.append(g)
        return out

    def step(self, cats, grad_emb, lr):
        for t, g in zip(self.tables, self.grad(cats, grad_emb)):
            t -= lr * g


class _RobeStore:
    """All features share one ROBE array; feature f is table id f."""

    def __init__(self, plan: RobePlan, rng):
        bound = 1.0 / np.sqrt(plan.max_dim)
        self.array = RobeArray(plan, rng.uniform(-bound, bound, plan.m))
        self.plan = plan
        self._slots = self._signs = None
        if sum(t.vocab_size * t.dim for t in plan.tables) <= PRECOMPUTE_LIMIT:
            self._slots = [plan.slot_matrix(t.table_id, np.arange(t.vocab_size)) for t in plan.tables]
            self._signs = [plan.sign_matrix(t.table_id, np.arange(t.vocab_size)) for t in plan.tables]

    def _maps(self, cats, f):
        if self._slots is not None:
            return self._slots[f][cats[:, f]], self._signs[f][cats[:, f]]
        e = self.plan.tables[f].table_id
        return self.plan.slot_matrix(e, cats[:, f]), self.plan.sign_matrix(e, cats[:, f])

    def gather(self, cats):
        w = self.array.weights
        out = []
        for f in range(cats.shape[1]):
            slots, signs = self._maps(cats, f)
            out.append(w[slots] * signs)
        return np.stack(out, axis=1)

    def params(self):
        return [self.array.weights]

    def grad(self, cats, grad_emb):
        g = np.zeros(self.plan.m)
        for f in range(cats.shape[1]):
            slots, signs = self._maps(cats, f)
            scatter_slots(g, slots, signs * grad_emb[:, f])
        return [g]

    def step(self, cats, grad_emb, lr):
        self.array.weights -= lr * self.grad(cats, grad_emb)[0]


def fm_logits(dense, emb, coef, intercept):
    """Linear dense term plus the sum of pairwise dot products across features."""
    total = emb.sum(axis=1)
    pairwise = 0.5 * (np.einsum("nd,nd->n", total, total) - np.einsum("nfd,nfd->n", emb, emb))
    return dense @ coef + intercept + pairwise


class FMClassifier(ClassifierMixin, BaseEstimator):
    """Second-order factorization machine trained with minibatch SGD.

    ``X`` holds ``n_dense`` real columns followed by one integer-valued
    column per categorical feature. Embeddings live either in dense
    per-feature tables (``backend="full"``) or in one shared ROBE-Z array
    of ``m`` weights (``backend="robe"``), with block size ``z`` (defaults
    to ``embed_dim``). Pass ``plan`` to use a specific allocation.
    """

    def __init__(
        self,
        embed_dim=8,
        backend=FULL,
        m=None,
        z=None,
        plan=None,
        learning_rate=0.1,
        epochs=5,
        batch_size=256,
        use_sign_hash=False,
        n_dense=0,
        vocab_sizes=None,
        seed=0,
        record_steps=False,
    ):
        self.embed_dim = embed_dim
        self.backend = backend
        self.m = m
        self.z = z
        self.plan = plan
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.use_sign_hash = use_sign_hash
        self.n_dense = n_dense
        self.vocab_sizes = vocab_sizes
        self.seed = seed
        self.record_steps = record_steps

    # -- setup

    def _validate_params(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.embed_dim < 1:
            raise ValueError("epochs, batch_size and embed_dim must be >= 1")
        if self.backend not in (FULL, ROBE):
            raise ValueError(f"backend must be {FULL!r} or {ROBE!r}")

    def _split(self, X):
        dense = X[:, :self.n_dense]
        cats_f = X[:, self.n_dense:]
        cats = cats_f.astype(np.int64)
        if not np.array_equal(cats, cats_f):
            raise ValueError("categorical columns must hold integer token ids")
        if cats.shape[1] != len(self.vocab_sizes_):
            raise ValueError(f"expected {len(self.vocab_sizes_)} categorical columns, got {cats.shape[1]}")
        if cats.size and ((cats < 0).any() or (cats >= np.asarray(self.vocab_sizes_)).any()):
            raise ValueError("categorical token outside its vocabulary")
        return dense, cats

    def _make_plan(self) -> RobePlan:
        if self.plan is not None:
            plan = self.plan
            for f, v in enumerate(self.vocab_sizes_):
                t = plan.table(f)
                if t.vocab_size < v or t.dim != self.embed_dim:
                    raise ValueError(f"plan table {f} does not fit feature {f}")
            return plan
        if self.m is None:
            raise ValueError("robe backend needs m or plan")
        tables = [TableSpec(f, v, self.embed_dim) for f, v in enumerate(self.vocab_sizes_)]
        z = self.embed_dim if self.z is None else self.z
        return make_plan(self.m, z, tables, seed=self.seed, use_sign=self.use_sign_hash)

    def _init_params(self, n_dense):
        rng = np.random.default_rng(self.seed)
        if self.backend == FULL:
            self.store_ = _FullStore(self.vocab_sizes_, self.embed_dim, rng)
            self.compression_ratio_ = 1.0
        else:
            self.store_ = _RobeStore(self._make_plan(), rng)
            total = sum(self.vocab_sizes_) * self.embed_dim
            self.compression_ratio_ = total / self.store_.plan.m
        self.coef_ = np.zeros(n_dense)
        self.intercept_ = 0.0

    # -- core passes

    def _logits(self, dense, cats):
        return fm_logits(dense, self.store_.gather(cats), self.coef_, self.intercept_)

    def _batch_grads(self, dense, cats, y):
        emb = self.store_.gather(cats)
        with np.errstate(over="ignore", invalid="ignore"):
            p = sigmoid(fm_logits(dense, emb, self.coef_, self.intercept_))
        loss = log_loss(y, p)
        g = (p - y) / y.size
        grad_emb = g[:, None, None] * (emb.sum(axis=1, keepdims=True) - emb)
        return loss, grad_emb, dense.T @ g, g.sum()

    def _sgd_step(self, dense, cats, y, lr):
        loss, grad_emb, grad_coef, grad_b = self._batch_grads(dense, cats, y)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite batch loss {loss}")
        self.store_.step(cats, grad_emb, lr)
        self.coef_ -= lr * grad_coef
        self.intercept_ -= lr * grad_b
        return loss

    def loss_and_grad(self, X, y):
        """Mean logloss on ``(X, y)`` and its gradient w.r.t. every parameter.

        The gradient list matches :meth:`parameters` (embedding storage,
        then ``coef_``) with one extra trailing entry for the intercept.
        """
        check_is_fitted(self, "store_")
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        dense, cats = self._split(X)
        loss, grad_emb, grad_coef, grad_b = self._batch_grads(dense, cats, y)
        return loss, [*self.store_.grad(cats, grad_emb), grad_coef, np.array([grad_b])]

    def parameters(self) -> list[np.ndarray]:
        """Live parameter arrays (mutating them changes the model), intercept excluded."""
        check_is_fitted(self, "store_")
        return [*self.store_.params(), self.coef_]

    def fit(self, X, y, eval_set=None):
        """Train for ``epochs`` passes; ``eval_set=(X_eval, y_eval)`` is scored after each epoch."""
        self._validate_params()
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if not np.isin(self.classes_, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        y = y.astype(np.float64)
        n_cat = X.shape[1] - self.n_dense
        if n_cat < 1:
            raise ValueError("need at least one categorical column")
        if self.vocab_sizes is None:
            self.vocab_sizes_ = tuple(int(v) + 1 for v in X[:, self.n_dense:].max(axis=0))
        else:
            self.vocab_sizes_ = tuple(int(v) for v in self.vocab_sizes)
        self.n_features_in_ = X.shape[1]
        dense, cats = self._split(X)
        self._init_params(dense.shape[1])
        shuffle_rng = np.random.default_rng([self.seed, 1])
        report = TrainReport(compression_ratio=self.compression_ratio_, backend=self.backend, config=self.get_params_json())
        self.step_losses_ = []
        n = y.size
        for epoch in range(self.epochs):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(n)
            losses, weights = [], []
            for lo in range(0, n, self.batch_size):
                idx = order[lo:lo + self.batch_size]
                try:
                    loss = self._sgd_step(dense[idx], cats[idx], y[idx], self.learning_rate)
                except TrainingDiverged as exc:
                    raise TrainingDiverged(f"epoch {epoch}, rows {lo}..{lo + idx.size}: {exc}") from None
                losses.append(loss)
                weights.append(idx.size)
                if self.record_steps:
                    self.step_losses_.append(loss)
            elapsed = time.perf_counter() - t0
            report.train_logloss.append(float(np.average(losses, weights=weights)) if losses else float("nan"))
            report.epoch_seconds.append(elapsed)
            report.lookups_per_second.append(n * n_cat / elapsed if elapsed > 0 else float("inf"))
            if eval_set is not None:
                ll, auc = self._score_split(*eval_set)
                report.eval_logloss.append(ll)
                report.eval_auc.append(auc)
            log.info("epoch %d train_logloss=%.5f %s", epoch, report.train_logloss[-1],
                     f"eval_auc={report.eval_auc[-1]:.4f}" if report.eval_auc else "")
        self.report_ = report
        return self

    def _score_split(self, X, y):
        p = self.predict_proba(X)[:, 1]
        return log_loss(y, p), roc_auc(y, p)

    def get_params_json(self) -> dict:
        params = self.get_params()
        plan = params.pop("plan")
        params["plan"] = None if plan is None else {"m": plan.m, "z": plan.z, "seed": plan.index_hash.seed}
        params["vocab_sizes"] = None if self.vocab_sizes is None else list(self.vocab_sizes)
        return params

    # -- prediction

    def decision_function(self, X):
        check_is_fitted(self, "store_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return self._logits(*self._split(X))

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)

    # -- introspection

    @property
    def robe_array_(self) -> RobeArray:
        check_is_fitted(self, "store_")
        if not isinstance(self.store_, _RobeStore):
            raise AttributeError("full backend has no ROBE array")
        return self.store_.array

    def embedding(self, feature: int, token: int) -> np.ndarray:
        check_is_fitted(self, "store_")
        cats = np.zeros((1, len(self.vocab_sizes_)), dtype=np.int64)
        cats[0, feature] = token
        return self.store_.gather(cats)[0, feature]

    def save(self, path) -> None:
        """ROBE binary checkpoint at ``path`` plus a JSON sidecar ``path.json``."""
        path = Path(path)
        self.robe_array_.save(path)
        sidecar = {
            "config": self.get_params_json(),
            "vocab_sizes": list(self.vocab_sizes_),
            "n_features_in": self.n_features_in_,
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_,
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, path) -> "FMClassifier":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        array = RobeArray.load(path)
        config = dict(sidecar["config"])
        config["plan"] = array.plan
        model = cls(**config)
        model.vocab_sizes_ = tuple(sidecar["vocab_sizes"])
        model.n_features_in_ = sidecar["n_features_in"]
        model.coef_ = np.array(sidecar["coef"], dtype=np.float64)
        model.intercept_ = float(sidecar["intercept"])
        model.store_ = _RobeStore(array.plan, np.random.default_rng(0))
        model.store_.array = array
        model.compression_ratio_ = sum(model.vocab_sizes_) * model.embed_dim / array.plan.m
        model.classes_ = np.array([0, 1])
        return model


def forward(model: FMClassifier, row) -> float:
    """Click probability for one ``(dense, cats)`` row."""
    dense, cats = row
    x = np.concatenate([np.asarray(dense, dtype=np.float64).reshape(-1), np.asarray(cats, dtype=np.float64).reshape(-1)])
    return float(model.predict_proba(x[None, :])[0, 1])


def evaluate(model: FMClassifier, split: Dataset) -> tuple[float, float]:
    """(logloss, AUC) on a dataset split."""
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    return model._score_split(split.X, split.labels)


@dataclass
class ModelConfig:
    embed_dim: int = 8
    backend: str = FULL
    m: int | None = None
    z: int | None = None
    learning_rate: float = 0.1
    epochs: int = 5
    batch_size: int = 256
    seed: int = 0
    use_sign_hash: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def build_model(config: ModelConfig, dataset: Dataset, plan: RobePlan | None = None) -> FMClassifier:
    return FMClassifier(
        embed_dim=config.embed_dim,
        backend=config.backend,
        m=config.m,
        z=config.z,
        plan=plan,
        learning_rate=config.learning_rate,
        epochs=config.epochs,
        batch_size=config.batch_size,
        use_sign_hash=config.use_sign_hash,
        n_dense=dataset.n_dense,
        vocab_sizes=dataset.vocab_sizes,
        seed=config.seed,
    )


def train(config: ModelConfig, train_split: Dataset, eval_split: Dataset | None = None, plan: RobePlan | None = None) -> tuple[FMClassifier, TrainReport]:
    if train_split.vocab_sizes != (eval_split.vocab_sizes if eval_split is not None else train_split.vocab_sizes):
        raise ValueError("train and eval splits have different schemas")
    model = build_model(config, train_split, plan)
    eval_set = None if eval_split is None else (eval_split.X, eval_split.labels)
    model.fit(train_split.X, train_split.labels, eval_set=eval_set)
    return model, model.report_
