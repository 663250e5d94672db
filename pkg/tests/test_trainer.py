import json

import numpy as np
import pytest
from sklearn.base import clone

from robez.robe import injective_plan
from robez.trainer.bench import bench_lookup_throughput
from robez.trainer.data import (
    Dataset,
    DatasetError,
    load_csv_dataset,
    save_csv_dataset,
    sigmoid,
    synth_dataset,
)
from robez.trainer.metrics import log_loss, roc_auc
from robez.trainer.model import (
    FMClassifier,
    ModelConfig,
    TrainingDiverged,
    evaluate,
    forward,
    train,
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- data


def test_load_csv(tmp_path):
    p = write(tmp_path, "label,d0,c0,c1\n1,0.5,3,1\n0,-1,0,2\n1,2.5,4,0\n")
    ds = load_csv_dataset(p)
    assert len(ds) == 3
    assert ds.vocab_sizes == (5, 3)
    np.testing.assert_array_equal(ds.X[0], [0.5, 3, 1])
    assert ds.name == "d"


def test_load_csv_errors(tmp_path):
    p = write(tmp_path, "label,c0\n1,7\n")
    with pytest.raises(DatasetError, match=r"d.csv:2: column c0 token 7 >= vocab size 5"):
        load_csv_dataset(p, vocab_sizes=[5])
    with pytest.raises(DatasetError, match=":3: expected 2 fields"):
        load_csv_dataset(write(tmp_path, "label,c0\n1,0\n0,1,2\n"))
    with pytest.raises(DatasetError, match="label must be 0 or 1"):
        load_csv_dataset(write(tmp_path, "label,c0\n2,0\n"))
    with pytest.raises(DatasetError, match="negative"):
        load_csv_dataset(write(tmp_path, "label,c0\n1,-1\n"))
    with pytest.raises(DatasetError):
        load_csv_dataset(write(tmp_path, "y,c0\n1,0\n"))
    with pytest.raises(FileNotFoundError):
        load_csv_dataset(tmp_path / "missing.csv")


def test_header_only_is_empty_dataset(tmp_path):
    ds = load_csv_dataset(write(tmp_path, "label,d0,c0\n"), vocab_sizes=[4])
    assert len(ds) == 0 and ds.vocab_sizes == (4,)


def test_csv_round_trip(tmp_path):
    ds = synth_dataset(50, 3, 7, 2, 0.1, seed=1, n_dense=2)
    save_csv_dataset(ds, tmp_path / "s.csv")
    back = load_csv_dataset(tmp_path / "s.csv", vocab_sizes=ds.vocab_sizes)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_synth_deterministic_and_split():
    a = synth_dataset(500, 3, 10, 4, 0.1, seed=5)
    b = synth_dataset(500, 3, 10, 4, 0.1, seed=5)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.labels, b.labels)
    tr, ev = a.split(0.9, seed=0)
    assert len(tr) == 450 and len(ev) == 50
    with pytest.raises(ValueError):
        synth_dataset(10, 2, 3, 2, 1.0)


def test_sigmoid_stable():
    assert sigmoid(0.0) == 0.5
    assert np.isfinite(sigmoid(np.array([-1e4, 1e4]))).all()


# -- metrics


def test_metrics():
    assert roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert roc_auc([0, 1], [0.5, 0.5]) == 0.5
    assert log_loss([0, 1, 1], [0.5, 0.5, 0.5]) == pytest.approx(np.log(2), abs=1e-12)
    assert np.isfinite(log_loss([1, 0], [0.0, 1.0]))
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 5000)
    assert 0.48 <= roc_auc(y, rng.random(10000)) <= 0.52
    with pytest.raises(ValueError, match="one class"):
        roc_auc([1, 1], [0.2, 0.3])
    with pytest.raises(ValueError, match="empty"):
        roc_auc([], [])


def test_auc_matches_sklearn():
    from sklearn.metrics import roc_auc_score

    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, 300)
    s = np.round(rng.random(300), 1)  # many ties
    assert roc_auc(y, s) == pytest.approx(roc_auc_score(y, s), abs=1e-12)


# -- model


def small():
    ds = synth_dataset(600, 3, 12, 4, 0.1, seed=2, n_dense=2)
    return ds.split(0.8, seed=2)


def test_lr_zero_keeps_weights():
    tr, ev = small()
    model, rep = train(ModelConfig(embed_dim=4, learning_rate=0.0, epochs=3, batch_size=50), tr, ev)
    init = FMClassifier(embed_dim=4, learning_rate=0.0, epochs=1, n_dense=2, vocab_sizes=tr.vocab_sizes).fit(tr.X, tr.labels)
    for a, b in zip(model.parameters(), init.parameters()):
        np.testing.assert_array_equal(a, b)
    assert rep.train_logloss[0] == pytest.approx(rep.train_logloss[-1], rel=1e-12)


def test_zero_model_predicts_half():
    tr, _ = small()
    model = FMClassifier(embed_dim=4, learning_rate=0.0, epochs=1, n_dense=2).fit(tr.X, tr.labels)
    for p in model.parameters():
        p[...] = 0
    assert forward(model, (tr.dense[0], tr.cats[0])) == 0.5


def test_full_and_injective_robe_agree():
    tr, ev = small()
    plan = injective_plan(3, 12, 4)
    kw = dict(embed_dim=4, learning_rate=0.3, epochs=2, batch_size=16, n_dense=2, vocab_sizes=tr.vocab_sizes, record_steps=True)
    full = FMClassifier(backend="full", **kw).fit(tr.X, tr.labels)
    robe = FMClassifier(backend="robe", plan=plan, **kw).fit(tr.X, tr.labels)
    np.testing.assert_allclose(robe.step_losses_, full.step_losses_, rtol=1e-9)
    np.testing.assert_allclose(robe.decision_function(ev.X), full.decision_function(ev.X), rtol=1e-9, atol=1e-12)
    flat = np.concatenate([t.ravel() for t in full.parameters()[:-1]])
    np.testing.assert_allclose(robe.parameters()[0], flat, rtol=1e-9, atol=1e-15)


@pytest.mark.parametrize("backend", ["full", "robe"])
def test_gradient_finite_difference(backend):
    tr, _ = small()
    model = FMClassifier(embed_dim=4, backend=backend, m=40, z=2, use_sign_hash=True, learning_rate=0.2, epochs=1, n_dense=2)
    model.fit(tr.X, tr.labels)
    X, y = tr.X[:64], tr.labels[:64]
    _, grads = model.loss_and_grad(X, y)
    params = model.parameters()
    rng = np.random.default_rng(0)
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in rng.choice(flat.size, min(5, flat.size), replace=False):
            old = flat[k]
            flat[k] = old + 1e-5
            lp = model.loss_and_grad(X, y)[0]
            flat[k] = old - 1e-5
            lm = model.loss_and_grad(X, y)[0]
            flat[k] = old
            assert (lp - lm) / 2e-5 == pytest.approx(gflat[k], rel=1e-5, abs=1e-9)


def test_divergence_guard():
    tr, ev = small()
    with pytest.raises(TrainingDiverged, match="epoch 0"):
        train(ModelConfig(embed_dim=4, learning_rate=1e8, epochs=2, batch_size=16), tr, ev)


def test_deterministic_report():
    tr, ev = small()
    cfg = ModelConfig(embed_dim=4, backend="robe", m=50, learning_rate=0.3, epochs=2, batch_size=32, seed=4)
    r1 = train(cfg, tr, ev)[1]
    r2 = train(cfg, tr, ev)[1]
    assert r1.train_logloss == r2.train_logloss and r1.eval_auc == r2.eval_auc
    assert r1.compression_ratio == pytest.approx(3 * 12 * 4 / 50)
    assert json.loads(r1.to_json())["backend"] == "robe"


def test_planted_separation_learned():
    rng = np.random.default_rng(0)
    cats = rng.integers(0, 2, (2000, 2))
    logit = np.where(cats[:, 0] == cats[:, 1], 9.0, -9.0)  # u0=v0=(3,0), u1=v1=(-3,0)
    ds = Dataset((rng.random(2000) < sigmoid(logit)).astype(int), np.zeros((2000, 0)), cats, (2, 2))
    tr, ev = ds.split(0.9, seed=0)
    _, rep = train(ModelConfig(embed_dim=2, learning_rate=0.5, epochs=5, batch_size=16), tr, ev)
    assert rep.eval_auc[-1] >= 0.95


def test_pure_noise_not_learned():
    ds = synth_dataset(4000, 4, 20, 4, 0.999, seed=3)
    tr, ev = ds.split(0.9, seed=3)
    _, rep = train(ModelConfig(embed_dim=4, learning_rate=0.1, epochs=3, batch_size=32), tr, ev)
    assert rep.eval_auc[-1] <= 0.55


def test_train_loss_falls_on_planted_data():
    ds = synth_dataset(4000, 4, 30, 4, 0.1, seed=1, signal=6.0, zipf_exponent=1.0)
    model = FMClassifier(embed_dim=4, learning_rate=0.5, epochs=3, batch_size=32, record_steps=True)
    model.fit(ds.X, ds.labels)
    per_epoch = np.array_split(np.array(model.step_losses_), 3)
    assert np.median(per_epoch[-1]) < np.median(per_epoch[0])


def test_estimator_api_and_checkpoint(tmp_path):
    tr, ev = small()
    est = FMClassifier(embed_dim=4, backend="robe", m=60, z=2, use_sign_hash=True, epochs=1, n_dense=2, learning_rate=0.2)
    assert clone(est).get_params()["m"] == 60
    est.fit(tr.X, tr.labels)
    assert est.predict(ev.X).shape == (len(ev),)
    assert est.predict_proba(ev.X).shape == (len(ev), 2)
    assert 0 <= est.score(ev.X, ev.labels) <= 1
    ll, auc = evaluate(est, ev)
    assert np.isfinite(ll) and 0 <= auc <= 1
    est.save(tmp_path / "m.robe")
    back = FMClassifier.load(tmp_path / "m.robe")
    np.testing.assert_array_equal(back.decision_function(ev.X), est.decision_function(ev.X))
    np.testing.assert_array_equal(back.embedding(1, 3), est.embedding(1, 3))
    with pytest.raises(ValueError):
        est.decision_function(ev.X[:, :3])
    bad = ev.X.copy()
    bad[0, 2] = 0.5
    with pytest.raises(ValueError, match="integer"):
        est.decision_function(bad)
    with pytest.raises(ValueError):
        FMClassifier(backend="robe").fit(tr.X, tr.labels)


def test_bench_report_shape():
    r = bench_lookup_throughput(d=16, m=4096, n_queries=5000, vocab_size=1000, repeats=1)
    assert set(r["lookups_per_second"]) == {"full", "robe_z1", "robe_z16"}
    assert r["ratio_vs_z1"]["robe_z1"] == 1.0
    assert all(v > 0 for v in r["lookups_per_second"].values())
    h = bench_lookup_throughput(d=16, m=4096, n_queries=5000, vocab_size=1000, repeats=1, hash_only=True)
    assert h["hash_only"] and h["lookups_per_second"]["robe_z1"] > 0
