import json

import numpy as np
import pytest

from birdxfer.dataset import EmbeddingTable, SpeciesVocabulary
from birdxfer.errors import ConfigError, DataError
from birdxfer.losses import AslParams, SigmoidF1Params, asl_loss, bce_loss, sigmoidf1_loss
from birdxfer.pseudolabel import LabelMatrix
from birdxfer.synthetic import separable_task
from birdxfer.trainer import (
    Adam,
    ClassifierModel,
    ModelArch,
    TrainConfig,
    forward,
    init_model,
    load_model,
    loss_and_grads,
    predict,
    save_model,
    train,
)

from fdcheck import numeric_grad, rel_err


def zero_model(d, h, c):
    m = init_model(ModelArch(d, h, c), 0)
    for p in m.params():
        p[...] = 0.0
    return m


class TestInit:
    def test_linear_shapes(self):
        m = init_model(ModelArch(4, 0, 3), 1)
        assert [w.shape for w in m.weights] == [(4, 3)]
        assert m.biases[0].shape == (3,) and not m.biases[0].any()
        assert np.all(np.isfinite(m.weights[0]))
        a = np.sqrt(6 / 7)
        assert np.all(np.abs(m.weights[0]) <= a)

    def test_deterministic(self):
        a, b = init_model(ModelArch(4, 0, 3), 1), init_model(ModelArch(4, 0, 3), 1)
        assert a.weights[0].tobytes() == b.weights[0].tobytes()
        assert init_model(ModelArch(4, 0, 3), 2).weights[0].tobytes() != a.weights[0].tobytes()

    def test_hidden_shapes(self):
        m = init_model(ModelArch(4, 256, 3), 1)
        assert [w.shape for w in m.weights] == [(4, 256), (256, 3)]


class TestForward:
    def test_zero_model(self):
        m = zero_model(3, 0, 2)
        assert not forward(m, np.ones((5, 3))).any()
        assert np.all(predict(m, np.ones((5, 3))) == 0.5)

    def test_scalar(self):
        m = zero_model(1, 0, 1)
        m.weights[0][0, 0] = 2.0
        assert forward(m, [[3.0]]).tolist() == [[6.0]]

    def test_relu_cutoff(self):
        m = init_model(ModelArch(2, 4, 2), 3)
        m.weights[0][...] = -1.0
        m.biases[1][...] = [0.25, -0.75]
        out = forward(m, np.abs(np.random.default_rng(0).normal(size=(6, 2))))
        assert np.all(out == m.biases[1])

    def test_dim_mismatch(self):
        with pytest.raises(DataError):
            forward(zero_model(3, 0, 2), np.ones((2, 4)))

    def test_predict_monotone_and_shape(self):
        m = zero_model(2, 0, 2)
        x = np.array([[1.0, 0.5], [2.0, -1.0], [0.3, 0.3]])
        base = predict(m, x)
        assert base.shape == (3, 2)
        m.weights[0][0, 1] = 0.7  # positive inputs in column 0 raise class 1 logits
        assert np.all(predict(m, x)[:, 1] > base[:, 1])


LOSS_FNS = {
    "bce": bce_loss,
    "asl": lambda x, y: asl_loss(x, y, AslParams(1.0, 2.0, 0.0)),
    "sigmoidf1": lambda x, y: sigmoidf1_loss(x, y, SigmoidF1Params(1.0, 0.0)),
}


@pytest.mark.parametrize("hidden", [0, 3])
@pytest.mark.parametrize("loss", sorted(LOSS_FNS))
def test_model_gradients_match_finite_differences(hidden, loss):
    rng = np.random.default_rng(hidden * 7 + len(loss))
    fn = LOSS_FNS[loss]
    for _ in range(20):
        n, d, c = rng.integers(1, 5), rng.integers(1, 4), rng.integers(1, 3)
        model = init_model(ModelArch(int(d), hidden, int(c)), int(rng.integers(1000)))
        for b in model.biases:
            b[...] = rng.normal(size=b.shape)
        x = rng.normal(size=(n, d))
        y = (rng.random((n, c)) < 0.5).astype(float)
        y[0, 0] = 1.0
        _, grads = loss_and_grads(model, x, y, fn)
        for p, g in zip(model.params(), grads):
            def f(values, p=p):
                saved = p.copy()
                p[...] = values
                v = fn(forward(model, x), y).value
                p[...] = saved
                return v

            assert rel_err(g, numeric_grad(f, p)) < 1e-4


def test_adam_first_step_is_signed_lr():
    p = [np.array([1.0, -2.0, 3.0])]
    opt = Adam(p, lr=0.1)
    opt.step(p, [np.array([0.5, -4.0, 0.0])])
    np.testing.assert_allclose(p[0], [0.9, -1.9, 3.0], atol=1e-7)


def test_single_step_descent():
    table, labels = separable_task(seed=1, n=64)
    model = init_model(ModelArch(8, 0, 3), 5)
    y = labels.bits.astype(float)
    before, grads = loss_and_grads(model, table.embeddings, y, bce_loss)
    Adam(model.params(), lr=1e-4).step(model.params(), grads)
    after, _ = loss_and_grads(model, table.embeddings, y, bce_loss)
    assert after.value < before.value


class TestTrain:
    def test_converges_on_separable_task(self):
        table, labels = separable_task(seed=42)
        model, history = train(table, labels, TrainConfig(seed=42, learning_rate=0.3))
        assert len(history) == 20
        best = history.records[history.best_epoch - 1]
        assert best.val_macro_f1 >= 0.95 and best.val_macro_auroc >= 0.99

    def test_deterministic(self):
        table, labels = separable_task(seed=3, n=200)
        cfg = TrainConfig(seed=9, epochs=5, batch_size=32, learning_rate=0.05)
        a, ha = train(table, labels, cfg)
        b, hb = train(table, labels, cfg)
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.params(), b.params()))
        assert ha.records == hb.records

    def test_asl_zero_matches_bce(self):
        table, labels = separable_task(seed=4, n=200)
        base = dict(seed=2, epochs=6, batch_size=50, learning_rate=0.05)
        _, h_bce = train(table, labels, TrainConfig(loss="bce", **base))
        _, h_asl = train(table, labels, TrainConfig(loss="asl", gamma_pos=0, gamma_neg=0, margin=0, **base))
        for a, b in zip(h_bce.records, h_asl.records):
            assert abs(a.train_loss - b.train_loss) <= 1e-9
            assert abs(a.val_macro_f1 - b.val_macro_f1) <= 1e-9
            assert abs(a.val_macro_auroc - b.val_macro_auroc) <= 1e-9

    def test_selection_is_best_auroc(self):
        table, labels = separable_task(seed=5, n=150)
        model, history = train(table, labels, TrainConfig(seed=1, epochs=8, batch_size=16, learning_rate=0.5))
        best = max(r.val_macro_auroc for r in history.records)
        assert history.records[history.best_epoch - 1].val_macro_auroc == best
        from birdxfer.dataset import split_indices
        from birdxfer.metrics import evaluate

        _, val = split_indices(len(table), 0.8, 1)
        assert evaluate(predict(model, table.embeddings[val]), labels.bits[val]).macro_auroc == best

    def test_hidden_layer_trains(self):
        table, labels = separable_task(seed=6, n=200)
        model, history = train(table, labels, TrainConfig(seed=1, epochs=3, hidden_dim=256, loss="asl"))
        assert [w.shape for w in model.weights] == [(8, 256), (256, 3)]
        assert model.meta["loss"] == "asl"

    def test_sigmoidf1_trains(self):
        table, labels = separable_task(seed=6, n=200)
        _, history = train(table, labels, TrainConfig(seed=1, epochs=10, loss="sigmoidf1", S=-1, learning_rate=0.1))
        assert history.records[-1].val_macro_f1 > 0.5

    def test_misaligned(self):
        table, labels = separable_task(seed=6, n=20)
        with pytest.raises(DataError, match="aligned"):
            train(table, labels.take(range(10)), TrainConfig())

    def test_no_positives(self):
        table, labels = separable_task(seed=6, n=20)
        empty = LabelMatrix(labels.recording_ids, labels.interval_starts, np.zeros_like(labels.bits), labels.vocab)
        with pytest.raises(DataError, match="positive"):
            train(table, empty, TrainConfig())


class TestConfig:
    def test_defaults(self):
        c = TrainConfig.from_dict({})
        assert (c.epochs, c.batch_size, c.learning_rate, c.train_fraction) == (20, 1000, 1e-3, 0.8)

    def test_loss_spec(self):
        c = TrainConfig.from_dict({"loss": "sigmoidf1", "S": -15, "E": 1})
        assert c.sigmoidf1_params() == SigmoidF1Params(15.0, 1.0)

    @pytest.mark.parametrize("bad", [{"epochs": 0}, {"learning_rate": 0}, {"loss": "focal"}, {"bogus": 1}, {"epochs": 1.5}, {"margin": 1.0}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict(bad)


class TestCheckpoint:
    def test_zero_round_trip(self, tmp_path):
        m = zero_model(3, 0, 2)
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert all(np.array_equal(a, b) for a, b in zip(m.params(), back.params()))
        assert back.arch == m.arch and back.vocab == m.vocab

    def test_trained_round_trip_predictions(self, tmp_path):
        table, labels = separable_task(seed=7, n=100)
        m, _ = train(table, labels, TrainConfig(seed=1, epochs=2, hidden_dim=4))
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert predict(back, table).tobytes() == predict(m, table).tobytes()
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["schema"] == 1 and set(doc) == {"schema", "arch", "vocab", "layers", "meta"}

    def test_schema_mismatch(self, tmp_path):
        save_model(zero_model(1, 0, 1), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["schema"] = 2
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(DataError, match="schema"):
            load_model(tmp_path / "m.json")

    def test_corrupted_names_field(self, tmp_path):
        save_model(zero_model(2, 0, 1), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        del doc["layers"][0]["w"]
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(DataError, match=r"layers\[0\]\.w"):
            load_model(tmp_path / "m.json")
        (tmp_path / "m.json").write_text("{not json")
        with pytest.raises(DataError, match="JSON"):
            load_model(tmp_path / "m.json")
