import json
import logging
from pathlib import Path

import numpy as np
import pytest

from sigat.data import load_graph
from sigat.exceptions import ConfigError, ContractError, NumericError, ParseError, ShapeError, UnsupportedVersionError
from sigat.fixtures import random_graph
from sigat.gat_layer import LayerConfig
from sigat.model import (ModelConfig, TrainConfig, build_model, evaluate, load_checkpoint, predict, save_checkpoint,
                         train)

DATA = Path(__file__).parent / "data"


def _tiny(seed=0):
    layers = (LayerConfig(4, 2, 1, "average", 0.2, "identity"),)
    return build_model(ModelConfig(n_classes=2, layers=layers, seed=seed))


def _small(seed=0, classes=2):
    layers = (LayerConfig(4, 3, 2, "concat", 0.2, "elu"), LayerConfig(6, 4, 2, "average", 0.2, "identity"))
    return build_model(ModelConfig(n_classes=classes, layers=layers, seed=seed, k=3))


def _graphs(count, n=8, k=3, seed=0):
    rng = np.random.default_rng(seed)
    return [random_graph(n, k, rng) for _ in range(count)]


class TestBuild:
    def test_hand_count(self):
        model = _tiny()
        # Q 2x4, a 4, classifier 2x2 + 2
        assert model.n_params == 18
        assert {k: v.size for k, v in model.params().items()} == {
            "layer0.Q": 8, "layer0.a": 4, "classifier.W": 4, "classifier.b": 2}

    def test_default_count_bracket(self, caplog):
        with caplog.at_level(logging.INFO, logger="sigat.model"):
            model = build_model(ModelConfig(n_classes=3))
        assert 50_000 <= model.n_params <= 200_000
        assert str(model.n_params) in caplog.text

    def test_seeded_init_is_bit_exact(self):
        a, b = _small(seed=4).params(), _small(seed=4).params()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
        assert not np.array_equal(a["layer0.Q"], _small(seed=5).params()["layer0.Q"])

    def test_init_bounds(self):
        model = _small()
        q = model.layers[0].Q
        assert np.abs(q).max() <= np.sqrt(6 / (4 + 3))
        assert np.abs(model.layers[0].a).max() <= np.sqrt(6 / (2 * 3 + 1))

    @pytest.mark.parametrize("kwargs", [
        {"n_classes": 1},
        {"n_classes": 2, "layers": (LayerConfig(5, 2, 1),)},
        {"n_classes": 2, "class_names": ("a",)},
    ])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            build_model(ModelConfig(**kwargs))


class TestForward:
    def test_probabilities(self):
        model = _small(classes=3)
        for g in _graphs(5):
            p = model.predict_proba(g)
            assert p.shape == (3,)
            assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12

    def test_node_permutation_invariance(self):
        model = _small()
        rng = np.random.default_rng(1)
        for g in _graphs(5, n=12, seed=2):
            perm = rng.permutation(g.n)
            np.testing.assert_allclose(model.predict_proba(g.permuted(perm)), model.predict_proba(g),
                                       rtol=0, atol=1e-9)
            assert predict(model, [g.permuted(perm)])[0] == predict(model, [g])[0]

    def test_tuple_input(self):
        model = _small()
        g = _graphs(1)[0]
        # mask order visits neighbors by index, so sums differ only by rounding
        np.testing.assert_allclose(model.predict_proba((g.features, g.mask)), model.predict_proba(g),
                                   rtol=0, atol=1e-14)

    def test_feature_dim_mismatch(self):
        g = _graphs(1)[0]
        with pytest.raises(ShapeError):
            _small().predict_proba((np.ones((g.n, 5)), g.mask))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = _small(seed=3, classes=3)
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        again = load_checkpoint(path)
        for g in _graphs(4):
            np.testing.assert_array_equal(again.predict_proba(g), model.predict_proba(g))
        save_checkpoint(again, tmp_path / "ckpt2.json")
        assert path.read_bytes() == (tmp_path / "ckpt2.json").read_bytes()

    def test_golden_probabilities(self):
        model = load_checkpoint(DATA / "golden_checkpoint.json")
        graph = load_graph(DATA / "golden_graph.txt")
        expected = json.loads((DATA / "golden_probs.json").read_text())["probabilities"]
        np.testing.assert_allclose(model.predict_proba(graph), expected, rtol=0, atol=1e-12)

    def test_version_mismatch(self, tmp_path):
        doc = json.loads((DATA / "golden_checkpoint.json").read_text())
        doc["version"] = 99
        (tmp_path / "c.json").write_text(json.dumps(doc))
        with pytest.raises(UnsupportedVersionError):
            load_checkpoint(tmp_path / "c.json")

    def test_bad_shape_and_garbage(self, tmp_path):
        doc = json.loads((DATA / "golden_checkpoint.json").read_text())
        doc["params"]["classifier.b"] = {"shape": [3], "values": [0.0, 0.0, 0.0]}
        (tmp_path / "c.json").write_text(json.dumps(doc))
        with pytest.raises(ParseError):
            load_checkpoint(tmp_path / "c.json")
        (tmp_path / "g.json").write_text("{not json")
        with pytest.raises(ParseError):
            load_checkpoint(tmp_path / "g.json")


class TestTrainConfig:
    def test_constant_rate(self):
        cfg = TrainConfig(lr_decay=1.0, decay_every=3)
        assert {cfg.lr_at(e) for e in range(20)} == {0.001}

    def test_step_schedule(self):
        cfg = TrainConfig(lr0=0.01, lr_decay=0.5, decay_every=50)
        assert [cfg.lr_at(e) for e in (0, 49, 50, 99, 100, 249)] == [0.01, 0.01, 0.005, 0.005, 0.0025, 0.000625]

    @pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"batch_size": 0}, {"lr0": 0.0}, {"lr_decay": 0.0},
                                        {"lr_decay": 1.5}, {"decay_every": 0}, {"optimizer": "rmsprop"}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs).validate()


class TestTrain:
    def test_recorded_rates(self):
        model = _small()
        m = train(model, _graphs(3), [0, 1, 0], TrainConfig(epochs=5, decay_every=2, lr_decay=0.5))
        assert m.lr == [0.001, 0.001, 0.0005, 0.0005, 0.00025]
        assert len(m.train_loss) == 5

    @pytest.mark.parametrize("optimizer", ["sgd", "adam"])
    def test_one_step_decreases_loss(self, optimizer):
        g = _graphs(1)[0]
        for seed in range(3):
            model = _small(seed=seed)
            before = model.loss(g, 1).item()
            train(model, [g], [1], TrainConfig(epochs=1, batch_size=1, lr0=1e-3, optimizer=optimizer))
            assert model.loss(g, 1).item() < before

    def test_batch_gradient_is_mean(self):
        graphs = _graphs(2)
        labels = [0, 1]
        model = _small()
        start = {k: v.copy() for k, v in model.params().items()}
        train(model, graphs, labels, TrainConfig(epochs=1, batch_size=2, lr0=0.1, optimizer="sgd"))
        ref = _small()
        loss0, loss1 = ref.loss(graphs[0], 0), ref.loss(graphs[1], 1)
        g0, g1 = loss0.tape.backward(loss0), loss1.tape.backward(loss1)
        for k in start:
            np.testing.assert_allclose(model.params()[k], start[k] - 0.1 * (g0[k] + g1[k]) / 2, rtol=0, atol=1e-14)

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            model = _small()
            m = train(model, _graphs(6), [0, 1] * 3, TrainConfig(epochs=3, batch_size=2), _graphs(2, seed=9), [0, 1])
            runs.append((m.train_loss, m.val_loss, model.params()))
        assert runs[0][0] == runs[1][0] and runs[0][1] == runs[1][1]
        for k in runs[0][2]:
            np.testing.assert_array_equal(runs[0][2][k], runs[1][2][k])

    def test_restores_best_validation_epoch(self, tmp_path):
        model = _small()
        vg, vy = _graphs(4, seed=3), [0, 1, 0, 1]
        m = train(model, _graphs(6), [0, 1] * 3, TrainConfig(epochs=6, batch_size=2, lr0=0.01), vg, vy,
                  checkpoint_path=tmp_path / "best.json")
        best = m.best_epoch
        key = (-m.val_acc[best], m.val_loss[best])
        assert all(key <= (-a, l) for a, l in zip(m.val_acc, m.val_loss))
        result = evaluate(model, vg, vy)
        assert (result.accuracy, result.loss) == (m.val_acc[best], m.val_loss[best])
        np.testing.assert_array_equal(load_checkpoint(tmp_path / "best.json").predict_proba(vg[0]),
                                      model.predict_proba(vg[0]))

    def test_overfit_single_graph(self):
        g = _graphs(1, n=30, k=8, seed=11)[0]
        model = build_model(ModelConfig(n_classes=3))
        m = train(model, [g], [2], TrainConfig(epochs=100))
        losses = np.array(m.train_loss)
        assert np.all(np.diff(losses[10:]) <= 0)
        assert losses[-1] < 0.01
        assert evaluate(model, [g], [2]).accuracy == 1.0

    def test_numeric_error_carries_context(self):
        model = _small()
        g = _graphs(1)[0]
        for layer in model.layers:
            layer.Q[:] = 1e200  # second layer overflows
        with pytest.raises(NumericError) as info:
            train(model, [g], [0], TrainConfig(epochs=1))
        assert info.value.epoch == 0 and info.value.step == 0

    def test_contract_errors(self):
        with pytest.raises(ContractError):
            train(_small(), [], [])
        with pytest.raises(ContractError):
            train(_small(), _graphs(2), [0])


class TestEvaluate:
    def test_empty(self):
        with pytest.raises(ContractError):
            evaluate(_small(), [], [])

    def test_single_example(self):
        g = _graphs(1)[0]
        for label in (0, 1):
            assert evaluate(_small(), [g], [label]).accuracy in (0.0, 1.0)

    def test_uniform_model_on_balanced_set(self):
        accs = []
        for seed in range(5):
            model = _small(seed=seed)
            model.W[:] = 0.0  # every class gets probability 1/2; ties go to class 0
            rng = np.random.default_rng(seed)
            labels = rng.permutation([0, 1] * 100)
            result = evaluate(model, _graphs(200, n=5, k=2, seed=seed), labels)
            accs.append(result.accuracy)
            assert result.confusion[:, 1].sum() == 0
            np.testing.assert_array_equal(result.confusion.sum(axis=1), [100, 100])
        assert all(0.3 <= a <= 0.7 for a in accs)

    def test_metrics_outputs(self, tmp_path):
        model = _small(classes=3)
        result = evaluate(model, _graphs(6), [0, 1, 2, 0, 1, 2])
        assert 0.0 <= result.accuracy <= 1.0
        result.write_confusion(tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "true\\pred,0,1,2" and len(lines) == 4
        assert "accuracy:" in result.summary()
