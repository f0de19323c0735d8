import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from sigat.data import SyntheticConfig, synth_sonar
from sigat.estimators import ImageGraphTransformer, SIGATClassifier
from sigat.exceptions import ConfigError, ShapeError

SMALL = dict(n_layers=2, heads=2, hidden_dim=4, out_dim=6)


@pytest.fixture(scope="module")
def scenes():
    images, labels = synth_sonar(SyntheticConfig(width=48, height=48, per_class=4, seed=1))
    names = np.array(["disk", "bar", "ring"])[labels]
    return images, names


def test_params_and_clone():
    clf = SIGATClassifier(epochs=3, lr=0.01, **SMALL)
    assert clf.get_params()["lr"] == 0.01
    twin = clone(clf)
    assert twin.get_params() == clf.get_params() and twin is not clf
    clf.set_params(heads=3)
    assert clf.heads == 3
    tr = ImageGraphTransformer(k=4)
    assert clone(tr).get_params()["k"] == 4


def test_transformer_outputs(scenes):
    images, _ = scenes
    graphs = ImageGraphTransformer(grid=(4, 4), k=3).fit_transform(images[:2])
    assert len(graphs) == 2 and graphs[0].n == 16 and graphs[0].k == 3


def test_pipeline_fit_predict(scenes):
    images, names = scenes
    pipe = make_pipeline(ImageGraphTransformer(grid=(4, 4), k=3),
                         SIGATClassifier(epochs=2, lr=0.01, **SMALL))
    pipe.fit(images, names)
    clf = pipe[-1]
    assert list(clf.classes_) == ["bar", "disk", "ring"]
    assert len(clf.metrics_.train_loss) == 2
    assert clf.n_params_ == clf.model_.n_params
    pred = pipe.predict(images)
    assert set(pred) <= set(names)
    proba = pipe.predict_proba(images)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert 0.0 <= pipe.score(images, names) <= 1.0


def test_fit_is_reproducible(scenes):
    images, names = scenes
    graphs = ImageGraphTransformer(grid=(4, 4), k=3).fit_transform(images)
    a = SIGATClassifier(epochs=2, **SMALL).fit(graphs, names).predict_proba(graphs)
    b = SIGATClassifier(epochs=2, **SMALL).fit(graphs, names).predict_proba(graphs)
    np.testing.assert_array_equal(a, b)


def test_validation_set_selects_epoch(scenes):
    images, names = scenes
    graphs = ImageGraphTransformer(grid=(4, 4), k=3).fit_transform(images)
    clf = SIGATClassifier(epochs=3, lr=0.01, **SMALL).fit(graphs[:9], names[:9], graphs[9:], names[9:])
    assert clf.metrics_.best_epoch in (0, 1, 2)
    assert clf.evaluate(graphs[9:], names[9:]).accuracy == clf.metrics_.val_acc[clf.metrics_.best_epoch]


def test_errors(scenes):
    images, names = scenes
    graphs = ImageGraphTransformer(grid=(4, 4), k=3).fit_transform(images)
    with pytest.raises(NotFittedError):
        SIGATClassifier().predict(graphs)
    with pytest.raises(NotFittedError):
        ImageGraphTransformer().transform(images)
    with pytest.raises(ShapeError):
        SIGATClassifier(**SMALL).fit(graphs, names[:-1])
    with pytest.raises(ShapeError):
        SIGATClassifier(**SMALL).fit(images, names)
    with pytest.raises(ConfigError):
        SIGATClassifier(**SMALL).fit(graphs, ["a"] * len(graphs))
    with pytest.raises(ConfigError):
        ImageGraphTransformer(gamma=2.0).fit(images)
    with pytest.raises(ShapeError):
        ImageGraphTransformer().fit(images[0])
    with pytest.raises(ConfigError):
        ImageGraphTransformer().fit([np.full((8, 8), 2.0)])
