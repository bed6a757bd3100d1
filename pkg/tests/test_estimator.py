import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline

from promptfusion.data import DatasetSpec, generate_dataset
from promptfusion.estimator import GaussianFusionAdapter, PromptTunedClassifier
from promptfusion.fusion import AdapterConfig, adapt
from promptfusion.validation import as_image_batch, check_images_and_labels

SPEC = DatasetSpec(seed=3, shots=2, eval_per_class=4)

FAST = dict(epochs_stage1_lang=2, epochs_stage1_vis=2, epochs_stage2=1,
            warm_steps=80, warm_learning_rate=1.0, batch_size=8)


@pytest.fixture(scope="module")
def data():
    ds = generate_dataset(SPEC)
    X = np.stack([ex.image for ex in ds.train])
    y = np.array([ex.class_name for ex in ds.train])
    Xe = np.stack([ex.image for ex in ds.eval_base])
    ye = np.array([ex.class_name for ex in ds.eval_base])
    return X, y, Xe, ye


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def test_as_image_batch_accepts_both_layouts(data):
    X = data[0]
    batch, was_flat = as_image_batch(X, 32, 3)
    assert not was_flat and batch.shape == X.shape
    flat, was_flat2 = as_image_batch(X.reshape(len(X), -1), 32, 3)
    assert was_flat2
    assert np.array_equal(flat, batch)


def test_as_image_batch_rejects_wrong_shapes(data):
    X = data[0]
    with pytest.raises(ValueError):
        as_image_batch(X.reshape(len(X), -1)[:, :-1], 32, 3)
    with pytest.raises(ValueError):
        as_image_batch(X[:, :16], 32, 3)
    with pytest.raises(ValueError):
        as_image_batch(X[0], 32, 3)  # single image, no batch axis


def test_check_images_and_labels_length_mismatch(data):
    X, y = data[0], data[1]
    with pytest.raises(ValueError):
        check_images_and_labels(X, y[:-1], 32, 3)


# ---------------------------------------------------------------------------
# GaussianFusionAdapter
# ---------------------------------------------------------------------------

def test_adapter_transform_matches_functional_form(data):
    X = data[0]
    tr = GaussianFusionAdapter(sigma=0.1, alpha=0.7).fit(X)
    out = tr.transform(X)
    want = adapt(X[0], AdapterConfig(sigma=0.1, alpha=0.7))
    assert np.allclose(out[0], want, atol=1e-6)
    assert out.shape == X.shape


def test_adapter_preserves_flat_layout(data):
    X = data[0]
    flat = X.reshape(len(X), -1)
    out = GaussianFusionAdapter().fit_transform(flat)
    assert out.shape == flat.shape
    batch = GaussianFusionAdapter().fit_transform(X)
    assert np.array_equal(out, batch.reshape(len(X), -1))


def test_adapter_alpha_one_is_identity(data):
    X = data[0]
    out = GaussianFusionAdapter(alpha=1.0).fit_transform(X)
    assert np.allclose(out, X, atol=1e-6)


def test_adapter_requires_fit_and_valid_params(data):
    X = data[0]
    with pytest.raises(NotFittedError):
        GaussianFusionAdapter().transform(X)
    with pytest.raises(ValueError):
        GaussianFusionAdapter(sigma=0.0).fit(X)
    with pytest.raises(ValueError):
        GaussianFusionAdapter(alpha=1.5).fit(X)


def test_adapter_sklearn_plumbing():
    tr = GaussianFusionAdapter(sigma=0.2)
    params = tr.get_params()
    assert params["sigma"] == 0.2 and params["alpha"] == 0.9
    twin = clone(tr)
    assert twin.get_params() == params
    tr.set_params(alpha=0.5)
    assert tr.get_params()["alpha"] == 0.5


# ---------------------------------------------------------------------------
# PromptTunedClassifier
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fitted(data):
    X, y = data[0], data[1]
    return PromptTunedClassifier(**FAST).fit(X, y)


def test_classifier_learns_the_training_set(data, fitted):
    X, y = data[0], data[1]
    assert sorted(fitted.classes_) == sorted(set(y))
    assert fitted.score(X, y) >= 0.5  # tiny budget, loose bar


def test_predict_proba_shape_and_normalization(data, fitted):
    Xe = data[2]
    probs = fitted.predict_proba(Xe)
    assert probs.shape == (len(Xe), len(fitted.classes_))
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert (probs >= 0).all()
    preds = fitted.predict(Xe)
    assert set(preds) <= set(fitted.classes_)
    assert np.array_equal(fitted.classes_[np.argmax(probs, axis=1)], preds)


def test_fit_is_deterministic(data, fitted):
    X, y, Xe = data[0], data[1], data[2]
    again = PromptTunedClassifier(**FAST).fit(X, y)
    assert np.array_equal(again.predict_proba(Xe), fitted.predict_proba(Xe))


def test_flat_and_batch_inputs_agree(data, fitted):
    X, y, Xe = data[0], data[1], data[2]
    flat = PromptTunedClassifier(**FAST).fit(X.reshape(len(X), -1), y)
    assert flat.n_features_in_ == 32 * 32 * 3
    assert np.array_equal(flat.predict_proba(Xe.reshape(len(Xe), -1)),
                          fitted.predict_proba(Xe))


def test_integer_labels_with_class_names(data):
    X, y = data[0], data[1]
    names = sorted(set(y))
    y_int = np.array([names.index(c) for c in y])
    clf = PromptTunedClassifier(class_names=names, **FAST).fit(X, y_int)
    assert list(clf.classes_) == [0, 1, 2, 3]
    assert clf.class_names_ == names
    preds = clf.predict(X)
    assert preds.dtype.kind in "iu"


def test_classifier_input_validation(data):
    X, y = data[0], data[1]
    with pytest.raises(NotFittedError):
        PromptTunedClassifier().predict(X)
    with pytest.raises(ValueError):
        PromptTunedClassifier(class_names=["just one name"], **FAST).fit(X, y)
    with pytest.raises(ValueError):
        PromptTunedClassifier(**FAST).fit(X, np.zeros(len(X)))  # one class
    with pytest.raises(ValueError):
        PromptTunedClassifier(lambda_d=-1.0, **FAST).fit(X, y)


def test_classifier_sklearn_plumbing(data):
    clf = PromptTunedClassifier(lambda_d=0.7, **FAST)
    params = clf.get_params()
    assert params["lambda_d"] == 0.7
    assert params["tau"] == 0.1
    twin = clone(clf)
    assert twin.get_params() == params
    clf.set_params(mode="language_only")
    assert clf.get_params()["mode"] == "language_only"


def test_pipeline_composes(data):
    X, y, Xe = data[0], data[1], data[2]
    pipe = Pipeline([("fuse", GaussianFusionAdapter()),
                     ("clf", PromptTunedClassifier(**FAST))])
    pipe.fit(X.reshape(len(X), -1), y)
    preds = pipe.predict(Xe.reshape(len(Xe), -1))
    assert len(preds) == len(Xe)
