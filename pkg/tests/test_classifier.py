import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from smartvmf.classifier import (
    ClassifierContract,
    ReferenceClassifier,
    SyntheticDataset,
    generate_synthetic,
    input_gradient,
    predict_logits,
    softmax,
    train_reference,
)


def dominant_orientation(img):
    """Angle of the dominant gradient direction from the image structure tensor."""
    g = img.mean(axis=2)
    gy, gx = np.gradient(g)
    jxx, jyy, jxy = (gx * gx).sum(), (gy * gy).sum(), (gx * gy).sum()
    return 0.5 * math.atan2(2 * jxy, jxx - jyy)


def angle_gap(a, b):
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def test_generation_is_deterministic():
    a = generate_synthetic(seed=7)
    b = generate_synthetic(seed=7)
    assert a.images.tobytes() == b.images.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)
    assert generate_synthetic(seed=8).images.tobytes() != a.images.tobytes()


def test_classes_are_balanced(synthetic):
    assert synthetic.images.shape == (100, 32, 32, 3)
    np.testing.assert_array_equal(np.bincount(synthetic.labels), [25] * 4)
    assert 0.0 <= synthetic.images.min() and synthetic.images.max() <= 1.0


def test_class_means_differ_in_orientation(synthetic):
    means = [synthetic.images[synthetic.labels == k].mean(axis=0) for k in range(4)]
    angles = [dominant_orientation(m) for m in means]
    assert angle_gap(angles[0], angles[1]) > math.pi / 8
    for k, a in enumerate(angles):
        assert angle_gap(a, math.pi * k / 4) < 0.2


@pytest.mark.parametrize("k", [1, 17])
def test_class_count_limits(k):
    with pytest.raises(ValueError):
        generate_synthetic(num_classes=k)


def test_single_class_model_always_predicts_it(synthetic):
    one = SyntheticDataset(synthetic.images[:10], np.zeros(10, dtype=np.int64), 1, 7)
    model = train_reference(one, epochs=20)
    assert (model.predict(synthetic.images) == 0).all()


def test_loss_non_increasing(reference_model):
    loss = reference_model.loss_history_
    assert len(loss) == 20001
    assert (np.diff(loss) <= 1e-12).all()


def test_loss_non_increasing_at_smaller_rate(synthetic):
    loss = train_reference(synthetic, epochs=300, lr=0.05).loss_history_
    assert (np.diff(loss) <= 1e-12).all()


def test_train_accuracy(reference_model, synthetic):
    acc = (reference_model.predict(synthetic.images) == synthetic.labels).mean()
    assert acc >= 0.95


def test_zero_weights_give_zero_logits_and_gradient():
    model = ReferenceClassifier.from_weights(np.zeros((3, 4 * 4 * 3 + 1)), (16, 16, 3))
    img = np.zeros((16, 16, 3))
    np.testing.assert_array_equal(model.predict_logits(img), np.zeros(3))
    np.testing.assert_array_equal(model.input_gradient(img, 1), np.zeros((16, 16, 3)))


def test_softmax_sums_to_one(reference_model, synthetic):
    p = softmax(reference_model.predict_logits(synthetic.images))
    assert np.abs(p.sum(axis=1) - 1).max() <= 1e-12
    np.testing.assert_allclose(reference_model.predict_proba(synthetic.images[:3]), p[:3])


def test_gradient_constant_within_pooling_cells(reference_model, synthetic):
    g = reference_model.input_gradient(synthetic.images[0], 2)
    cells = g.reshape(8, 4, 8, 4, 3)
    assert (cells == cells[:, :1, :, :1, :]).all()


def test_gradient_does_not_depend_on_the_image(reference_model, synthetic):
    a = reference_model.input_gradient(synthetic.images[0], 1)
    b = reference_model.input_gradient(synthetic.images[50], 1)
    np.testing.assert_array_equal(a, b)


def test_logits_are_affine(reference_model, rng):
    x, y = rng.random((2, 32, 32, 3))
    f = reference_model.predict_logits
    np.testing.assert_allclose(f(0.3 * x + 0.7 * y), 0.3 * f(x) + 0.7 * f(y), atol=1e-12)


def test_finite_difference_spot_check(reference_model, synthetic):
    img = synthetic.images[3].copy()
    g = reference_model.input_gradient(img, 0)
    h = 1e-5
    for r, c, ch in [(0, 0, 0), (17, 5, 2), (31, 31, 1)]:
        up, dn = img.copy(), img.copy()
        up[r, c, ch] += h
        dn[r, c, ch] -= h
        fd = (reference_model.predict_logits(up)[0] - reference_model.predict_logits(dn)[0]) / (2 * h)
        assert abs(fd - g[r, c, ch]) <= 1e-4 * abs(g[r, c, ch])


def test_batch_and_single_logits_agree(reference_model, synthetic):
    batch = reference_model.predict_logits(synthetic.images[:4])
    for i in range(4):
        np.testing.assert_allclose(batch[i], reference_model.predict_logits(synthetic.images[i]))


def test_shape_mismatch(reference_model):
    with pytest.raises(ValueError):
        reference_model.predict_logits(np.zeros((16, 16, 3)))


def test_unfitted_model():
    with pytest.raises(NotFittedError):
        ReferenceClassifier().predict_logits(np.zeros((4, 4, 3)))


def test_module_level_helpers_validate(reference_model, synthetic):
    np.testing.assert_array_equal(predict_logits(reference_model, synthetic.images[0]), reference_model.predict_logits(synthetic.images[0]))
    with pytest.raises(ValueError):
        input_gradient(reference_model, np.full((32, 32, 3), 2.0), 0)


def test_contract(reference_model):
    assert isinstance(reference_model, ClassifierContract)
    assert reference_model.num_classes == 4


def test_serialisation_round_trip(reference_model, synthetic, tmp_path):
    again = ReferenceClassifier.from_bytes(reference_model.to_bytes())
    np.testing.assert_array_equal(again.coef_, reference_model.coef_)
    path = tmp_path / "model.bin"
    reference_model.save(path, seed=7)
    loaded = ReferenceClassifier.load(path)
    np.testing.assert_array_equal(loaded.predict_logits(synthetic.images), reference_model.predict_logits(synthetic.images))
    manifest = (tmp_path / "model.bin.manifest").read_text()
    assert "seed=7" in manifest and "epochs=20000" in manifest
    with pytest.raises(ValueError):
        ReferenceClassifier.from_bytes(b"nope" + reference_model.to_bytes())


def test_estimator_params():
    est = ReferenceClassifier(pool_factor=2, epochs=5)
    assert clone(est).get_params() == {"pool_factor": 2, "epochs": 5, "lr": 0.1}


def test_pool_factor_must_divide(synthetic):
    with pytest.raises(ValueError):
        ReferenceClassifier(pool_factor=5, epochs=1).fit(synthetic.images[:4], synthetic.labels[:4])
