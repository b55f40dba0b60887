import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from canprint._validation import encode_classes
from canprint.channelsim import SimConfig, default_channel, default_ecus, generate_dataset
from canprint.evalkit import split_indices
from canprint.features import extract_many
from canprint.mlp import (
    CHANNEL_HIDDEN,
    ECU_HIDDEN,
    MlpModel,
    SCGClassifier,
    TrainConfig,
    TrainingError,
    forward,
    init_model,
    loss_and_gradient,
    predict,
    softmax,
    standardization,
    train_scg,
)
from oracles import central_difference

XOR_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
XOR_Y = np.array([0, 1, 1, 0])

# stored reference run, see reference_run()
REF_TEST_LABELS = [
    0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 3, 1, 1, 1, 1, 1, 1, 1, 1,
    2, 2, 2, 2, 2, 2, 1, 2, 2, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3,
]
REF_EPOCHS = 283


def zero_model(sizes):
    m = init_model(sizes)
    m.set_flat(np.zeros(m.n_params))
    return m


def random_rows(n_in, n_out, seed, m=32):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(m, n_in)), rng.integers(0, n_out, m)


def gradient_errors(sizes, seed):
    model = init_model(sizes, seed)
    X, y = random_rows(sizes[0], sizes[-1], seed + 100)
    # non-trivial standardization exercises the input path too
    model.norm_mean = np.full(sizes[0], 0.1)
    model.norm_std = np.full(sizes[0], 1.3)
    _, g = loss_and_gradient(model, X, y)
    work = model.copy()

    def f(theta):
        work.set_flat(np.asarray(theta))
        return loss_and_gradient(work, X, y)[0]

    fd = np.asarray(central_difference(f, model.get_flat().tolist(), 1e-5))
    return g, fd


def grad_ok(g, fd):
    return np.all((np.abs(g - fd) <= 1e-8) | (np.abs(g - fd) <= 1e-5 * np.abs(fd)))


# -- init / forward ----------------------------------------------------------


def test_init_deterministic_and_in_range():
    a, b = init_model([11, 20, 4], 3), init_model([11, 20, 4], 3)
    assert np.array_equal(a.get_flat(), b.get_flat())
    lim = 1 / math.sqrt(11)
    assert np.all(np.abs(a.weights[0]) <= lim)
    assert np.all(a.biases[0] == 0)
    assert not np.array_equal(a.get_flat(), init_model([11, 20, 4], 4).get_flat())


def test_tiny_network():
    m = init_model([2, 1])
    assert forward(m, [0.3, -0.2]).tolist() == [1.0]


@pytest.mark.parametrize("sizes", [[3], [3, 0, 2], []])
def test_invalid_sizes_rejected(sizes):
    with pytest.raises(ValueError):
        init_model(sizes)


def test_zero_weights_give_uniform_output_and_ln_k_loss():
    m = zero_model([11, 20, 4])
    X, y = random_rows(11, 4, 0)
    np.testing.assert_allclose(forward(m, X), 0.25, atol=1e-15)
    assert loss_and_gradient(m, X, y)[0] == pytest.approx(math.log(4), abs=1e-12)
    labels, _ = predict(m, X)
    assert np.all(labels == 0)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        forward(init_model([11, 20, 4]), np.zeros(10))
    with pytest.raises(ValueError):
        loss_and_gradient(init_model([2, 2]), XOR_X, [0, 1, 2, 0])


@settings(max_examples=50)
@given(arrays(np.float64, (5, 11), elements=st.floats(-50, 50)), st.integers(0, 10))
def test_probabilities_normalized(X, seed):
    P = forward(init_model([11, 50, 40, 40, 6], seed), X)
    assert np.all((P >= 0) & (P <= 1))
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)


@given(arrays(np.float64, 6, elements=st.floats(-30, 30)), st.floats(-100, 100))
def test_softmax_shift_invariance(a, c):
    np.testing.assert_allclose(softmax(a + c), softmax(a), atol=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 100), st.floats(0.1, 10), st.floats(-5, 5))
def test_predict_invariant_to_matching_rescale(seed, a, b):
    m = init_model([11, 20, 4], seed)
    X, _ = random_rows(11, 4, seed)
    m.norm_mean, m.norm_std = standardization(X)
    scaled = m.copy()
    scaled.norm_mean = a * m.norm_mean + b
    scaled.norm_std = a * m.norm_std
    la, pa = predict(m, X)
    lb, pb = predict(scaled, a * X + b)
    assert np.array_equal(la, lb)
    np.testing.assert_allclose(pa, pb, rtol=1e-9)


# -- loss and gradient -------------------------------------------------------


@pytest.mark.parametrize("sizes", [[11, *ECU_HIDDEN, 4], [11, *CHANNEL_HIDDEN, 6]])
def test_gradient_matches_finite_differences(sizes):
    g, fd = gradient_errors(sizes, seed=0)
    assert grad_ok(g, fd)


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_loss_nonnegative(seed):
    X, y = random_rows(5, 3, seed, m=8)
    assert loss_and_gradient(init_model([5, 7, 3], seed), X, y)[0] >= 0


def test_flat_layout_round_trip():
    m = init_model([4, 3, 2], 1)
    theta = np.arange(m.n_params, dtype=float)
    m.set_flat(theta)
    assert np.array_equal(m.get_flat(), theta)
    assert m.weights[0][0].tolist() == [0.0, 1.0, 2.0]
    assert m.biases[0].tolist() == [12.0, 13.0, 14.0]


# -- training ----------------------------------------------------------------


def test_xor_reaches_full_accuracy():
    model, trace = train_scg(init_model([2, 8, 2], 0), XOR_X, XOR_Y, TrainConfig(max_epochs=2000))
    labels, _ = predict(model, XOR_X)
    assert labels.tolist() == XOR_Y.tolist()
    assert trace.epochs_run <= 2000
    assert trace.loss[-1] < trace.loss[0]


def test_stop_after_one_epoch_with_huge_tolerance():
    cfg = TrainConfig(max_epochs=1, grad_tol=1e300)
    _, trace = train_scg(init_model([2, 8, 2], 0), XOR_X, XOR_Y, cfg)
    assert trace.epochs_run == 1
    _, trace = train_scg(init_model([2, 8, 2], 0), XOR_X, XOR_Y, TrainConfig(max_epochs=50, grad_tol=1e300))
    assert trace.epochs_run == 1
    assert trace.stop_reason == "gradient below tolerance"


def test_max_epochs_honored_exactly():
    _, trace = train_scg(init_model([2, 8, 2], 0), XOR_X, XOR_Y, TrainConfig(max_epochs=7, grad_tol=1e-300))
    assert trace.epochs == list(range(8))
    assert trace.stop_reason == "maximum epochs reached"


def test_gradient_tolerance_honored_exactly():
    _, trace = train_scg(init_model([2, 8, 2], 0), XOR_X, XOR_Y, TrainConfig(grad_tol=1e-3))
    assert trace.grad_norm[-1] < 1e-3
    assert all(g >= 1e-3 for g in trace.grad_norm[1:-1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_loss_never_increases(seed):
    X, y = random_rows(4, 3, seed, m=20)
    _, trace = train_scg(init_model([4, 6, 3], seed), X, y, TrainConfig(max_epochs=40))
    assert trace.loss[-1] < trace.loss[0]
    assert all(b <= a for a, b in zip(trace.loss, trace.loss[1:]))


def test_training_deterministic():
    X, y = random_rows(11, 4, 5, m=60)
    a, ta = train_scg(init_model([11, 20, 4], 5), X, y, TrainConfig(max_epochs=50))
    b, tb = train_scg(init_model([11, 20, 4], 5), X, y, TrainConfig(max_epochs=50))
    assert ta.loss == tb.loss and ta.lam == tb.lam
    assert a.get_flat().tobytes() == b.get_flat().tobytes()


def test_training_does_not_mutate_input_model():
    m = init_model([2, 8, 2], 0)
    before = m.get_flat().copy()
    train_scg(m, XOR_X, XOR_Y, TrainConfig(max_epochs=5))
    assert np.array_equal(m.get_flat(), before)


def test_non_finite_loss_aborts():
    X = XOR_X.copy()
    X[0, 0] = np.nan
    with pytest.raises(TrainingError, match="epoch 0"):
        train_scg(init_model([2, 8, 2], 0), X, XOR_Y)


@pytest.mark.parametrize("kw", [dict(max_epochs=0), dict(grad_tol=0.0), dict(sigma0=-1.0)])
def test_bad_train_config(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def reference_run():
    cfg = SimConfig(default_ecus(), [default_channel("CANDATA", 2.0)], records_per_class=40, rng_seed=7)
    rs = generate_dataset(cfg)
    F, _ = extract_many(rs.windows, rs.sample_rate_hz)
    y, _ = encode_classes(rs.ecu_ids)
    tr, te = split_indices(y, 0.65, 7)
    m = init_model([11, 20, 4], 7)
    m.norm_mean, m.norm_std = standardization(F[tr])
    model, trace = train_scg(m, F[tr], y[tr], TrainConfig(max_epochs=300, rng_seed=7))
    return predict(model, F[te]), trace, model


def test_reference_run_regression():
    (labels, probs), trace, model = reference_run()
    assert labels.tolist() == REF_TEST_LABELS
    assert trace.epochs_run == REF_EPOCHS
    (labels2, probs2), _, _ = reference_run()
    assert probs.tobytes() == probs2.tobytes()


def test_standardization_uses_given_rows_only():
    X = np.array([[1.0, 5.0], [3.0, 5.0]])
    mean, std = standardization(X)
    assert mean.tolist() == [2.0, 5.0]
    assert std.tolist() == [1.0, 1.0]


# -- serialization and estimator --------------------------------------------


def test_json_round_trip():
    m = init_model([11, 20, 4], 2)
    m.norm_mean, m.norm_std = np.arange(11.0), np.linspace(1, 2, 11)
    back = MlpModel.from_json(m.to_json())
    assert np.array_equal(back.get_flat(), m.get_flat())
    assert np.array_equal(back.norm_std, m.norm_std)
    X, _ = random_rows(11, 4, 0)
    assert np.array_equal(forward(back, X), forward(m, X))


def test_bad_schema_rejected():
    d = init_model([2, 2]).to_dict()
    d["schema"] = 9
    with pytest.raises(ValueError, match="schema"):
        MlpModel.from_dict(d)


def test_classifier_on_xor_with_string_labels():
    y = np.array(["even", "odd", "odd", "even"])
    clf = SCGClassifier(hidden_layer_sizes=(8,), standardize=False).fit(XOR_X, y)
    assert clf.predict(XOR_X).tolist() == y.tolist()
    assert clf.score(XOR_X, y) == 1.0
    wrapped = SCGClassifier.from_model(clf.model_, clf.classes_)
    assert wrapped.predict(XOR_X).tolist() == y.tolist()
