import itertools
import math

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from houdini import tensor as T
from houdini.data import generate_dataset
from houdini.gradcheck import rel_error
from houdini.metrics import KeypointAnnotation, LabelMap, TokenSequence
from houdini.models import (CtcLattice, KeypointConfig, KeypointModel, ModelError, SegmentationConfig,
                            SegmentationModel, SequenceConfig, SequenceModel, build_model, ctc_label_score, ctc_loss,
                            forward_backward, greedy_decode, keypoint_decode, keypoint_score, mse_heatmap, seg_decode,
                            seg_nll, seg_score, train_toy)
from houdini.models.training import TrainingError
from oracles import collapse, ctc_brute_force

GOLDEN = Path(__file__).parent / "golden"


def random_lattice(rng, n_t, n_a, spread=2.0):
    return T.log_softmax(rng.normal(0, spread, (n_t, n_a + 1)), axis=-1).data


# --- CTC ----------------------------------------------------------------------------


def ctc_oracle_sweep(n_lattices=200, seed=0):
    """Worst log-domain disagreement with brute force over random lattices and every label with |y| <= 3."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_lattices):
        n_t, n_a = int(rng.integers(1, 9)), int(rng.integers(1, 4))
        logp = random_lattice(rng, n_t, n_a)
        brute = ctc_brute_force(logp)
        for n in range(4):
            for lab in itertools.product(range(n_a), repeat=n):
                res = ctc_label_score(logp, lab)
                if lab in brute:
                    assert res.feasible
                    worst = max(worst, abs(res.value.item() - brute[lab]))
                else:
                    assert not res.feasible and res.value.item() == -math.inf
    return worst


def test_ctc_matches_brute_force_small_sweep():
    assert ctc_oracle_sweep(40, seed=11) <= 1e-9


def test_ctc_single_frame_single_path():
    logp = np.log([[0.3, 0.7]])
    assert ctc_label_score(logp, [0]).value.item() == pytest.approx(math.log(0.3), abs=1e-15)


def test_ctc_two_frames_three_paths():
    logp = np.log([[0.6, 0.4], [0.2, 0.8]])
    expected = math.log(0.6 * 0.2 + 0.6 * 0.8 + 0.4 * 0.2)
    assert ctc_label_score(logp, [0]).value.item() == pytest.approx(expected, abs=1e-14)


def test_ctc_empty_label_is_all_blank_path():
    rng = np.random.default_rng(0)
    logp = random_lattice(rng, 5, 2)
    assert ctc_label_score(logp, []).value.item() == pytest.approx(logp[:, -1].sum(), abs=1e-12)


def test_ctc_loss_examples():
    assert ctc_loss(np.log(np.full((2, 2), 0.5)), [0]).item() == pytest.approx(-math.log(0.75), abs=1e-14)
    one_hot = np.log(np.array([[1.0, 1e-300, 1e-300], [1e-300, 1e-300, 1.0], [1e-300, 1.0, 1e-300]]))
    assert ctc_loss(one_hot, [0, 1]).item() == pytest.approx(0.0, abs=1e-12)


def test_ctc_repeats_need_a_blank():
    logp = np.log(np.full((2, 2), 0.5))
    assert not ctc_label_score(logp, [0, 0]).feasible
    assert ctc_loss(logp, [0, 0]).item() == math.inf
    assert ctc_label_score(np.log(np.full((3, 2), 0.5)), [0, 0]).feasible


@given(st.integers(0, 10_000))
def test_ctc_loss_nonnegative_and_forward_equals_backward(seed):
    rng = np.random.default_rng(seed)
    n_t, n_a = int(rng.integers(1, 10)), int(rng.integers(1, 5))
    logp = random_lattice(rng, n_t, n_a)
    lab = list(rng.integers(0, n_a, int(rng.integers(0, n_t // 2 + 1))))
    fwd, bwd, _, _ = forward_backward(logp, lab)
    assert fwd == pytest.approx(bwd, abs=1e-9)
    assert ctc_loss(logp, lab).item() >= 0.0
    np.testing.assert_allclose(np.exp(logp).sum(axis=1), 1.0, atol=1e-9)


def test_ctc_normalization_over_all_labels():
    rng = np.random.default_rng(5)
    for n_t in range(1, 5):
        for n_a in range(1, 4):
            logp = random_lattice(rng, n_t, n_a)
            total = sum(math.exp(ctc_label_score(logp, lab).value.item())
                        for n in range(n_t + 1) for lab in itertools.product(range(n_a), repeat=n)
                        if ctc_label_score(logp, lab).feasible)
            assert total == pytest.approx(1.0, abs=1e-8)


def test_ctc_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(6, 4))
    f = lambda z: ctc_label_score(T.log_softmax(z, axis=-1), [0, 2, 2]).value  # noqa: E731
    _, (g,) = T.value_and_grad(f, logits)
    num = T.finite_difference_gradient(lambda z: f(T.Tensor(z)), logits, 1e-6)
    assert rel_error(g, num) <= 1e-8


def test_greedy_decode_examples():
    a, b, blank = 0, 1, 2
    logp = np.log(np.eye(3)[[a, a, blank, b]] * 0.9 + 0.1 / 3)
    assert greedy_decode(logp) == [a, b]
    assert greedy_decode(np.log(np.eye(3)[[blank] * 4] * 0.9 + 0.1 / 3)) == []


def test_greedy_decode_is_the_best_path_collapse():
    # greedy decoding maximizes the single-path score; check against every path
    rng = np.random.default_rng(8)
    for _ in range(50):
        n_t, n_a = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        logp = random_lattice(rng, n_t, n_a)
        best = max(itertools.product(range(n_a + 1), repeat=n_t), key=lambda p: sum(logp[t, s] for t, s in enumerate(p)))
        assert greedy_decode(logp) == list(collapse(best, n_a))


def test_lattice_golden_decode():
    logp = T.load_tensor(GOLDEN / "lattice.hft")
    model = build_model("sequence", seed=0)
    assert str(model.decode(logp)) == (GOLDEN / "lattice_decode.txt").read_text().strip()
    assert CtcLattice(T.Tensor(logp)).blank == logp.shape[1] - 1


# --- sequence model -----------------------------------------------------------------


def test_sequence_rows_are_distributions_and_zero_weights_uniform():
    model = build_model("sequence", {"alphabet": "abc "}, seed=3)
    x = np.random.default_rng(0).normal(size=(7, 8))
    np.testing.assert_allclose(np.exp(model.forward(x).data).sum(axis=1), 1.0, atol=1e-12)
    zero = model.with_params({k: np.zeros_like(v) for k, v in model.params.items()})
    np.testing.assert_allclose(zero.forward(x).data, math.log(1 / 5), atol=1e-15)


def test_sequence_rejects_wrong_feature_dim():
    with pytest.raises(ModelError):
        build_model("sequence", seed=0).forward(np.zeros((5, 3)))


def test_sequence_batched_forward_matches_single():
    model = build_model("sequence", seed=1)
    xb = np.random.default_rng(1).normal(size=(3, 6, 8))
    batched = model.forward(xb).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], model.forward(xb[b]).data, atol=1e-13)


@pytest.mark.parametrize("family", ["sequence", "keypoints", "segmentation"])
def test_forward_golden(family):
    from record_goldens import golden_input
    model = build_model(family, seed=0)
    expected = T.load_tensor(GOLDEN / f"{family}_forward.hft")
    np.testing.assert_allclose(model.forward(golden_input(model)).data, expected, rtol=0, atol=1e-12)


# --- keypoints ----------------------------------------------------------------------


def test_keypoint_one_hot_and_uniform():
    truth = KeypointAnnotation(np.array([[1.0, 2.0], [3.0, 0.0]]), np.ones(2, bool), 2.0)
    hm = np.zeros((2, 4, 4))
    hm[0, 1, 2] = hm[1, 3, 0] = 1.0
    assert keypoint_score(hm, truth).item() == 2.0
    assert keypoint_decode(hm, 2.0) == truth
    dec = keypoint_decode(np.full((2, 4, 4), 0.3), 2.0)
    np.testing.assert_array_equal(dec.positions, np.zeros((2, 2)))


def test_keypoint_score_rejects_out_of_frame():
    truth = KeypointAnnotation(np.array([[4.0, 0.0]]), np.ones(1, bool), 2.0)
    with pytest.raises(ModelError):
        keypoint_score(np.zeros((1, 4, 4)), truth)


@given(st.integers(0, 10_000))
def test_keypoint_decode_maximizes_score(seed):
    rng = np.random.default_rng(seed)
    hm = rng.integers(0, 4, (2, 4, 4)).astype(float)  # small ints force ties
    dec = keypoint_decode(hm, 2.0)
    best = -math.inf
    for flat in itertools.product(range(16), repeat=2):
        pos = np.array([divmod(f, 4) for f in flat], float)
        best = max(best, keypoint_score(hm, KeypointAnnotation(pos, np.ones(2, bool), 2.0)).item())
    assert keypoint_score(hm, dec).item() == best
    for j in range(2):
        scan = min((r * 4 + c for r in range(4) for c in range(4) if hm[j, r, c] == hm[j].max()))
        assert tuple(dec.positions[j]) == divmod(scan, 4)


def test_keypoint_model_dims_and_mse():
    model = build_model("keypoints", seed=0)
    with pytest.raises(ModelError):
        model.forward(np.zeros((3, 8, 8)))
    h = np.random.default_rng(0).normal(size=(4, 16, 16))
    assert mse_heatmap(h, h).item() == 0.0
    h2 = h.copy()
    h2[0, 0, 0] += 1e-3
    assert mse_heatmap(h, h2).item() > 0.0


# --- segmentation ---------------------------------------------------------------------


def test_seg_one_hot_uniform_and_loop_score():
    rng = np.random.default_rng(0)
    lab = rng.integers(0, 3, (4, 5))
    truth = LabelMap(lab, 3)
    one_hot = np.moveaxis(np.eye(3)[lab], -1, 0) * 20.0
    assert seg_decode(one_hot) == truth
    assert seg_nll(one_hot, truth).item() < 1e-8
    assert seg_nll(np.zeros((3, 4, 5)), truth).item() == pytest.approx(math.log(3), abs=1e-14)
    scores = rng.normal(size=(3, 4, 5))
    loop = sum(scores[lab[r, c], r, c] for r in range(4) for c in range(5))
    assert seg_score(scores, truth).item() == pytest.approx(loop, abs=1e-12)


def test_seg_decode_maximizes_score_exhaustively():
    rng = np.random.default_rng(4)
    for _ in range(5):
        scores = rng.integers(0, 3, (2, 3, 3)).astype(float)
        dec = seg_decode(scores)
        best = max(seg_score(scores, LabelMap(np.array(m).reshape(3, 3), 2)).item()
                   for m in itertools.product(range(2), repeat=9))
        assert seg_score(scores, dec).item() == best
        assert np.all(dec.labels[scores[0] == scores[1]] == 0)  # ties to the lowest class


def test_seg_class_mismatch():
    with pytest.raises(ModelError):
        seg_score(np.zeros((2, 3, 3)), LabelMap(np.full((3, 3), 2), 3))


def test_score_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    cases = [
        (KeypointModel.init(KeypointConfig(channels=2, height=5, width=6, keypoints=2, hidden=3), 0),
         KeypointAnnotation(np.array([[1.0, 1.0], [4.0, 5.0]]), np.ones(2, bool), 2.0)),
        (SegmentationModel.init(SegmentationConfig(channels=2, height=4, width=4, classes=3, hidden=3), 0),
         LabelMap(rng.integers(0, 3, (4, 4)), 3)),
        (SequenceModel.init(SequenceConfig(features=3, alphabet="ab ", hidden=4), 0), TokenSequence("ab")),
    ]
    for model, y in cases:
        shape = (6, 3) if model.family == "sequence" else model.input_shape()
        x = rng.uniform(size=shape)
        f = lambda z, m=model, t=y: m.score(m.forward(z), t)  # noqa: E731
        _, (g,) = T.value_and_grad(f, x)
        num = T.finite_difference_gradient(lambda z: f(T.Tensor(z)), x, 1e-6)
        assert rel_error(g, num) <= 1e-4, model.family


# --- training ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_keypoint_set():
    return generate_dataset("keypoints", {"count": 8, "height": 8, "width": 8, "keypoints": 2, "min_separation": 2.0},
                            seed=0)


def _small_model():
    return build_model("keypoints", {"height": 8, "width": 8, "keypoints": 2}, seed=0)


def test_training_is_deterministic_and_lr0_is_identity(small_keypoint_set):
    m = _small_model()
    a = train_toy(m, small_keypoint_set, 3, 0.2, seed=4, batch_size=3)
    b = train_toy(m, small_keypoint_set, 3, 0.2, seed=4, batch_size=3)
    for k in m.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    frozen = train_toy(m, small_keypoint_set, 2, 0.0, seed=4)
    for k in m.params:
        np.testing.assert_array_equal(frozen.params[k], m.params[k])


def test_training_decreases_the_surrogate(small_keypoint_set):
    hist = train_toy(_small_model(), small_keypoint_set, 20, 0.5, seed=0).history["loss"]
    assert hist[-1] < hist[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_the_epoch(small_keypoint_set):
    with pytest.raises(TrainingError) as err:
        train_toy(_small_model(), small_keypoint_set, 50, 1e6, seed=0)
    assert "epoch" in str(err.value)


def test_trained_toys_beat_chance(trained_keypoints, trained_segmentation, trained_sequence):
    for model, val in (trained_keypoints, trained_segmentation, trained_sequence):
        clean = np.mean([model.metric(model.predict(x, y), y) for x, y in val])
        assert clean >= 0.9, model.family
