import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmtsad.config import RunConfig
from mmtsad.condenser import condense
from mmtsad.data import SeriesDataset, TextDoc
from mmtsad.model import MindModel, prepare_docs, prepare_windows
from mmtsad.pipeline import make_tokenizer, score_series, train
from mmtsad.recon import (CoverageError, Reconstructor, accumulate_scores, fold_matrix, interleaved_masks, loss_rec,
                          reconstruct, step_weights, threshold_labels)
from mmtsad.tensor import NonFiniteError, Tensor, grad_check

from gradcases import tiny_config, tiny_corpus

D_MODEL = 8


def _head(p=3, channels=2, seed=0):
    return Reconstructor(D_MODEL, 2, 16, p * channels, np.random.default_rng(seed))


def test_reconstruct_shape():
    rng = np.random.default_rng(1)
    head = _head()
    h, z = Tensor(rng.normal(size=(4, D_MODEL))), Tensor(rng.normal(size=(4, D_MODEL)))
    assert reconstruct(h, z, head, 12, 3, 2).shape == (12, 2)
    assert reconstruct(Tensor(rng.normal(size=(5, 4, D_MODEL))), None, head, 12, 3, 2).shape == (5, 12, 2)


def test_reconstruct_overlapping_patches_fold_back():
    rng = np.random.default_rng(2)
    fold = fold_matrix(10, 4, 2)
    assert fold.shape == (10, 16) and np.allclose(fold.sum(axis=1), 1.0)
    head = _head(p=4, channels=1)
    out = reconstruct(Tensor(rng.normal(size=(4, D_MODEL))), None, head, 10, 4, 1, fold)
    assert out.shape == (10, 1)
    assert fold_matrix(12, 3, 3) is None


def test_dropped_text_rows_never_change_output():
    rng = np.random.default_rng(3)
    head = _head()
    h = Tensor(rng.normal(size=(4, D_MODEL)))
    zero = Tensor(np.zeros(4))
    a = reconstruct(h, condense(Tensor(rng.normal(size=(4, D_MODEL))), zero), head, 12, 3, 2).data
    b = reconstruct(h, condense(Tensor(rng.normal(size=(4, D_MODEL)) * 9), zero), head, 12, 3, 2).data
    assert np.array_equal(a, b)
    # partially dropped rows: only kept rows matter
    f = Tensor([1.0, 0.0, 1.0, 0.0])
    z1 = rng.normal(size=(4, D_MODEL))
    z2 = z1.copy()
    z2[[1, 3]] = rng.normal(size=(2, D_MODEL))
    assert np.array_equal(reconstruct(h, condense(Tensor(z1), f), head, 12, 3, 2).data,
                          reconstruct(h, condense(Tensor(z2), f), head, 12, 3, 2).data)


def test_reconstruct_rejects_bad_shapes_and_non_finite():
    rng = np.random.default_rng(4)
    head = _head()
    with pytest.raises(ValueError):
        reconstruct(Tensor(rng.normal(size=(4, D_MODEL))), Tensor(rng.normal(size=(3, D_MODEL))), head, 12, 3, 2)
    head.ff.fc1.bias.data[:] = 1e308
    head.ff.fc2.weight.data[:] = 10.0
    with pytest.raises(NonFiniteError, match="reconstruction head"):
        reconstruct(Tensor(rng.normal(size=(4, D_MODEL))), None, head, 12, 3, 2)


def test_reconstruction_gradient_reaches_text_branch():
    cfg = tiny_config()
    rng = np.random.default_rng(5)
    ds, docs = tiny_corpus(rng)
    model = MindModel(cfg, 1, np.random.default_rng(6))
    tok = make_tokenizer(cfg)
    batch = prepare_windows(ds, docs, cfg, tok, stride=6)
    table = prepare_docs(docs, tok)
    flags = np.zeros((len(batch), model.n_patches), dtype=bool)
    flags[:, ::2] = True
    target = "text_encoder.layer.ff.fc2.weight"
    leaf = model.parameters()[target]
    owner = model.text_encoder.layer.ff.fc2

    def rec(w):
        owner.weight = w
        try:
            return model(batch, table, None, None, train=False, mask_flags=flags).losses["L_Rec"]
        finally:
            owner.weight = leaf

    rep = grad_check(rec, [leaf.data.copy()], coords=12)
    assert rep["max_rel_err"] <= 1e-4
    w = Tensor(leaf.data.copy(), requires_grad=True)
    rec(w).backward()
    assert np.abs(w.grad).max() > 0


# -- loss ----------------------------------------------------------------------

def test_loss_rec_examples():
    x = np.random.default_rng(7).normal(size=(6, 2))
    assert loss_rec(Tensor(x), Tensor(x)).item() == 0.0
    y = x.copy()
    y[3, 1] += 0.5
    assert loss_rec(Tensor(x), Tensor(y)).item() == pytest.approx(0.25 / 12, abs=1e-15)
    assert loss_rec(Tensor(x), Tensor(y), raw_sum=True).item() == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(ValueError):
        loss_rec(Tensor(x), Tensor(x[:5]))


@given(st.integers(0, 1000))
@settings(max_examples=30)
def test_loss_rec_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 6, 2)), rng.normal(size=(3, 6, 2))
    assert loss_rec(Tensor(a), Tensor(b)).item() == loss_rec(Tensor(b), Tensor(a)).item()


# -- masked inference helpers ----------------------------------------------------

@given(st.integers(1, 20), st.sampled_from([0.0, 0.25, 0.5, 1.0 / 3, 1.0]))
def test_interleaved_masks_cover_each_patch_once(n, ratio):
    masks = interleaved_masks(n, ratio)
    total = np.sum(masks, axis=0)
    if ratio == 0:
        assert len(masks) == 1 and not total.any()
    else:
        assert np.array_equal(total, np.ones(n))


def test_step_weights_partition_unity():
    w, p, l = 10, 4, 2
    masks = interleaved_masks(4, 0.5)
    assert np.allclose(sum(step_weights(m, w, p, l) for m in masks), 1.0)
    assert np.array_equal(step_weights(np.array([True, False]), 6, 3, 3), [1, 1, 1, 0, 0, 0])


# -- accumulation and thresholds ----------------------------------------------------

def test_accumulate_perfect_reconstruction_is_zero():
    scores, counts = accumulate_scores(np.array([0, 2, 4]), np.zeros((3, 4)), 8)
    assert not scores.any() and counts.tolist() == [1, 1, 2, 2, 2, 2, 1, 1]


def test_accumulate_averages_covering_windows():
    errs = np.array([[1.0, 1.0, 1.0], [3.0, 3.0, 3.0]])
    scores, _ = accumulate_scores(np.array([0, 2]), errs, 5)
    assert scores.tolist() == [1.0, 1.0, 2.0, 3.0, 3.0]


def test_accumulate_reports_gaps():
    with pytest.raises(CoverageError):
        accumulate_scores(np.array([0, 5]), np.ones((2, 3)), 8)


def test_threshold_examples():
    s = np.random.default_rng(8).normal(size=100)
    assert threshold_labels(s, 0.1).sum() == 10
    assert threshold_labels(np.ones(10), 0.3).tolist() == [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    assert threshold_labels([3, 1, 2, 0], 0.5).tolist() == [1, 0, 1, 0]
    with pytest.raises(ValueError):
        threshold_labels(s, 0.0)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=60), st.floats(0.01, 0.99))
def test_threshold_count_and_order(scores, r):
    flags = threshold_labels(scores, r)
    k = int(np.ceil(r * len(scores) - 1e-9))
    assert flags.sum() == k
    s = np.asarray(scores)
    if 0 < k < len(s):
        assert s[flags == 1].min() >= s[flags == 0].max()


# -- scoring on a small trained model ----------------------------------------------

def _sinusoid(n, seed=0):
    t = np.arange(n, dtype=np.float64)
    x = np.sin(2 * np.pi * t / 24) + 0.5 * np.sin(2 * np.pi * t / 9)
    return t, x + 0.05 * np.random.default_rng(seed).normal(size=n)


SMALL = RunConfig().replace(
    data={"window_length": 48, "train_stride": 4, "patch_size": 6, "patch_stride": 6},
    model={"d_model": 32, "layers": 1, "heads": 2, "ff_mult": 2, "vocab_size": 512},
    train={"epochs": 6})


@pytest.fixture(scope="module")
def small_model():
    t, x = _sinusoid(700)
    docs = [TextDoc(10.0, 40.0, "weather mild")]
    res = train(SMALL, SeriesDataset(x[:500, None], t[:500]), docs)
    return res.model, t, x, docs


def test_corrupted_timestamp_is_argmax(small_model):
    model, t, x, docs = small_model
    y = x[500:].copy()
    y[100] += 3.0
    scores = score_series(model, SeriesDataset(y[:, None], t[500:]), docs).scores
    assert abs(int(np.argmax(scores)) - 100) <= 1


def test_scores_affine_invariant(small_model):
    model, t, x, docs = small_model
    ds = SeriesDataset(x[500:, None], t[500:])
    base = score_series(model, ds, docs).scores
    moved = score_series(model, SeriesDataset(3.7 * x[500:, None] - 12.0, t[500:]), docs).scores
    assert np.max(np.abs(base - moved)) <= 1e-9
    assert np.all(base >= 0)


def test_scores_bit_identical_on_rerun(small_model):
    model, t, x, docs = small_model
    ds = SeriesDataset(x[500:, None], t[500:])
    assert np.array_equal(score_series(model, ds, docs).scores, score_series(model, ds, docs).scores)


def test_stride_w_matches_stride_1_at_singly_covered_start(small_model):
    model, t, x, docs = small_model
    # same series for both so the series-variance scale matches
    ds = SeriesDataset(x[500:692, None], t[500:692])
    dense = score_series(model, ds, docs, stride=1)
    coarse = score_series(model, ds, docs, stride=48)
    once = np.nonzero(dense.counts == 1)[0]
    assert once.size and once[0] == 0
    assert dense.scores[0] == coarse.scores[0]


def test_joint_loss_trend_over_first_steps():
    from mmtsad.synth import synth_multimodal

    corpus = synth_multimodal(0, 1200, ("spike", "level_shift"))
    log = []
    cfg = RunConfig().replace(model={"d_model": 32, "heads": 2})
    train(cfg, corpus.dataset.split(0.7)[0], corpus.docs, max_steps=50, step_log=log)
    total = np.array([r["L_total"] for r in log])
    assert len(total) == 50
    ma = np.convolve(total, np.ones(10) / 10, mode="valid")
    slope = np.polyfit(np.arange(ma.size), ma, 1)[0]
    assert slope < 0 and ma[-1] < ma[0]
    for r in log:
        assert r["L_total"] == pytest.approx(r["L_MA"] + r["L_CL"] + r["L_Rec"], rel=1e-12)
