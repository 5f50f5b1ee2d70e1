import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmtsad import tensor as T
from mmtsad.data import TextDoc, select_docs
from mmtsad.tensor import Tensor, grad_check
from mmtsad.text_branch import (CrossViewFusion, PromptOptions, TextEncoder, Tokenizer, encode_text, gen_endotext,
                                pool_exo)

D = 8


def _encoder(seed=0, embedding_dim=None):
    return TextEncoder(256, D, 2, 16, 32, np.random.default_rng(seed), embedding_dim=embedding_dim)


def test_endotext_ramp_statistics():
    (s,) = gen_endotext(np.array([[1.0, 2, 3, 4, 5, 6]]), 6)
    assert s.startswith("patch stats: mean 3.500 min 1.000 max 6.000 median 3.500 trend rising toplag ")


def test_endotext_constant_patch():
    (s,) = gen_endotext(np.full((1, 6), 0.25), 6)
    assert "trend flat" in s and "min 0.250 max 0.250" in s and "mean 0.250" in s
    assert s.endswith("toplag 0")


def test_endotext_falling_and_dead_zone():
    falling, gentle = gen_endotext(np.array([[3.0, 2, 1, 0], [0.0, 0.001, 0.002, 0.003]]), 4)
    assert "trend falling" in falling and "trend flat" in gentle


def test_endotext_toplag_periodic():
    (s,) = gen_endotext(np.array([[1.0, -1, 1, -1, 1, -1]]), 6)
    assert s.endswith("toplag 2")
    (short,) = gen_endotext(np.array([[1.0, 2.0]]), 2)
    assert short.endswith("toplag 0")


def test_endotext_multichannel_averages():
    # channels interleaved per time step: (p=2, D=2)
    (s,) = gen_endotext(np.array([[0.0, 2.0, 1.0, 4.0]]), 2, 2)
    assert "mean 1.750" in s and "min 1.000" in s and "max 2.500" in s


@given(arrays(np.float64, (3, 6), elements=st.floats(-5, 5)))
@settings(max_examples=50)
def test_endotext_deterministic_and_fixed_format(x):
    a, b = gen_endotext(x, 6), gen_endotext(x.copy(), 6)
    assert a == b and len(a) == 3
    for s in a:
        assert "-0.000" not in s
        for tok in s.split():
            if tok.replace(".", "").replace("-", "").isdigit() and "." in tok:
                assert len(tok.split(".")[1]) == 3


def test_prompt_toggles():
    x = np.array([[1.0, 2, 3, 4, 5, 6]])
    assert "min" not in gen_endotext(x, 6, options=PromptOptions(drop_minmaxmedian=True))[0]
    assert "trend" not in gen_endotext(x, 6, options=PromptOptions(drop_trend=True))[0]
    assert "toplag" not in gen_endotext(x, 6, options=PromptOptions(drop_lag=True))[0]
    assert gen_endotext(x, 6, options=PromptOptions(template_variant=True))[0].startswith("segment summary")


def test_tokenizer_ids_in_range_and_stable():
    tok = Tokenizer(300)
    text = "Alert: abrupt spike of 3.75 units at sensor X-17!"
    a, b = tok.encode(text), Tokenizer(300).encode(text)
    assert a == b and all(0 <= i < 300 for i in a)


@given(st.text(min_size=1, max_size=80).filter(lambda s: s.strip()))
@settings(max_examples=100)
def test_tokenizer_ids_bounded(text):
    ids = Tokenizer(500).encode(text)
    assert ids and all(0 <= i < 500 for i in ids)


def test_tokenizer_number_buckets():
    tok = Tokenizer()
    assert tok.tokenize("1.01 0.99") == ["<num4>", "<num4>"]
    assert tok.tokenize("1e9 -400") == ["<num4>", "e", "<num36>", "<num-40>"]
    assert tok.tokenize("x²") == ["x", "²"]


def test_encode_identical_strings():
    enc, tok = _encoder(), Tokenizer(256)
    out = encode_text(["trend rising", "weather mild", "trend rising"], enc, tok).data
    assert out.shape == (3, D)
    assert np.array_equal(out[0], out[2])
    assert not np.allclose(out[0], out[1])


def test_encode_rejects_empty():
    with pytest.raises(ValueError):
        encode_text(["ok", "  "], _encoder(), Tokenizer(256))


def test_padding_does_not_change_pooled_vector():
    enc, tok = _encoder(), Tokenizer(256)
    alone = encode_text(["short text"], enc, tok).data
    padded = encode_text(["short text", "a considerably longer text with many more tokens in it"], enc, tok).data
    assert np.allclose(alone[0], padded[0], atol=1e-12)


def test_embedding_path_dimension():
    enc = _encoder(embedding_dim=5)
    a = enc.encode_embeddings(np.ones((2, 5)))
    b = encode_text(["x"], enc, Tokenizer(256))
    assert a.shape[-1] == b.shape[-1] == D


def test_pool_exo_counts():
    rng = np.random.default_rng(0)
    token = Tensor(rng.normal(size=D))
    assert pool_exo(None, token).shape == (1, D)
    assert pool_exo(Tensor(rng.normal(size=(3, D))), token).shape == (3, D)
    docs = [TextDoc(float(i), float(i + 1 + i % 4), f"doc {i}") for i in range(12)]
    picked = select_docs(docs, 0.0, 100.0, k_max=8)
    assert len(picked) == 8
    spans = [docs[i].end - docs[i].start for i in picked]
    assert spans == sorted(spans, reverse=True)
    # equal overlap goes to the earlier start
    ties = [i for i in picked if docs[i].end - docs[i].start == spans[0]]
    assert ties == sorted(ties)


def _fusion(seed=1):
    return CrossViewFusion(D, 2, 16, np.random.default_rng(seed))


def test_fusion_single_key_shape():
    rng = np.random.default_rng(2)
    out = _fusion()(Tensor(rng.normal(size=(5, D))), Tensor(rng.normal(size=(1, D))))
    assert out.shape == (5, D)


def test_fusion_zero_output_projection_is_residual():
    f = _fusion()
    for lin in (f.attn.o, f.ff.fc2):
        lin.weight.data[:] = 0.0
        lin.bias.data[:] = 0.0
    rng = np.random.default_rng(3)
    h = Tensor(rng.normal(size=(4, D)))
    out = f(h, Tensor(rng.normal(size=(2, D)))).data
    ref = T.layer_norm(T.layer_norm(h, f.norm1.gain, f.norm1.bias), f.norm2.gain, f.norm2.bias).data
    assert np.array_equal(out, ref)


@pytest.mark.parametrize("k", [1, 3, 8])
def test_fusion_shape_independent_of_k(k):
    rng = np.random.default_rng(k)
    assert _fusion()(Tensor(rng.normal(size=(6, D))), Tensor(rng.normal(size=(k, D)))).shape == (6, D)


def test_fusion_key_order_invariant():
    rng = np.random.default_rng(4)
    h, c = rng.normal(size=(5, D)), rng.normal(size=(4, D))
    f = _fusion()
    a = f(Tensor(h), Tensor(c)).data
    b = f(Tensor(h), Tensor(c[[2, 0, 3, 1]])).data
    assert np.allclose(a, b, atol=1e-12)


def test_fusion_gradient_reaches_both_inputs():
    rng = np.random.default_rng(5)
    f = _fusion()
    w = rng.normal(size=(4, D))
    rep = grad_check(lambda h, c: (f(h, c) * w).sum(), [rng.normal(size=(4, D)), rng.normal(size=(3, D))])
    assert rep["max_rel_err"] <= 1e-4
    h = Tensor(rng.normal(size=(4, D)), requires_grad=True)
    c = Tensor(rng.normal(size=(3, D)), requires_grad=True)
    (f(h, c) * w).sum().backward()
    assert np.abs(h.grad).max() > 0 and np.abs(c.grad).max() > 0
