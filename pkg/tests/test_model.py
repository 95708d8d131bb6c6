import numpy as np
import pytest

from csatrans.ast_ingest import build_vocab
from csatrans.autodiff import cross_entropy, gradcheck, no_grad
from csatrans.errors import ConfigError, PrefixTooLong
from csatrans.model import CsaTrans, ModelConfig, make_batch, preset


@pytest.fixture(scope="module")
def setup(toy_records):
    from conftest import tiny_config

    recs = toy_records[:6]
    cfg = tiny_config()
    nv, sv = build_vocab(recs, "node_types", 100), build_vocab(recs, "summary", 100)
    model = CsaTrans(cfg, len(nv), len(sv), np.random.default_rng(0)).eval()
    return cfg, model, recs, nv, sv


def test_presets():
    py, java = preset("python"), preset("java")
    assert py.d_model == 512 and py.d_dec == 512
    assert java.d_model == 768 and java.d_pe == 128
    assert preset("python", heads=4).heads == 4
    with pytest.raises(ConfigError):
        preset("rust")


@pytest.mark.parametrize("kw", [dict(attention_mode="dense"), dict(heads=3), dict(sparsity_reduction="max")])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_config_from_dict_rejects_unknown():
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"d_pee": 4})
    assert ModelConfig.from_dict({"preset": "java", "heads": 4}).d_emb == 640


def test_make_batch_layout(setup):
    cfg, _, recs, nv, sv = setup
    b = make_batch(recs, nv, sv, cfg)
    n = max(len(r.ast) for r in recs)
    assert b.type_ids.shape == (6, n)
    assert (b.node_valid.sum(1) == [len(r.ast) for r in recs]).all()
    assert (b.dec_in[:, 0] == 2).all()
    # decoder targets are the inputs shifted by one, ending in EOS
    k = min(len(recs[0].summary_tokens), cfg.max_summary)
    np.testing.assert_array_equal(b.dec_in[0, 1 : k + 1], b.dec_out[0, :k])
    assert b.dec_out[0, k] == 3


def test_output_shapes(setup):
    cfg, model, recs, nv, sv = setup
    b = make_batch(recs, nv, sv, cfg)
    with no_grad():
        memory, probs = model.encode(b)
        logits = model.decode(memory, b.node_valid, b.dec_in)
    assert memory.shape == (6, b.type_ids.shape[1], cfg.d_model)
    assert logits.shape == b.dec_in.shape + (len(sv),)
    assert len(probs) == cfg.enc_layers


def test_decoder_is_causal(setup):
    cfg, model, recs, nv, sv = setup
    b = make_batch(recs[:1], nv, sv, cfg)
    with no_grad():
        memory, _ = model.encode(b)
        prefix = np.array([[2, 5, 6, 7]])
        base = model.decode(memory, b.node_valid, prefix).data
        changed = prefix.copy()
        changed[0, 3] = 9
        out = model.decode(memory, b.node_valid, changed).data
    np.testing.assert_allclose(out[:, :3], base[:, :3], atol=1e-12)
    assert not np.allclose(out[:, 3], base[:, 3])


def test_bos_only_prefix(setup):
    cfg, model, recs, nv, sv = setup
    b = make_batch(recs[:2], nv, sv, cfg)
    with no_grad():
        memory, _ = model.encode(b)
        step = model.decode_step(memory, b.node_valid, np.full((2, 1), 2)).data
    e = np.exp(step - step.max(-1, keepdims=True))
    np.testing.assert_allclose((e / e.sum(-1, keepdims=True)).sum(-1), 1.0, atol=1e-12)
    with pytest.raises(PrefixTooLong):
        model.decode(memory, b.node_valid, np.full((2, cfg.max_summary + 2), 2))


def test_padding_invariance(setup):
    cfg, model, recs, nv, sv = setup
    tight = make_batch(recs, nv, sv, cfg)
    loose = make_batch(recs, nv, sv, cfg, pad_nodes_to=tight.type_ids.shape[1] + 7)
    with no_grad():
        a, _ = model.encode(tight)
        b, _ = model.encode(loose)
        la = model.decode(a, tight.node_valid, tight.dec_in).data
        lb = model.decode(b, loose.node_valid, loose.dec_in).data
    n = tight.type_ids.shape[1]
    valid = tight.node_valid
    np.testing.assert_allclose(a.data[valid], b.data[:, :n][valid], atol=1e-6)
    np.testing.assert_allclose(la, lb, atol=1e-6)


def test_all_true_mask_reduces_to_vanilla(setup):
    cfg, model, recs, nv, sv = setup
    b = make_batch(recs, nv, sv, cfg)
    vanilla = CsaTrans(tiny_vanilla(cfg), len(nv), len(sv), np.random.default_rng(1)).eval()
    vanilla.load_state_dict(model.state_dict())
    for attn in model.encoder_attention():
        attn.frozen_mask = np.ones((1, 1, 1, 1), dtype=bool)
    try:
        with no_grad():
            x, _ = model.encode(b)
            y, probs = vanilla.encode(b)
    finally:
        for attn in model.encoder_attention():
            attn.frozen_mask = None
    assert probs == []
    np.testing.assert_allclose(x.data, y.data, atol=1e-6)


def tiny_vanilla(cfg):
    return ModelConfig.from_dict({**cfg.to_dict(), "attention_mode": "vanilla"})


def test_frozen_mask_end_to_end_gradcheck(toy_records):
    from conftest import tiny_config

    recs = toy_records[:2]
    cfg = tiny_config(d_pe=4, d_emb=4, d_dec=4, d_ff=8, p_max=6, max_summary=4)
    nv, sv = build_vocab(recs, "node_types", 40), build_vocab(recs, "summary", 40)
    model = CsaTrans(cfg, len(nv), len(sv), np.random.default_rng(2))
    b = make_batch(recs, nv, sv, cfg)
    n = b.type_ids.shape[1]
    frozen = np.random.default_rng(3).random((len(recs), cfg.heads, n, n)) < 0.5
    for attn in model.encoder_attention():
        attn.frozen_mask = frozen
        attn.straight_through = False
    enc, dec = model.encoder[0], model.decoder[0]
    params = [model.cse.layers[0].rel_parent, enc.attn.q.weight, enc.attn.clusters,
              dec.cross_attn.k.weight, model.out.bias]

    def loss(*_):
        memory, probs = model.encode(b)
        ce = cross_entropy(model.decode(memory, b.node_valid, b.dec_in), b.dec_out)
        return ce + model.sparsity_term(probs, b.node_valid)

    assert gradcheck(loss, params) < 1e-3


def test_eval_is_deterministic(setup):
    cfg, model, recs, nv, sv = setup
    b = make_batch(recs, nv, sv, cfg)
    with no_grad():
        x1, _ = model.encode(b)
        x2, _ = model.encode(b)
    np.testing.assert_array_equal(x1.data, x2.data)
