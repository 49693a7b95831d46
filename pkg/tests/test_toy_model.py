import numpy as np
import pytest
from scipy.special import softmax

from modules.errors import ConfigError
from modules.mup import MupConfig, derive_plan
from modules.toy_model import ModelConfig, ToyTransformer, _rope, _rope_tables, param_shapes
from modules.toy_trainer import grad_check, init_model

PEQUENO = ModelConfig(n_layers=1, d_model=16, n_heads=2, d_head=8, mlp_hidden=32, vocab_size=32, sequence_length=8)


def _estado(mcfg=PEQUENO, init_std=0.5, seed=0, **mup_kwargs):
    mup = MupConfig(d_base=mcfg.d_model, d_model=mcfg.d_model, d_head=mcfg.d_head, init_std=init_std, **mup_kwargs)
    return init_model(mcfg, derive_plan(mup), seed)


def _lote(mcfg=PEQUENO, batch=2, seed=1):
    rng = np.random.default_rng(seed)
    seqs = rng.integers(0, mcfg.vocab_size, size=(batch, mcfg.sequence_length + 1))
    return seqs[:, :-1], seqs[:, 1:]


@pytest.mark.parametrize("kwargs", [
    dict(d_model=64, n_heads=3, d_head=16),
    dict(d_model=15, n_heads=1, d_head=15),
    dict(vocab_size=1),
    dict(n_layers=0),
])
def test_invalid_model_config(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


def test_param_groups():
    shapes = param_shapes(ModelConfig(n_layers=2))
    assert shapes["tok_emb"] == ((256, 64), "input_embedding")
    assert shapes["head"] == ((64, 256), "output_embedding")
    assert shapes["l1.w_down"] == ((128, 64), "internal_matrix")
    assert shapes["final_norm"][1] == "vector_params"
    assert sum(1 for _, g in shapes.values() if g == "internal_matrix") == 2 * 7


def test_rope_inverse_undoes_rotation():
    cos, sin = _rope_tables(8, 8)
    x = np.random.default_rng(0).normal(size=(2, 2, 8, 8))
    assert np.allclose(_rope(_rope(x, cos, sin), cos, sin, inverse=True), x, atol=1e-12)


def test_grad_check_one_layer_double_precision():
    estado = _estado()
    assert grad_check(estado, _lote(), epsilon=1e-5, samples_per_param=8) < 1e-4


def test_grad_check_with_multipliers():
    estado = _estado(m_emb=3.0, m_res=0.5)
    assert grad_check(estado, _lote(), epsilon=1e-5, samples_per_param=6, seed=3) < 1e-4


def test_head_bias_gradient_with_zero_head():
    estado = _estado()
    estado.params["head"][:] = 0.0
    x, y = _lote(batch=3)
    _, cache = estado.model.forward(estado.params, x, y)
    grads = estado.model.backward(estado.params, cache)
    V = PEQUENO.vocab_size
    esperado = softmax(np.zeros(V)) - np.bincount(y.reshape(-1), minlength=V) / y.size
    assert np.allclose(grads["head_bias"], esperado, atol=1e-14)


def test_duplicated_batch_gives_same_gradient():
    estado = _estado()
    x, y = _lote()
    _, c1 = estado.model.forward(estado.params, x, y)
    g1 = estado.model.backward(estado.params, c1)
    _, c2 = estado.model.forward(estado.params, np.concatenate([x, x]), np.concatenate([y, y]))
    g2 = estado.model.backward(estado.params, c2)
    for nome in g1:
        assert np.allclose(g1[nome], g2[nome], rtol=1e-10, atol=1e-14), nome


def test_causal_mask_future_tokens_do_not_change_early_logits():
    estado = _estado()
    x, _ = _lote()
    x2 = x.copy()
    x2[:, -1] = (x2[:, -1] + 1) % PEQUENO.vocab_size
    a, _ = estado.model.residual_stream(estado.params, x)
    b, _ = estado.model.residual_stream(estado.params, x2)
    assert np.allclose(a[:, :-1], b[:, :-1], atol=1e-14)
    assert not np.allclose(a[:, -1], b[:, -1])


def test_sequence_longer_than_config_raises():
    estado = _estado()
    with pytest.raises(ConfigError):
        estado.model.residual_stream(estado.params, np.zeros((1, PEQUENO.sequence_length + 1), dtype=np.int64))


def test_default_attention_scale_is_one_over_d_head():
    assert ToyTransformer(PEQUENO).attention_scale == 1.0 / PEQUENO.d_head
