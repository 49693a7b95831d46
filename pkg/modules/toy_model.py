"""
toy_model.py
Transformer decoder-only mínimo em numpy, com forward e backward escritos à mão.

Arquitetura: embedding de bytes → N blocos pre-norm (RMSNorm → atenção causal com
RoPE → residual; RMSNorm → MLP SwiGLU → residual) → RMSNorm final → cabeça linear
com bias. Tudo em float64.

Multiplicadores do µP entram no forward (não nos pesos):
  - saída da embedding × m_emb
  - saída de cada bloco × m_res antes da soma residual
  - logits de atenção × attention_scale (1/d_head no µP)
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from modules.errors import ConfigError

log = logging.getLogger(__name__)

RMS_EPS = 1e-6
ROPE_BASE = 10000.0

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_head: int = 16
    mlp_hidden: int = 128
    vocab_size: int = 256
    sequence_length: int = 64

    def __post_init__(self):
        for nome in ("n_layers", "d_model", "n_heads", "d_head", "mlp_hidden", "vocab_size", "sequence_length"):
            valor = getattr(self, nome)
            if not isinstance(valor, int) or valor < 1:
                raise ConfigError(f"model.{nome} deve ser inteiro >= 1, recebido {valor!r}")
        if self.d_model != self.n_heads * self.d_head:
            raise ConfigError(
                f"model.d_model ({self.d_model}) deve ser n_heads·d_head ({self.n_heads}·{self.d_head})"
            )
        if self.vocab_size < 2:
            raise ConfigError(f"model.vocab_size deve ser >= 2, recebido {self.vocab_size}")
        if self.d_head % 2 != 0:
            raise ConfigError(f"model.d_head deve ser par (RoPE gira pares de coordenadas), recebido {self.d_head}")


def param_shapes(mcfg: ModelConfig) -> Dict[str, Tuple[Tuple[int, ...], str]]:
    """Nome → (shape, grupo µP). A ordem define a ordem de sorteio na inicialização."""
    d, h, v = mcfg.d_model, mcfg.mlp_hidden, mcfg.vocab_size
    shapes = {"tok_emb": ((v, d), "input_embedding")}
    for l in range(mcfg.n_layers):
        shapes[f"l{l}.attn_norm"] = ((d,), "vector_params")
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"l{l}.{w}"] = ((d, d), "internal_matrix")
        shapes[f"l{l}.mlp_norm"] = ((d,), "vector_params")
        shapes[f"l{l}.w_gate"] = ((d, h), "internal_matrix")
        shapes[f"l{l}.w_up"] = ((d, h), "internal_matrix")
        shapes[f"l{l}.w_down"] = ((h, d), "internal_matrix")
    shapes["final_norm"] = ((d,), "vector_params")
    shapes["head"] = ((d, v), "output_embedding")
    shapes["head_bias"] = ((v,), "vector_params")
    return shapes


# ─────────────────────────────────────────────────────────────────────────────
# Blocos elementares (forward devolve cache, backward consome)
# ─────────────────────────────────────────────────────────────────────────────

def _rmsnorm(x, g):
    r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)
    n = x / r
    return n * g, (n, r, g)


def _rmsnorm_back(dy, cache):
    n, r, g = cache
    dg = (dy * n).reshape(-1, n.shape[-1]).sum(axis=0)
    dn = dy * g
    dx = (dn - n * np.mean(dn * n, axis=-1, keepdims=True)) / r
    return dx, dg


def _rope_tables(seq_len: int, d_head: int):
    freqs = ROPE_BASE ** (-np.arange(0, d_head, 2, dtype=np.float64) / d_head)
    ang = np.outer(np.arange(seq_len, dtype=np.float64), freqs)   # (T, dh/2)
    return np.cos(ang), np.sin(ang)


def _rope(x, cos, sin, inverse=False):
    # x: (B, H, T, dh); gira os pares (2i, 2i+1)
    if inverse:
        sin = -sin
    pares = x.reshape(*x.shape[:-1], -1, 2)
    x0, x1 = pares[..., 0], pares[..., 1]
    out = np.empty_like(pares)
    out[..., 0] = x0 * cos - x1 * sin
    out[..., 1] = x0 * sin + x1 * cos
    return out.reshape(x.shape)


def _silu(x):
    return x * expit(x)


def _silu_grad(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


class ToyTransformer:
    """Forward/backward do modelo para um ModelConfig e multiplicadores fixos."""

    def __init__(
        self,
        mcfg: ModelConfig,
        emb_multiplier: float = 1.0,
        residual_multiplier: float = 1.0,
        attention_scale: float = None,
    ):
        self.mcfg = mcfg
        self.m_emb = emb_multiplier
        self.m_res = residual_multiplier
        self.attention_scale = attention_scale if attention_scale is not None else 1.0 / mcfg.d_head
        self._cos, self._sin = _rope_tables(mcfg.sequence_length, mcfg.d_head)
        causal = np.tril(np.ones((mcfg.sequence_length, mcfg.sequence_length), dtype=bool))
        self._causal = causal

    # ── atenção ──────────────────────────────────────────────────────────────

    def _heads(self, x):
        B, T, _ = x.shape
        return x.reshape(B, T, self.mcfg.n_heads, self.mcfg.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x):
        B, H, T, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)

    def _attention(self, params, l, h):
        T = h.shape[1]
        cos, sin = self._cos[:T], self._sin[:T]
        q = _rope(self._heads(h @ params[f"l{l}.wq"]), cos, sin)
        k = _rope(self._heads(h @ params[f"l{l}.wk"]), cos, sin)
        v = self._heads(h @ params[f"l{l}.wv"])
        s = (q @ k.transpose(0, 1, 3, 2)) * self.attention_scale
        s = np.where(self._causal[:T, :T], s, -np.inf)
        p = softmax(s, axis=-1)
        o = self._merge(p @ v)
        out = o @ params[f"l{l}.wo"]
        return out, (h, q, k, v, p, o)

    def _attention_back(self, params, l, dout, cache, grads):
        h, q, k, v, p, o = cache
        T = h.shape[1]
        cos, sin = self._cos[:T], self._sin[:T]
        grads[f"l{l}.wo"] += _flat(o).T @ _flat(dout)
        do = self._heads(dout @ params[f"l{l}.wo"].T)
        dv = p.transpose(0, 1, 3, 2) @ do
        dp = do @ v.transpose(0, 1, 3, 2)
        ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) * self.attention_scale
        dq = _rope(ds @ k, cos, sin, inverse=True)
        dk = _rope(ds.transpose(0, 1, 3, 2) @ q, cos, sin, inverse=True)
        dh = np.zeros_like(h)
        for nome, d in (("wq", dq), ("wk", dk), ("wv", dv)):
            dm = self._merge(d)
            grads[f"l{l}.{nome}"] += _flat(h).T @ _flat(dm)
            dh += dm @ params[f"l{l}.{nome}"].T
        return dh

    # ── MLP SwiGLU ───────────────────────────────────────────────────────────

    def _mlp(self, params, l, h):
        g = h @ params[f"l{l}.w_gate"]
        u = h @ params[f"l{l}.w_up"]
        z = _silu(g) * u
        return z @ params[f"l{l}.w_down"], (h, g, u, z)

    def _mlp_back(self, params, l, dout, cache, grads):
        h, g, u, z = cache
        grads[f"l{l}.w_down"] += _flat(z).T @ _flat(dout)
        dz = dout @ params[f"l{l}.w_down"].T
        dg = dz * u * _silu_grad(g)
        du = dz * _silu(g)
        grads[f"l{l}.w_gate"] += _flat(h).T @ _flat(dg)
        grads[f"l{l}.w_up"] += _flat(h).T @ _flat(du)
        return dg @ params[f"l{l}.w_gate"].T + du @ params[f"l{l}.w_up"].T

    # ── modelo completo ──────────────────────────────────────────────────────

    def residual_stream(self, params: Params, idx: np.ndarray) -> Tuple[np.ndarray, List]:
        """Stream residual após o último bloco + caches por camada."""
        if idx.shape[1] > self.mcfg.sequence_length:
            raise ConfigError(f"sequência de {idx.shape[1]} tokens excede sequence_length={self.mcfg.sequence_length}")
        x = params["tok_emb"][idx] * self.m_emb
        caches = []
        for l in range(self.mcfg.n_layers):
            h1, c_n1 = _rmsnorm(x, params[f"l{l}.attn_norm"])
            a, c_att = self._attention(params, l, h1)
            x = x + self.m_res * a
            h2, c_n2 = _rmsnorm(x, params[f"l{l}.mlp_norm"])
            m, c_mlp = self._mlp(params, l, h2)
            x = x + self.m_res * m
            caches.append((c_n1, c_att, c_n2, c_mlp))
        return x, caches

    def forward(self, params: Params, idx: np.ndarray, targets: np.ndarray):
        """Cross-entropy média (nats) e o cache para o backward."""
        x, caches = self.residual_stream(params, idx)
        hf, c_nf = _rmsnorm(x, params["final_norm"])
        logits = hf @ params["head"] + params["head_bias"]
        logp = log_softmax(logits, axis=-1)
        nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        loss = float(nll.mean())
        return loss, (idx, targets, caches, c_nf, hf, logp)

    def loss(self, params: Params, idx: np.ndarray, targets: np.ndarray) -> float:
        return self.forward(params, idx, targets)[0]

    def backward(self, params: Params, cache) -> Params:
        idx, targets, caches, c_nf, hf, logp = cache
        grads = {k: np.zeros_like(p) for k, p in params.items()}

        dlogits = np.exp(logp)
        np.put_along_axis(
            dlogits, targets[..., None],
            np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0, axis=-1,
        )
        dlogits /= targets.size

        grads["head"] += _flat(hf).T @ _flat(dlogits)
        grads["head_bias"] += _flat(dlogits).sum(axis=0)
        dx, grads["final_norm"] = _rmsnorm_back(dlogits @ params["head"].T, c_nf)

        for l in reversed(range(self.mcfg.n_layers)):
            c_n1, c_att, c_n2, c_mlp = caches[l]
            dh2 = self._mlp_back(params, l, dx * self.m_res, c_mlp, grads)
            dx2, grads[f"l{l}.mlp_norm"] = _rmsnorm_back(dh2, c_n2)
            dx = dx + dx2
            dh1 = self._attention_back(params, l, dx * self.m_res, c_att, grads)
            dx1, grads[f"l{l}.attn_norm"] = _rmsnorm_back(dh1, c_n1)
            dx = dx + dx1

        np.add.at(grads["tok_emb"], idx, dx * self.m_emb)
        return grads


def _flat(x):
    return x.reshape(-1, x.shape[-1])
