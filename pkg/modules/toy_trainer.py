"""
toy_trainer.py
Treino do modelo de brinquedo: inicialização com plano µP, AdamW com LR por grupo,
schedule indexado por tokens, avaliação no holdout, grad check e coord check.

Convenções:
- cada step consome β·sequence_length tokens
- o LR do step é lr_at(schedule, tokens_seen) ANTES do step (step 1 usa n = 0)
- um run é single-thread e determinístico dado (seed, config)
"""

import json
import math
import time
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.corpus import Corpus
from modules.errors import ConfigError, DivergenceError
from modules.mup import MupConfig, MupPlan
from modules.schedule_core import ScheduleSpec, lr_at
from modules.toy_model import ModelConfig, Params, ToyTransformer, param_shapes

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "powerlr-ckpt"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1

    def __post_init__(self):
        if self.kind != "adam":
            raise ConfigError(f"train.optimizer.kind só aceita 'adam', recebido '{self.kind}'")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"train.optimizer: beta1/beta2 devem estar em [0, 1) ({self.beta1}, {self.beta2})")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("train.optimizer: eps deve ser > 0 e weight_decay >= 0")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    total_tokens: int
    schedule: ScheduleSpec
    mup: MupConfig
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    eval_tokens: int = 8192
    log_interval_tokens: int = 0   # 0 = só o último step

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size deve ser >= 1, recebido {self.batch_size}")
        if self.total_tokens < 1:
            raise ConfigError(f"train.total_tokens deve ser >= 1, recebido {self.total_tokens}")
        if self.eval_tokens < 1:
            raise ConfigError(f"train.eval_tokens deve ser >= 1, recebido {self.eval_tokens}")
        if self.schedule.kind == "power" and self.schedule.batch_size != self.batch_size:
            raise ConfigError(
                f"schedule.batch_size ({self.schedule.batch_size}) deve ser igual a "
                f"train.batch_size ({self.batch_size}) no Power scheduler"
            )
        # o schedule precisa cobrir todos os steps do treino
        if self.schedule.total_tokens is not None and self.schedule.total_tokens != self.total_tokens:
            raise ConfigError(
                f"schedule.total_tokens ({self.schedule.total_tokens}) deve ser igual a "
                f"train.total_tokens ({self.total_tokens})"
            )


@dataclass
class TrainState:
    model: ToyTransformer
    plan: MupPlan
    params: Params
    groups: Dict[str, str]
    m: Params
    v: Params
    rng: np.random.Generator
    tokens_seen: int = 0
    step: int = 0


@dataclass
class TrainResult:
    history: List[Tuple[int, float]]
    eval_ppl: float
    final_train_loss: float
    wall_seconds: float
    steps: int


# ─────────────────────────────────────────────────────────────────────────────
# Inicialização
# ─────────────────────────────────────────────────────────────────────────────

def _seeds(seed: int):
    init_seq, data_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(data_seq)


def init_model(mcfg: ModelConfig, plan: MupPlan, seed: int) -> TrainState:
    """Sorteia os pesos com as std do plano; determinístico dado o seed."""
    if plan.d_model != mcfg.d_model or plan.d_head != mcfg.d_head:
        raise ConfigError(
            f"plano (d_model={plan.d_model}, d_head={plan.d_head}) inconsistente com o modelo "
            f"(d_model={mcfg.d_model}, d_head={mcfg.d_head})"
        )

    init_rng, data_rng = _seeds(seed)
    params, groups = {}, {}
    for nome, (shape, grupo) in param_shapes(mcfg).items():
        regra = plan.groups[grupo]
        if grupo == "vector_params":
            # ganhos em 1, bias em 0
            valor = 0.0 if nome == "head_bias" else regra.init_std
            params[nome] = np.full(shape, valor, dtype=np.float64)
        else:
            params[nome] = init_rng.normal(0.0, regra.init_std, size=shape)
        groups[nome] = grupo

    model = ToyTransformer(
        mcfg,
        emb_multiplier=plan.groups["input_embedding"].forward_multiplier,
        residual_multiplier=plan.residual_multiplier,
        attention_scale=plan.attention_scale,
    )
    n_params = sum(p.size for p in params.values())
    log.info(f"Modelo iniciado: {n_params} parâmetros | {plan.parametrization} | m_width={plan.width_multiplier:g}")
    return TrainState(
        model=model, plan=plan, params=params, groups=groups,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        rng=data_rng,
    )


# ─────────────────────────────────────────────────────────────────────────────
# Dados
# ─────────────────────────────────────────────────────────────────────────────

def sample_batch(tokens: np.ndarray, batch_size: int, seq_len: int, rng: np.random.Generator):
    if tokens.size < seq_len + 1:
        raise ConfigError(f"stream com {tokens.size} tokens é menor que sequence_length+1 ({seq_len + 1})")
    inicios = rng.integers(0, tokens.size - seq_len, size=batch_size)
    janela = inicios[:, None] + np.arange(seq_len + 1)[None, :]
    seqs = tokens[janela]
    return seqs[:, :-1], seqs[:, 1:]


def evaluate(state: TrainState, tokens: np.ndarray, n_tokens: int, batch_size: int = 16) -> float:
    """Cross-entropy média (nats) em janelas contíguas e disjuntas do stream."""
    L = state.model.mcfg.sequence_length
    n_janelas = min(max(n_tokens // L, 1), (tokens.size - 1) // L)
    if n_janelas < 1:
        raise ConfigError(f"holdout com {tokens.size} tokens não comporta uma janela de {L + 1}")
    inicios = np.arange(n_janelas) * L
    total, contagem = 0.0, 0
    for i in range(0, n_janelas, batch_size):
        bloco = inicios[i:i + batch_size]
        janela = bloco[:, None] + np.arange(L + 1)[None, :]
        seqs = tokens[janela]
        loss = state.model.loss(state.params, seqs[:, :-1], seqs[:, 1:])
        total += loss * len(bloco)
        contagem += len(bloco)
    return total / contagem


# ─────────────────────────────────────────────────────────────────────────────
# Otimizador
# ─────────────────────────────────────────────────────────────────────────────

def adamw_step(state: TrainState, grads: Params, base_lr: float, opt: OptimizerConfig) -> Dict[str, float]:
    """Um passo AdamW; weight decay só em matrizes. Retorna o LR usado por grupo."""
    state.step += 1
    bc1 = 1.0 - opt.beta1 ** state.step
    bc2 = 1.0 - opt.beta2 ** state.step
    lrs = {}
    for nome, p in state.params.items():
        grupo = state.groups[nome]
        lr = state.plan.lr_for(grupo, base_lr)
        lrs[grupo] = lr
        g = grads[nome]
        m, v = state.m[nome], state.v[nome]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        if p.ndim == 2 and opt.weight_decay > 0:
            update = update + opt.weight_decay * p
        p -= lr * update
    return lrs


# ─────────────────────────────────────────────────────────────────────────────
# Treino
# ─────────────────────────────────────────────────────────────────────────────

def train(state: TrainState, data: Corpus, tcfg: TrainConfig) -> TrainResult:
    mcfg = state.model.mcfg
    tokens_por_step = tcfg.batch_size * mcfg.sequence_length
    if tcfg.total_tokens < tokens_por_step:
        raise ConfigError(
            f"train.total_tokens ({tcfg.total_tokens}) menor que um step (β·L = {tokens_por_step})"
        )
    n_steps = tcfg.total_tokens // tokens_por_step
    intervalo = tcfg.log_interval_tokens or tcfg.total_tokens

    log.info(
        f"Treino: {n_steps} steps | β={tcfg.batch_size} | T={tcfg.total_tokens} | "
        f"schedule={tcfg.schedule.kind} | seed={tcfg.seed}"
    )
    inicio = time.perf_counter()
    history: List[Tuple[int, float]] = []
    proximo_log = intervalo
    loss = float("nan")

    for _ in range(n_steps):
        base_lr = lr_at(tcfg.schedule, state.tokens_seen)
        x, y = sample_batch(data.train, tcfg.batch_size, mcfg.sequence_length, state.rng)
        loss, cache = state.model.forward(state.params, x, y)
        if not math.isfinite(loss):
            raise DivergenceError(
                f"loss não-finita ({loss}) em tokens_seen={state.tokens_seen}", state.tokens_seen
            )
        grads = state.model.backward(state.params, cache)
        adamw_step(state, grads, base_lr, tcfg.optimizer)
        state.tokens_seen += tokens_por_step

        if not all(np.isfinite(p).all() for p in state.params.values()):
            raise DivergenceError(f"parâmetros não-finitos em tokens_seen={state.tokens_seen}", state.tokens_seen)

        if state.tokens_seen >= proximo_log or state.tokens_seen + tokens_por_step > tcfg.total_tokens:
            history.append((state.tokens_seen, loss))
            log.debug(f"  tokens={state.tokens_seen} loss={loss:.4f} lr={base_lr:.3g}")
            while proximo_log <= state.tokens_seen:
                proximo_log += intervalo

    eval_ce = evaluate(state, data.holdout, tcfg.eval_tokens)
    eval_ppl = math.exp(eval_ce) if eval_ce < 700 else float("inf")
    if not math.isfinite(eval_ppl):
        raise DivergenceError(f"perplexidade de avaliação não-finita ({eval_ce})", state.tokens_seen)

    wall = time.perf_counter() - inicio
    log.info(f"Treino concluído: loss={loss:.4f} | eval_ppl={eval_ppl:.3f} | {wall:.1f}s")
    return TrainResult(history=history, eval_ppl=eval_ppl, final_train_loss=loss, wall_seconds=wall, steps=n_steps)


# ─────────────────────────────────────────────────────────────────────────────
# Diagnósticos
# ─────────────────────────────────────────────────────────────────────────────

def grad_check(
    state: TrainState,
    batch: Tuple[np.ndarray, np.ndarray],
    epsilon: float = 1e-5,
    samples_per_param: int = 8,
    seed: int = 0,
) -> float:
    """
    Erro relativo máximo |analítico − numérico| / (|analítico| + |numérico| + 1e-12)
    sobre coordenadas sorteadas de cada tensor (diferenças centrais).
    """
    x, y = batch
    _, cache = state.model.forward(state.params, x, y)
    grads = state.model.backward(state.params, cache)
    rng = np.random.default_rng(seed)
    pior = 0.0
    for nome, p in state.params.items():
        plano = p.reshape(-1)
        n = min(samples_per_param, plano.size)
        for i in rng.choice(plano.size, size=n, replace=False):
            original = plano[i]
            plano[i] = original + epsilon
            mais = state.model.loss(state.params, x, y)
            plano[i] = original - epsilon
            menos = state.model.loss(state.params, x, y)
            plano[i] = original
            numerico = (mais - menos) / (2.0 * epsilon)
            analitico = grads[nome].reshape(-1)[i]
            erro = abs(analitico - numerico) / (abs(analitico) + abs(numerico) + 1e-12)
            if erro > pior:
                pior = erro
                log.debug(f"  grad_check {nome}[{i}]: analítico={analitico:.6g} numérico={numerico:.6g}")
    return pior


def coord_check(
    mcfgs: Sequence[ModelConfig],
    plans: Sequence[MupPlan],
    seed: int = 0,
    batch_size: int = 8,
) -> List[Tuple[int, float]]:
    """RMS do stream residual na inicialização, um forward por largura, mesmos tokens."""
    if len(mcfgs) != len(plans):
        raise ConfigError("coord_check: uma config de modelo por plano")
    tabela = []
    for mcfg, plan in zip(mcfgs, plans):
        state = init_model(mcfg, plan, seed)
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, mcfg.vocab_size, size=(batch_size, mcfg.sequence_length))
        x, _ = state.model.residual_stream(state.params, idx)
        tabela.append((mcfg.d_model, float(np.sqrt(np.mean(x * x)))))
    return tabela


# ─────────────────────────────────────────────────────────────────────────────
# Checkpoints
# ─────────────────────────────────────────────────────────────────────────────

def save_checkpoint(path: str, state: TrainState) -> str:
    """
    Um .npz: `__meta__` (JSON com formato, versão, ModelConfig, tokens_seen, step)
    e um array por parâmetro, com o mesmo nome do parâmetro.
    """
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": asdict(state.model.mcfg),
        "tokens_seen": state.tokens_seen,
        "step": state.step,
        "parametrization": state.plan.parametrization,
    }
    with open(path, "wb") as f:
        np.savez(f, __meta__=np.array(json.dumps(meta)), **state.params)
    log.info(f"Checkpoint salvo: {path}")
    return path


def load_checkpoint(path: str) -> Tuple[ModelConfig, Params, int]:
    with np.load(path, allow_pickle=False) as dados:
        meta = json.loads(str(dados["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: checkpoint com cabeçalho desconhecido ({meta.get('format')}, v{meta.get('version')})")
        params = {k: dados[k].copy() for k in dados.files if k != "__meta__"}
    return ModelConfig(**meta["model"]), params, int(meta["tokens_seen"])
