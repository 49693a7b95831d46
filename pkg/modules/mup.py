"""
mup.py
Plano de grupos de parâmetros do µP: learning rate, std de inicialização e
multiplicadores de forward para cada grupo, a partir de uma config base.

Regras aplicadas:
- multiplicador de embedding (m_emb) na saída da embedding de entrada
- multiplicador residual (m_res) na saída de cada bloco de atenção/MLP
- matrizes internas: std = init_std / √m_width, lr = η / m_width
- logits de atenção divididos por d_head (não por √d_head)

Só escala com a largura; profundidade fica fixa.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict

from modules.errors import ConfigError

log = logging.getLogger(__name__)

GROUPS = ("input_embedding", "output_embedding", "internal_matrix", "vector_params")

# ganhos de norm começam em 1 (convenção de layer norm)
VECTOR_INIT_GAIN = 1.0


@dataclass(frozen=True)
class MupConfig:
    d_base: int = 256
    d_model: int = 256
    d_head: int = 64
    m_emb: float = 1.0
    m_res: float = 1.0
    init_std: float = 0.02
    base_lr: float = 0.01

    def __post_init__(self):
        for nome in ("d_base", "d_model", "d_head"):
            valor = getattr(self, nome)
            if not isinstance(valor, int) or valor < 1:
                raise ConfigError(f"mup.{nome} deve ser inteiro >= 1, recebido {valor!r}")
        for nome in ("m_emb", "m_res", "init_std", "base_lr"):
            valor = getattr(self, nome)
            if not (valor > 0 and math.isfinite(valor)):
                raise ConfigError(f"mup.{nome} deve ser real positivo, recebido {valor!r}")
        if self.d_model % self.d_head != 0:
            raise ConfigError(
                f"mup.d_model ({self.d_model}) deve ser divisível por mup.d_head ({self.d_head})"
            )


@dataclass(frozen=True)
class ParamGroupPlan:
    group: str
    lr: float
    init_std: float
    forward_multiplier: float


@dataclass(frozen=True)
class MupPlan:
    """Um ParamGroupPlan por grupo + o que é aplicado fora dos pesos."""
    groups: Dict[str, ParamGroupPlan]
    width_multiplier: float = 1.0
    residual_multiplier: float = 1.0
    attention_scale: float = 1.0
    d_model: int = 0
    d_head: int = 0
    parametrization: str = "mup"
    base_lr: float = 0.0
    base_init_std: float = 0.0

    def lr_for(self, group: str, base_lr: float) -> float:
        """LR do grupo para o LR base do step (o que o schedule devolveu)."""
        if group == "internal_matrix":
            return base_lr / self.width_multiplier
        return base_lr

    def rows(self):
        return [self.groups[g] for g in GROUPS]


def width_multiplier(cfg: MupConfig) -> float:
    """m_width = d_model / d_base."""
    return cfg.d_model / cfg.d_base


def attention_logit_scale(d_head: int) -> float:
    """µP divide os logits por d_head (a parametrização padrão usa √d_head)."""
    if d_head < 1:
        raise ConfigError(f"d_head deve ser >= 1, recebido {d_head}")
    return 1.0 / d_head


def standard_attention_scale(d_head: int) -> float:
    if d_head < 1:
        raise ConfigError(f"d_head deve ser >= 1, recebido {d_head}")
    return 1.0 / math.sqrt(d_head)


def derive_plan(cfg: MupConfig) -> MupPlan:
    m_width = width_multiplier(cfg)
    groups = {
        "input_embedding": ParamGroupPlan(
            group="input_embedding", lr=cfg.base_lr, init_std=cfg.init_std,
            forward_multiplier=cfg.m_emb,
        ),
        # saída sem multiplicador próprio (embeddings não amarradas)
        "output_embedding": ParamGroupPlan(
            group="output_embedding", lr=cfg.base_lr, init_std=cfg.init_std,
            forward_multiplier=1.0,
        ),
        "internal_matrix": ParamGroupPlan(
            group="internal_matrix", lr=cfg.base_lr / m_width,
            init_std=cfg.init_std / math.sqrt(m_width), forward_multiplier=1.0,
        ),
        "vector_params": ParamGroupPlan(
            group="vector_params", lr=cfg.base_lr, init_std=VECTOR_INIT_GAIN,
            forward_multiplier=1.0,
        ),
    }
    log.debug(f"Plano µP: m_width={m_width:g}, lr interno={groups['internal_matrix'].lr:g}")
    return MupPlan(
        groups=groups,
        width_multiplier=m_width,
        residual_multiplier=cfg.m_res,
        attention_scale=attention_logit_scale(cfg.d_head),
        d_model=cfg.d_model,
        d_head=cfg.d_head,
        parametrization="mup",
        base_lr=cfg.base_lr,
        base_init_std=cfg.init_std,
    )


def standard_plan(cfg: MupConfig) -> MupPlan:
    """
    Parametrização padrão com a mesma largura: sem escala de lr/init por largura,
    multiplicadores em 1 e logits divididos por √d_head. Contraste do coord check.
    """
    groups = {
        g: ParamGroupPlan(
            group=g, lr=cfg.base_lr,
            init_std=VECTOR_INIT_GAIN if g == "vector_params" else cfg.init_std,
            forward_multiplier=1.0,
        )
        for g in GROUPS
    }
    return MupPlan(
        groups=groups,
        width_multiplier=1.0,
        residual_multiplier=1.0,
        attention_scale=standard_attention_scale(cfg.d_head),
        d_model=cfg.d_model,
        d_head=cfg.d_head,
        parametrization="standard",
        base_lr=cfg.base_lr,
        base_init_std=cfg.init_std,
    )
