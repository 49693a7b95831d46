"""
schedule_core.py
Avaliação pura dos schedules de learning rate (Constant, Cosine, WSD, Power)
em função do número de tokens já treinados.

Tudo em double precision; n^b é calculado como exp(b·ln n).
Nenhuma função aqui guarda estado — pode ser chamada de qualquer thread.
"""

import math
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Tuple

from modules.errors import ConfigError, ScheduleDomainError

log = logging.getLogger(__name__)

KINDS = ("constant", "cosine", "wsd", "power")
DECAY_SHAPES = ("linear", "cosine", "exponential")

# Constantes escolhidas para o Power scheduler
DEFAULT_POWER_A = 4.0
DEFAULT_POWER_B = -0.51
DEFAULT_ETA_MAX = 0.02
DEFAULT_FLOOR_RATIO = 1e-2


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str
    peak_lr: float = 0.01                  # η (constant / cosine / wsd)
    power_a: float = DEFAULT_POWER_A       # a
    power_b: float = DEFAULT_POWER_B       # b
    eta_max: float = DEFAULT_ETA_MAX       # η_max
    batch_size: int = 1                    # β, sequências por step
    warmup_tokens: int = 0
    decay_tokens: int = 0
    total_tokens: Optional[int] = None     # N
    decay_shape: str = "linear"
    floor_ratio: float = DEFAULT_FLOOR_RATIO   # só para decay exponencial
    min_lr: float = 0.0                    # piso do cosine

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"schedule.kind inválido: '{self.kind}' (use {', '.join(KINDS)})")
        if self.decay_shape not in DECAY_SHAPES:
            raise ConfigError(
                f"schedule.decay_shape inválido: '{self.decay_shape}' (use {', '.join(DECAY_SHAPES)})"
            )
        if not 0.0 < self.floor_ratio < 1.0:
            raise ConfigError(f"schedule.floor_ratio deve estar em (0, 1), recebido {self.floor_ratio}")
        if self.warmup_tokens < 0:
            raise ConfigError(f"schedule.warmup_tokens deve ser >= 0, recebido {self.warmup_tokens}")
        if self.decay_tokens < 0:
            raise ConfigError(f"schedule.decay_tokens deve ser >= 0, recebido {self.decay_tokens}")
        if self.min_lr < 0:
            raise ConfigError(f"schedule.min_lr deve ser >= 0, recebido {self.min_lr}")

        if self.total_tokens is not None:
            if self.total_tokens <= 0:
                raise ConfigError(f"schedule.total_tokens deve ser > 0, recebido {self.total_tokens}")
            if self.warmup_tokens + self.decay_tokens > self.total_tokens:
                raise ConfigError(
                    "schedule: warmup_tokens + decay_tokens "
                    f"({self.warmup_tokens} + {self.decay_tokens}) excede total_tokens ({self.total_tokens})"
                )
        elif self.kind in ("cosine", "wsd"):
            raise ConfigError(f"schedule.total_tokens é obrigatório para kind={self.kind}")

        if self.kind == "power":
            if self.power_a <= 0:
                raise ConfigError(f"schedule.power_a deve ser > 0, recebido {self.power_a}")
            if self.eta_max <= 0:
                raise ConfigError(f"schedule.eta_max deve ser > 0, recebido {self.eta_max}")
            if self.batch_size < 1:
                raise ConfigError(f"schedule.batch_size deve ser >= 1, recebido {self.batch_size}")
        elif self.peak_lr <= 0:
            raise ConfigError(f"schedule.peak_lr deve ser > 0, recebido {self.peak_lr}")

    @property
    def decay_start(self) -> Optional[int]:
        """Token a partir do qual o decay começa (None enquanto N não existe)."""
        if self.total_tokens is None or self.decay_tokens == 0:
            return None
        return self.total_tokens - self.decay_tokens

    def with_budget(self, total_tokens: int, decay_tokens: Optional[int] = None) -> "ScheduleSpec":
        """Fixa N (e opcionalmente N_decay) num spec de orçamento aberto."""
        return replace(
            self,
            total_tokens=total_tokens,
            decay_tokens=self.decay_tokens if decay_tokens is None else decay_tokens,
        )


# ─────────────────────────────────────────────────────────────────────────────
# Power learning rate
# ─────────────────────────────────────────────────────────────────────────────

def _pow(n: float, b: float) -> float:
    if b == 0:
        return 1.0
    return math.exp(b * math.log(n))


def power_lr(batch_size: float, a: float, b: float, eta_max: float, n: float) -> float:
    """η_power(n) = min(η_max, β·a·n^b)."""
    if batch_size < 1 or a <= 0 or eta_max <= 0:
        raise ScheduleDomainError(
            f"power_lr exige β >= 1, a > 0, η_max > 0 (β={batch_size}, a={a}, η_max={eta_max})"
        )
    if n < 0:
        raise ScheduleDomainError(f"power_lr: n negativo ({n})")
    if n == 0:
        if b < 0:
            raise ScheduleDomainError(
                "power_lr: n = 0 com b < 0 diverge; use o wrapper de warmup (lr_at)"
            )
        if b > 0:
            return 0.0
    return min(eta_max, batch_size * a * _pow(n, b))


def clamp_crossover(batch_size: float, a: float, b: float, eta_max: float) -> float:
    """
    Token n* a partir do qual o clamp η_max deixa de atuar:
    n* = (β·a/η_max)^(1/|b|). Retorna 0 se β·a < η_max (clamp nunca ativo).
    """
    if batch_size < 1 or a <= 0 or eta_max <= 0:
        raise ScheduleDomainError(
            f"clamp_crossover exige β >= 1, a > 0, η_max > 0 (β={batch_size}, a={a}, η_max={eta_max})"
        )
    amplitude = batch_size * a
    if amplitude < eta_max:
        return 0.0
    if b >= 0:
        raise ScheduleDomainError(f"clamp_crossover exige b < 0 (b={b}); o clamp nunca desliga")
    return math.exp(math.log(amplitude / eta_max) / abs(b))


def _power_at(spec: ScheduleSpec, n: float) -> float:
    # n = 0 é tratado como n = 1 (singularidade de n^b)
    return power_lr(spec.batch_size, spec.power_a, spec.power_b, spec.eta_max, max(n, 1))


# ─────────────────────────────────────────────────────────────────────────────
# Avaliação por fases
# ─────────────────────────────────────────────────────────────────────────────

def phase_of(spec: ScheduleSpec, n: float) -> str:
    """Fase usada por lr_at para n: 'warmup', 'stable' ou 'decay'."""
    _checar_dominio(spec, n)
    if n < spec.warmup_tokens:
        return "warmup"
    inicio_decay = spec.decay_start
    if spec.kind != "cosine" and inicio_decay is not None and n > inicio_decay:
        return "decay"
    return "stable"


def _checar_dominio(spec: ScheduleSpec, n: float):
    if n < 0:
        raise ScheduleDomainError(f"lr_at: n negativo ({n})")
    if spec.total_tokens is None:
        if spec.kind in ("cosine", "wsd"):
            raise ScheduleDomainError(f"lr_at: kind={spec.kind} exige total_tokens")
    elif n > spec.total_tokens:
        raise ScheduleDomainError(f"lr_at: n={n} excede total_tokens={spec.total_tokens}")


def _valor_entrada_stable(spec: ScheduleSpec) -> float:
    if spec.kind == "power":
        return _power_at(spec, spec.warmup_tokens)
    return spec.peak_lr


def _fator_decay(spec: ScheduleSpec, n: float) -> float:
    progresso = (n - spec.decay_start) / spec.decay_tokens
    if spec.decay_shape == "linear":
        return 1.0 - progresso
    if spec.decay_shape == "cosine":
        return 0.5 * (1.0 + math.cos(math.pi * progresso))
    return spec.floor_ratio ** progresso


def lr_at(spec: ScheduleSpec, n: float) -> float:
    """Learning rate do schedule após n tokens treinados."""
    fase = phase_of(spec, n)

    if fase == "warmup":
        return (n / spec.warmup_tokens) * _valor_entrada_stable(spec)

    if fase == "decay":
        if spec.kind == "power":
            entrada = _power_at(spec, spec.decay_start)
        else:
            entrada = spec.peak_lr
        return _fator_decay(spec, n) * entrada

    if spec.kind == "power":
        return _power_at(spec, n)
    if spec.kind == "cosine":
        span = spec.total_tokens - spec.warmup_tokens
        if span == 0:
            return spec.peak_lr
        progresso = (n - spec.warmup_tokens) / span
        return spec.min_lr + 0.5 * (spec.peak_lr - spec.min_lr) * (1.0 + math.cos(math.pi * progresso))
    return spec.peak_lr


# ─────────────────────────────────────────────────────────────────────────────
# Curvas
# ─────────────────────────────────────────────────────────────────────────────

def _pontos(start: int, end: int, stride: int) -> List[int]:
    if start >= end:
        raise ConfigError(f"emit_curve exige start < end (start={start}, end={end})")
    if stride < 1:
        raise ConfigError(f"emit_curve exige stride >= 1 (stride={stride})")
    pontos = list(range(start, end, stride))
    pontos.append(end)
    return pontos


def emit_curve(spec: ScheduleSpec, start: int, end: int, stride: int) -> List[Tuple[int, float]]:
    """Amostra lr_at em [start, end] a cada stride tokens, incluindo os extremos."""
    return [(n, lr_at(spec, n)) for n in _pontos(start, end, stride)]


def compare_curves(
    specs: Mapping[str, ScheduleSpec], start: int, end: int, stride: int
) -> List[List[float]]:
    """Linhas [tokens, lr_nome1, lr_nome2, ...] na ordem de specs."""
    return [[n] + [lr_at(s, n) for s in specs.values()] for n in _pontos(start, end, stride)]


# ─────────────────────────────────────────────────────────────────────────────
# Construtores a partir de orçamento de tokens (usados pelo sweep)
# ─────────────────────────────────────────────────────────────────────────────

def _fases_do_orcamento(total_tokens: int, warmup_tokens: int, decay_fraction: float) -> Tuple[int, int]:
    if not 0.0 <= decay_fraction < 1.0:
        raise ConfigError(f"decay_fraction deve estar em [0, 1), recebido {decay_fraction}")
    decay = int(round(decay_fraction * total_tokens))
    warmup = min(warmup_tokens, total_tokens - decay)
    if warmup < warmup_tokens:
        log.warning(f"warmup recortado de {warmup_tokens} para {warmup} tokens (orçamento {total_tokens})")
    return warmup, decay


def wsd_for_budget(
    peak_lr: float,
    total_tokens: int,
    warmup_tokens: int = 0,
    decay_fraction: float = 0.1,
    decay_shape: str = "linear",
) -> ScheduleSpec:
    warmup, decay = _fases_do_orcamento(total_tokens, warmup_tokens, decay_fraction)
    return ScheduleSpec(
        kind="wsd", peak_lr=peak_lr, total_tokens=total_tokens,
        warmup_tokens=warmup, decay_tokens=decay, decay_shape=decay_shape,
    )


def cosine_for_budget(
    peak_lr: float, total_tokens: int, warmup_tokens: int = 0, min_lr: float = 0.0
) -> ScheduleSpec:
    warmup, _ = _fases_do_orcamento(total_tokens, warmup_tokens, 0.0)
    return ScheduleSpec(
        kind="cosine", peak_lr=peak_lr, total_tokens=total_tokens,
        warmup_tokens=warmup, min_lr=min_lr,
    )


def power_for_budget(
    batch_size: int,
    a: float = DEFAULT_POWER_A,
    b: float = DEFAULT_POWER_B,
    eta_max: float = DEFAULT_ETA_MAX,
    warmup_tokens: int = 0,
    total_tokens: Optional[int] = None,
    decay_fraction: float = 0.1,
    decay_shape: str = "exponential",
    floor_ratio: float = DEFAULT_FLOOR_RATIO,
) -> ScheduleSpec:
    """Power scheduler; sem total_tokens o stable fica aberto (sem decay)."""
    decay = 0
    warmup = warmup_tokens
    if total_tokens is not None:
        warmup, decay = _fases_do_orcamento(total_tokens, warmup_tokens, decay_fraction)
    return ScheduleSpec(
        kind="power", power_a=a, power_b=b, eta_max=eta_max, batch_size=batch_size,
        warmup_tokens=warmup, decay_tokens=decay, total_tokens=total_tokens,
        decay_shape=decay_shape, floor_ratio=floor_ratio,
    )


def figure_specs(base: ScheduleSpec, batch_size: Optional[int] = None) -> Dict[str, ScheduleSpec]:
    """
    Os três schedules lado a lado (cosine, wsd, power) com as mesmas fases do spec base.
    Usado pelo comando schedule-compare.
    """
    if base.total_tokens is None:
        raise ConfigError("schedule-compare exige schedule.total_tokens")
    beta = batch_size or base.batch_size
    return {
        "cosine": ScheduleSpec(
            kind="cosine", peak_lr=base.peak_lr, total_tokens=base.total_tokens,
            warmup_tokens=base.warmup_tokens, min_lr=base.min_lr,
        ),
        "wsd": ScheduleSpec(
            kind="wsd", peak_lr=base.peak_lr, total_tokens=base.total_tokens,
            warmup_tokens=base.warmup_tokens, decay_tokens=base.decay_tokens,
            decay_shape=base.decay_shape, floor_ratio=base.floor_ratio,
        ),
        "power": ScheduleSpec(
            kind="power", power_a=base.power_a, power_b=base.power_b, eta_max=base.eta_max,
            batch_size=beta, total_tokens=base.total_tokens,
            warmup_tokens=base.warmup_tokens, decay_tokens=base.decay_tokens,
            decay_shape=base.decay_shape, floor_ratio=base.floor_ratio,
        ),
    }
