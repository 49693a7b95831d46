"""
powerlaw_fit.py
γ = η_opt / β e ajuste da lei de potência γ = a·T^b por mínimos quadrados
no espaço log-log. Previsão do learning rate ótimo: η_opt = β·a·T^b.
"""

import csv
import math
import logging
from dataclasses import dataclass
from typing import Iterable, List

import numpy as np
from scipy.stats import linregress

from modules.errors import ConfigError, FitError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepPoint:
    tokens: int
    gamma: float

    def __post_init__(self):
        if self.tokens < 1:
            raise ConfigError(f"SweepPoint.tokens deve ser >= 1, recebido {self.tokens}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ConfigError(f"SweepPoint.gamma deve ser positivo e finito, recebido {self.gamma}")


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    rmse_log: float
    n_points: int

    def predict(self, batch_size: float, tokens: float) -> float:
        return predict_opt_lr(self.a, self.b, batch_size, tokens)


def gamma_of(eta_opt: float, batch_size: float) -> float:
    """γ = η_opt / β."""
    if batch_size < 1:
        raise ConfigError(f"gamma_of exige β >= 1, recebido {batch_size}")
    if eta_opt <= 0:
        raise ConfigError(f"gamma_of exige η_opt > 0, recebido {eta_opt}")
    return eta_opt / batch_size


def fit_power_law(points: Iterable[SweepPoint]) -> FitResult:
    """OLS de ln γ = ln a + b·ln T. Determinístico, sem pesos."""
    points = list(points)
    if len({p.tokens for p in points}) < 2:
        raise FitError(
            f"fit_power_law precisa de >= 2 valores distintos de T (recebidos {len(points)} pontos)"
        )

    log_t = np.log(np.array([p.tokens for p in points], dtype=np.float64))
    log_g = np.log(np.array([p.gamma for p in points], dtype=np.float64))

    reg = linregress(log_t, log_g)
    residuos = log_g - (reg.intercept + reg.slope * log_t)
    rmse = float(np.sqrt(np.mean(residuos ** 2)))

    resultado = FitResult(a=math.exp(reg.intercept), b=float(reg.slope), rmse_log=rmse, n_points=len(points))
    log.info(f"Ajuste: γ = {resultado.a:.4g}·T^({resultado.b:.4f}) | rmse_log={rmse:.3g} | {len(points)} pontos")
    return resultado


def predict_opt_lr(a: float, b: float, batch_size: float, tokens: float) -> float:
    """η_opt = β·a·T^b."""
    if a <= 0:
        raise ConfigError(f"predict_opt_lr exige a > 0, recebido {a}")
    if batch_size < 1:
        raise ConfigError(f"predict_opt_lr exige β >= 1, recebido {batch_size}")
    if tokens < 1:
        raise ConfigError(f"predict_opt_lr exige T >= 1, recebido {tokens}")
    return batch_size * a * math.exp(b * math.log(tokens))


# ─────────────────────────────────────────────────────────────────────────────
# CSV
# ─────────────────────────────────────────────────────────────────────────────

def read_points_csv(path: str) -> List[SweepPoint]:
    """Lê pontos com cabeçalho `tokens,gamma`."""
    pontos = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        leitor = csv.DictReader(f)
        if leitor.fieldnames is None or [c.strip() for c in leitor.fieldnames] != ["tokens", "gamma"]:
            raise ConfigError(f"{path}: cabeçalho esperado 'tokens,gamma', recebido {leitor.fieldnames}")
        for linha_num, row in enumerate(leitor, start=2):
            try:
                pontos.append(SweepPoint(tokens=int(float(row["tokens"])), gamma=float(row["gamma"])))
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{path}: linha {linha_num} inválida ({e})")
    log.info(f"{len(pontos)} pontos lidos de {path}")
    return pontos


def write_fit_csv(result: FitResult, path: str) -> str:
    with open(path, "w", encoding="utf-8", newline="") as f:
        escritor = csv.writer(f)
        escritor.writerow(["a", "b", "rmse_log", "n_points"])
        escritor.writerow([f"{result.a:.10g}", f"{result.b:.10g}", f"{result.rmse_log:.10g}", result.n_points])
    return path
