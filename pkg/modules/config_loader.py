"""
config_loader.py
Lê o config.yaml (seções schedule, mup, model, train, sweep) e valida cada seção
no dataclass do módulo correspondente.

Chave desconhecida em qualquer seção é erro (pega typo em grid de sweep).
Números aceitam notação científica em string ("1e13"), que o YAML não converte sozinho.
"""

import os
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

import yaml

from modules.errors import ConfigError
from modules.mup import MupConfig
from modules.schedule_core import ScheduleSpec
from modules.sweep import SweepGrid
from modules.toy_model import ModelConfig
from modules.toy_trainer import OptimizerConfig, TrainConfig

log = logging.getLogger(__name__)


def _num(conv: Callable) -> Callable:
    def converter(chave: str, valor: Any):
        if isinstance(valor, bool):
            raise ConfigError(f"{chave}: esperado número, recebido {valor!r}")
        try:
            if conv is int:
                f = float(valor)
                if not f.is_integer():
                    raise ValueError(f"{valor!r} não é inteiro")
                return int(f)
            return float(valor)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{chave}: valor numérico inválido ({e})")
    return converter


def _opcional(conv: Callable) -> Callable:
    def converter(chave, valor):
        return None if valor is None else conv(chave, valor)
    return converter


def _lista(conv: Callable) -> Callable:
    def converter(chave, valor):
        if not isinstance(valor, (list, tuple)):
            valor = [valor]
        return tuple(conv(f"{chave}[{i}]", v) for i, v in enumerate(valor))
    return converter


def _texto(chave, valor):
    if not isinstance(valor, str):
        raise ConfigError(f"{chave}: esperado texto, recebido {valor!r}")
    return valor


INT, FLOAT = _num(int), _num(float)

# chave → conversor. Ausente no YAML = default do dataclass.
SCHEDULE_KEYS = {
    "kind": _texto, "peak_lr": FLOAT, "power_a": FLOAT, "power_b": FLOAT, "eta_max": FLOAT,
    "batch_size": INT, "warmup_tokens": INT, "decay_tokens": INT, "total_tokens": _opcional(INT),
    "decay_shape": _texto, "floor_ratio": FLOAT, "min_lr": FLOAT,
}
MUP_KEYS = {
    "d_base": INT, "d_model": INT, "d_head": INT, "m_emb": FLOAT, "m_res": FLOAT,
    "init_std": FLOAT, "base_lr": FLOAT,
}
MODEL_KEYS = {
    "n_layers": INT, "d_model": INT, "n_heads": INT, "d_head": INT, "mlp_hidden": INT,
    "vocab_size": INT, "sequence_length": INT,
}
OPTIMIZER_KEYS = {"kind": _texto, "beta1": FLOAT, "beta2": FLOAT, "eps": FLOAT, "weight_decay": FLOAT}
TRAIN_KEYS = {
    "batch_size": INT, "total_tokens": INT, "seed": INT, "eval_tokens": INT,
    "log_interval_tokens": INT, "corpus": _texto, "train_fraction": FLOAT, "optimizer": None,
}
SWEEP_KEYS = {
    "etas": _lista(FLOAT), "betas": _lista(INT), "token_budgets": _lista(INT), "seeds": _lista(INT),
    "schedule_kind": _texto, "decay_fraction": FLOAT, "warmup_tokens": INT,
    "decay_shape": _opcional(_texto), "power_as": _lista(FLOAT), "power_bs": _lista(FLOAT),
    "eta_max": FLOAT, "top_k": INT, "eval_tokens": INT, "model_sizes": None,
}
SECTIONS = ("schedule", "mup", "model", "train", "sweep")


def _converter_secao(nome: str, bruto: Any, chaves: Dict[str, Optional[Callable]]) -> Dict[str, Any]:
    if bruto is None:
        return {}
    if not isinstance(bruto, dict):
        raise ConfigError(f"seção '{nome}' deve ser um mapeamento")
    desconhecidas = sorted(set(bruto) - set(chaves))
    if desconhecidas:
        raise ConfigError(f"chave desconhecida em '{nome}': {', '.join(f'{nome}.{k}' for k in desconhecidas)}")
    saida = {}
    for chave, valor in bruto.items():
        conv = chaves[chave]
        saida[chave] = valor if conv is None else conv(f"{nome}.{chave}", valor)
    return saida


@dataclass
class TrainSection:
    batch_size: int = 8
    total_tokens: int = 1_000_000
    seed: int = 0
    eval_tokens: int = 8192
    log_interval_tokens: int = 0
    corpus: str = ""
    train_fraction: float = 0.99
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass
class ToolConfig:
    schedule: Optional[ScheduleSpec] = None
    mup: Optional[MupConfig] = None
    model: Optional[ModelConfig] = None
    train: Optional[TrainSection] = None
    sweep: Optional[SweepGrid] = None
    path: str = ""

    def require(self, *secoes: str):
        faltando = [s for s in secoes if getattr(self, s) is None]
        if faltando:
            raise ConfigError(f"{self.path or 'config'}: seção obrigatória ausente: {', '.join(faltando)}")

    def mup_for_model(self) -> MupConfig:
        """Seção mup alinhada à largura do modelo (d_model/d_head vêm da seção model)."""
        self.require("mup", "model")
        from dataclasses import replace
        return replace(self.mup, d_model=self.model.d_model, d_head=self.model.d_head)

    def train_config(self) -> TrainConfig:
        self.require("schedule", "mup", "model", "train")
        t = self.train
        return TrainConfig(
            batch_size=t.batch_size, total_tokens=t.total_tokens, schedule=self.schedule,
            mup=self.mup_for_model(), optimizer=t.optimizer, seed=t.seed,
            eval_tokens=t.eval_tokens, log_interval_tokens=t.log_interval_tokens,
        )


def parse_config(dados: Dict[str, Any], path: str = "") -> ToolConfig:
    if dados is None:
        dados = {}
    if not isinstance(dados, dict):
        raise ConfigError(f"{path or 'config'}: o documento deve ser um mapeamento de seções")
    desconhecidas = sorted(set(dados) - set(SECTIONS))
    if desconhecidas:
        raise ConfigError(f"seção desconhecida: {', '.join(desconhecidas)}")

    cfg = ToolConfig(path=path)

    if "schedule" in dados:
        cfg.schedule = ScheduleSpec(**_converter_secao("schedule", dados["schedule"], SCHEDULE_KEYS))
    if "model" in dados:
        cfg.model = ModelConfig(**_converter_secao("model", dados["model"], MODEL_KEYS))
    if "mup" in dados:
        secao = _converter_secao("mup", dados["mup"], MUP_KEYS)
        if cfg.model is not None:
            secao.setdefault("d_model", cfg.model.d_model)
            secao.setdefault("d_head", cfg.model.d_head)
        cfg.mup = MupConfig(**secao)

    if "train" in dados:
        secao = _converter_secao("train", dados["train"], TRAIN_KEYS)
        secao["optimizer"] = OptimizerConfig(
            **_converter_secao("train.optimizer", secao.get("optimizer"), OPTIMIZER_KEYS)
        )
        cfg.train = TrainSection(**secao)
        if cfg.schedule is not None and cfg.model is not None and cfg.mup is not None:
            cfg.train_config()   # valida as invariantes cruzadas já no load

    if "sweep" in dados:
        secao = _converter_secao("sweep", dados["sweep"], SWEEP_KEYS)
        tamanhos = secao.pop("model_sizes", None)
        if tamanhos is None:
            if cfg.model is None:
                raise ConfigError("sweep.model_sizes ausente e sem seção 'model' para usar como tamanho único")
            modelos = {"default": cfg.model}
        else:
            if not isinstance(tamanhos, dict) or not tamanhos:
                raise ConfigError("sweep.model_sizes deve mapear rótulo → config de modelo")
            modelos = {
                str(rotulo): ModelConfig(**_converter_secao(f"sweep.model_sizes.{rotulo}", m, MODEL_KEYS))
                for rotulo, m in tamanhos.items()
            }
        if cfg.mup is not None:
            secao["mup"] = cfg.mup
        if cfg.train is not None:
            secao["optimizer"] = cfg.train.optimizer
        cfg.sweep = SweepGrid(model_sizes=modelos, **secao)

    return cfg


def carregar_config(config_path: str) -> ToolConfig:
    if not os.path.exists(config_path):
        if os.path.exists("config.yaml.exemplo"):
            log.error("Copie o config.yaml.exemplo para config.yaml e ajuste as seções.")
        raise FileNotFoundError(f"Arquivo de config não encontrado: {config_path}")

    with open(config_path, "r", encoding="utf-8") as f:
        try:
            dados = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{config_path}: YAML inválido ({e})")
    cfg = parse_config(dados, path=config_path)
    log.info(f"Config carregada: {config_path} (seções: {', '.join(s for s in SECTIONS if getattr(cfg, s) is not None)})")
    return cfg
