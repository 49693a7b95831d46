"""
corpus.py
Corpus em bytes crus para o modelo de brinquedo.
Tokenização por byte (vocab 256) e split treino/holdout determinístico.
"""

import os
import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import entropy

from modules.errors import ConfigError

log = logging.getLogger(__name__)

BYTE_VOCAB = 256


@dataclass(frozen=True)
class Corpus:
    train: np.ndarray
    holdout: np.ndarray
    sha256: str
    path: str = ""

    @property
    def n_tokens(self) -> int:
        return int(self.train.size + self.holdout.size)


def tokenize(raw: bytes) -> np.ndarray:
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def load_corpus(path: str, train_fraction: float = 0.99) -> Corpus:
    """
    Lê o arquivo como bytes; os primeiros round(len·train_fraction) tokens vão
    para treino e o resto para holdout.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction deve estar em (0, 1), recebido {train_fraction}")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Corpus não encontrado: {path}")

    with open(path, "rb") as f:
        raw = f.read()
    if not raw:
        raise ConfigError(f"Corpus vazio: {path}")

    tokens = tokenize(raw)
    n_train = int(round(tokens.size * train_fraction))
    digest = hashlib.sha256(raw).hexdigest()

    log.info(
        f"Corpus {os.path.basename(path)}: {tokens.size} tokens "
        f"({n_train} treino / {tokens.size - n_train} holdout) | sha256 {digest[:12]}"
    )
    return Corpus(train=tokens[:n_train], holdout=tokens[n_train:], sha256=digest, path=path)


def unigram_entropy(tokens: np.ndarray) -> float:
    """Entropia unigrama em nats (linha de base do sinal de aprendizado)."""
    return float(entropy(np.bincount(tokens, minlength=BYTE_VOCAB)))
