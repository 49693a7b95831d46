import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from modules.corpus import Corpus


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="roda os testes marcados como slow")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: sweep de bancada (minutos); só roda com --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    pular = pytest.mark.skip(reason="use --runslow para rodar")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(pular)


TEXTO = (
    b"The quick brown fox jumps over the lazy dog. "
    b"Pack my box with five dozen liquor jugs. "
    b"How vexingly quick daft zebras jump! "
)


@pytest.fixture
def corpus_file(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_bytes(TEXTO * 60)
    return str(path)


@pytest.fixture
def tiny_corpus():
    rng = np.random.default_rng(123)
    texto = np.frombuffer(TEXTO * 40, dtype=np.uint8).astype(np.int64)
    return Corpus(train=texto, holdout=rng.integers(0, 256, size=2048), sha256="teste")


def _texto_markov(n_bytes: int, seed: int = 2024) -> bytes:
    """Texto sintético: vocabulário fixo de palavras encadeadas por uma cadeia de Markov esparsa."""
    rng = np.random.default_rng(seed)
    letras = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    palavras = ["".join(rng.choice(letras, size=int(rng.integers(2, 9)))) for _ in range(300)]
    sucessores = rng.integers(0, len(palavras), size=(len(palavras), 4))
    pesos = np.array([0.55, 0.25, 0.15, 0.05])

    partes, tamanho, atual = [], 0, 0
    while tamanho < n_bytes:
        atual = int(sucessores[atual, rng.choice(4, p=pesos)])
        palavra = palavras[atual] + (".\n" if rng.random() < 0.08 else " ")
        partes.append(palavra)
        tamanho += len(palavra)
    return "".join(partes).encode("ascii")[:n_bytes]


@pytest.fixture(scope="session")
def desk_corpus_file(tmp_path_factory):
    """~1 MB de texto determinístico para os testes de bancada."""
    path = tmp_path_factory.mktemp("bancada") / "corpus.txt"
    path.write_bytes(_texto_markov(1_000_000))
    return str(path)
