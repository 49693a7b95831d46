"""
record_store.py
Store append-only em JSON lines: um RunRecord por linha, UTF-8.
É a única fonte de verdade do sweep; a análise nunca relê artefatos de treino.
"""

import os
import json
import logging
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Set

from modules.errors import StoreWriteError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    eta: Optional[float]
    beta: int
    tokens: int
    model_size: str
    seed: int
    final_train_loss: Optional[float]
    eval_ppl: Optional[float]
    wall_seconds: float
    status: str                       # done | failed
    schedule_kind: str = "wsd"
    power_a: Optional[float] = None
    power_b: Optional[float] = None
    reason: str = ""

    @property
    def done(self) -> bool:
        return self.status == "done"


_CAMPOS = {f.name for f in fields(RunRecord)}


class RecordStore:
    def __init__(self, path: str):
        self.path = path

    def _reparar_cauda(self):
        """Remove uma última linha incompleta (crash no meio de um append)."""
        if not os.path.exists(self.path):
            return
        with open(self.path, "rb+") as f:
            conteudo = f.read()
            if not conteudo or conteudo.endswith(b"\n"):
                return
            corte = conteudo.rfind(b"\n") + 1
            log.warning(f"Store {self.path}: descartando linha incompleta ({len(conteudo) - corte} bytes)")
            f.truncate(corte)

    def load(self) -> List[RunRecord]:
        if not os.path.exists(self.path):
            return []
        registros = []
        with open(self.path, "r", encoding="utf-8") as f:
            for num, linha in enumerate(f, start=1):
                linha = linha.strip()
                if not linha:
                    continue
                try:
                    dados = json.loads(linha)
                except json.JSONDecodeError:
                    log.warning(f"Store {self.path}: linha {num} ilegível, ignorada")
                    continue
                registros.append(RunRecord(**{k: v for k, v in dados.items() if k in _CAMPOS}))
        return registros

    def existing_ids(self) -> Set[str]:
        return {r.run_id for r in self.load()}

    def open_for_append(self):
        """Prepara o arquivo para novos appends (repara a cauda, cria a pasta)."""
        try:
            pasta = os.path.dirname(self.path)
            if pasta:
                os.makedirs(pasta, exist_ok=True)
            self._reparar_cauda()
        except OSError as e:
            raise StoreWriteError(f"Não foi possível preparar o store {self.path}: {e}")

    def append(self, record: RunRecord):
        payload = json.dumps(asdict(record), ensure_ascii=False, sort_keys=True, allow_nan=False)
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(payload + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as e:
            raise StoreWriteError(f"Falha ao gravar no store {self.path}: {e}")
