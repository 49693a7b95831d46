import json

import pytest

from modules.errors import StoreWriteError
from modules.record_store import RecordStore, RunRecord


def _registro(run_id, eta=0.01, ppl=12.0, status="done"):
    return RunRecord(
        run_id=run_id, eta=eta, beta=8, tokens=1000, model_size="s", seed=0,
        final_train_loss=2.5 if status == "done" else None,
        eval_ppl=ppl if status == "done" else None, wall_seconds=0.5, status=status,
        reason="" if status == "done" else "divergent: loss não-finita",
    )


def test_append_and_load(tmp_path):
    store = RecordStore(str(tmp_path / "sub" / "store.jsonl"))
    store.open_for_append()
    store.append(_registro("a"))
    store.append(_registro("b", status="failed"))
    registros = store.load()
    assert [r.run_id for r in registros] == ["a", "b"]
    assert registros[0].done and not registros[1].done
    assert store.existing_ids() == {"a", "b"}


def test_lines_are_sorted_json(tmp_path):
    store = RecordStore(str(tmp_path / "store.jsonl"))
    store.append(_registro("a"))
    linha = open(store.path, encoding="utf-8").readline()
    dados = json.loads(linha)
    assert list(dados) == sorted(dados)
    assert dados["status"] == "done"


def test_partial_tail_is_repaired(tmp_path):
    store = RecordStore(str(tmp_path / "store.jsonl"))
    store.append(_registro("a"))
    store.append(_registro("b"))
    with open(store.path, "a", encoding="utf-8") as f:
        f.write('{"run_id": "c", "eta": 0.0')
    store.open_for_append()
    assert [r.run_id for r in store.load()] == ["a", "b"]
    store.append(_registro("c"))
    assert [r.run_id for r in store.load()] == ["a", "b", "c"]


def test_unreadable_line_is_skipped(tmp_path):
    store = RecordStore(str(tmp_path / "store.jsonl"))
    store.append(_registro("a"))
    with open(store.path, "a", encoding="utf-8") as f:
        f.write("lixo\n")
    store.append(_registro("b"))
    assert [r.run_id for r in store.load()] == ["a", "b"]


def test_missing_store_is_empty(tmp_path):
    assert RecordStore(str(tmp_path / "nada.jsonl")).load() == []


def test_unwritable_store_raises(tmp_path):
    bloqueio = tmp_path / "arquivo"
    bloqueio.write_text("não é pasta")
    store = RecordStore(str(bloqueio / "store.jsonl"))
    with pytest.raises(StoreWriteError):
        store.open_for_append()
    with pytest.raises(StoreWriteError):
        store.append(_registro("a"))
