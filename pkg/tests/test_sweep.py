import math
import random
from dataclasses import asdict

import pytest

from modules.corpus import load_corpus
from modules.errors import ConfigError, DivergenceError, FitError, StoreWriteError
from modules.record_store import RecordStore, RunRecord
from modules.sweep import (
    RunOutcome, SweepGrid, analyze, execute, optimal_table, plan_runs, select_optimal,
    select_power_params, train_config_for, train_one,
)
from modules.mup import MupConfig
from modules.toy_model import ModelConfig

MINI = ModelConfig(n_layers=1, d_model=16, n_heads=2, d_head=8, mlp_hidden=32, sequence_length=16)


def _grid(**kwargs):
    base = dict(
        etas=(0.001, 0.002, 0.004, 0.008), betas=(2, 4), token_budgets=(1024, 2048),
        model_sizes={"mini": MINI}, seeds=(0,),
    )
    base.update(kwargs)
    return SweepGrid(**base)


def _treino_falso(run):
    """Perplexidade sintética com mínimo em η = 0.004·β/4·(T/1024)^-0.5."""
    if run.eta is None:
        return RunOutcome(2.0, 10.0 + (run.power_a - 4.0) ** 2 + (run.power_b + 0.5) ** 2, 0.01)
    otimo = 0.004 * run.beta / 4 * (run.tokens / 1024) ** -0.5
    return RunOutcome(2.0, 10.0 + math.log(run.eta / otimo) ** 2 + 0.01 * run.seed, 0.01)


def _sem_tempo(registros):
    return sorted(
        ({k: v for k, v in asdict(r).items() if k != "wall_seconds"} for r in registros),
        key=lambda d: d["run_id"],
    )


# ─── planejamento ────────────────────────────────────────────────────────────

def test_plan_count_full_grid():
    grid = SweepGrid(
        etas=tuple(2.0**k * 1e-4 for k in range(8)), betas=(32, 64, 128, 256, 512, 1024),
        token_budgets=tuple(k * 10**9 for k in (2, 4, 8, 16, 32, 64, 128, 256)),
        model_sizes={"36M": ModelConfig()},
    )
    runs = plan_runs(grid)
    assert len(runs) == 384
    assert len({r.run_id for r in runs}) == 384


def test_plan_singleton_axes():
    grid = _grid(etas=(0.01,), betas=(4,), token_budgets=(1024,))
    assert len(plan_runs(grid)) == 1


def test_plan_is_deterministic_and_ordered():
    a, b = plan_runs(_grid()), plan_runs(_grid())
    assert [r.run_id for r in a] == [r.run_id for r in b]
    chaves = [(r.eta, r.beta, r.tokens) for r in a]
    assert chaves == sorted(chaves)


def test_power_grid_collapses_eta_axis():
    grid = _grid(schedule_kind="power", power_as=(2.0, 4.0), power_bs=(-0.6, -0.5))
    runs = plan_runs(grid)
    assert len(runs) == 2 * 2 * 2 * 2
    assert all(r.eta is None for r in runs)
    assert all(r.decay_shape == "exponential" for r in runs)
    spec = train_config_for(runs[0]).schedule
    assert spec.kind == "power" and spec.batch_size == runs[0].beta


def test_run_config_mup_matches_model_width():
    run = plan_runs(_grid())[0]
    assert (run.mup.d_model, run.mup.d_head, run.mup.base_lr) == (16, 8, run.eta)


@pytest.mark.parametrize("kwargs", [
    dict(etas=(0.002, 0.001)), dict(betas=(4, 4)), dict(token_budgets=()),
    dict(schedule_kind="step"), dict(top_k=0), dict(decay_fraction=1.0),
])
def test_invalid_grid(kwargs):
    with pytest.raises(ConfigError):
        _grid(**kwargs)


# ─── execução ────────────────────────────────────────────────────────────────

def test_execute_records_every_run(tmp_path):
    grid = _grid()
    registros = execute(grid, _treino_falso, 1, RecordStore(str(tmp_path / "s.jsonl")))
    assert len(registros) == len(plan_runs(grid))
    assert all(r.done for r in registros)


def test_execute_skips_runs_already_in_store(tmp_path):
    grid = _grid()
    store = RecordStore(str(tmp_path / "s.jsonl"))
    execute(grid, _treino_falso, 1, store)
    chamadas = []
    execute(grid, lambda run: chamadas.append(run) or _treino_falso(run), 1, store)
    assert chamadas == []
    assert len(store.load()) == len(plan_runs(grid))


class _StoreQueCai(RecordStore):
    """Simula um kill: a gravação falha depois de `limite` appends."""

    def __init__(self, path, limite):
        super().__init__(path)
        self.limite = limite

    def append(self, record):
        if self.limite == 0:
            raise StoreWriteError("disco cheio")
        self.limite -= 1
        super().append(record)


@pytest.mark.parametrize("paralelismo", [1, 3])
def test_kill_and_resume_matches_uninterrupted(tmp_path, paralelismo):
    grid = _grid(seeds=(0, 1))
    inteiro = execute(grid, _treino_falso, 1, RecordStore(str(tmp_path / "inteiro.jsonl")))

    caminho = str(tmp_path / "retomado.jsonl")
    with pytest.raises(StoreWriteError):
        execute(grid, _treino_falso, paralelismo, _StoreQueCai(caminho, limite=5))
    with open(caminho, "a", encoding="utf-8") as f:
        f.write('{"run_id": "meia-linha"')
    retomado = execute(grid, _treino_falso, paralelismo, RecordStore(caminho))

    assert _sem_tempo(retomado) == _sem_tempo(inteiro)


def test_parallelism_does_not_change_results(tmp_path):
    grid = _grid(seeds=(0, 1, 2))
    um = execute(grid, _treino_falso, 1, RecordStore(str(tmp_path / "um.jsonl")))
    quatro = execute(grid, _treino_falso, 4, RecordStore(str(tmp_path / "quatro.jsonl")))
    assert _sem_tempo(um) == _sem_tempo(quatro)


def test_failures_are_recorded_and_excluded(tmp_path):
    def treino(run):
        if run.eta == 0.008:
            raise DivergenceError("loss não-finita", 64)
        if run.eta == 0.001 and run.beta == 2:
            raise RuntimeError("falhou")
        return _treino_falso(run)

    registros = execute(_grid(), treino, 2, RecordStore(str(tmp_path / "s.jsonl")))
    falhas = [r for r in registros if not r.done]
    assert len(falhas) == 2 * 2 + 2
    assert all(r.reason.startswith("divergent") for r in falhas if r.eta == 0.008)
    assert any(r.reason.startswith("RuntimeError") for r in falhas)
    assert all(r.eval_ppl is None for r in falhas)

    assert analyze(registros) == analyze([r for r in registros if r.done])
    assert all(c.eta_opt != 0.008 for c in optimal_table(registros))


def test_non_finite_metrics_count_as_divergent(tmp_path):
    registros = execute(
        _grid(etas=(0.001,), betas=(2,), token_budgets=(1024,)),
        lambda run: RunOutcome(float("nan"), float("inf"), 0.1), 1, RecordStore(str(tmp_path / "s.jsonl")),
    )
    assert registros[0].status == "failed" and registros[0].reason.startswith("divergent")


def test_invalid_parallelism(tmp_path):
    with pytest.raises(ConfigError):
        execute(_grid(), _treino_falso, 0, RecordStore(str(tmp_path / "s.jsonl")))


def test_real_training_run_and_divergent_cell(corpus_file):
    from modules.corpus import load_corpus

    corpus = load_corpus(corpus_file, train_fraction=0.9)
    grid = _grid(etas=(0.01, 1e3), betas=(2,), token_budgets=(2 * 16 * 4,), eval_tokens=128, mup=MupConfig(d_base=16))
    normal, divergente = plan_runs(grid)
    resultado = train_one(normal, corpus)
    assert math.isfinite(resultado.eval_ppl)
    with pytest.raises(DivergenceError):
        train_one(divergente, corpus)


# ─── seleção ─────────────────────────────────────────────────────────────────

def _rec(eta, ppl, beta=128, tokens=2 * 10**9, size="s", seed=0, status="done", **kwargs):
    return RunRecord(
        run_id=f"{eta}-{beta}-{tokens}-{size}-{seed}-{kwargs.get('power_a')}-{kwargs.get('power_b')}",
        eta=eta, beta=beta, tokens=tokens, model_size=size, seed=seed,
        final_train_loss=1.0 if status == "done" else None,
        eval_ppl=ppl if status == "done" else None, wall_seconds=0.0, status=status, **kwargs,
    )


def test_select_optimal_finds_minimum():
    registros = [_rec(e, 10 + math.log(e / 0.0128) ** 2) for e in (0.0032, 0.0064, 0.0128, 0.0256, 0.0512)]
    eta, ppl = select_optimal(registros, 128, 2 * 10**9, "s")
    assert eta == 0.0128 and ppl == 10.0


def test_select_optimal_single_candidate():
    assert select_optimal([_rec(0.01, 20.0)], 128, 2 * 10**9, "s") == (0.01, 20.0)


def test_select_optimal_tie_goes_to_smaller_eta():
    registros = [_rec(0.0016, 15.0), _rec(0.0008, 15.0), _rec(0.0032, 16.0)]
    assert select_optimal(registros, 128, 2 * 10**9, "s")[0] == 0.0008


def test_select_optimal_averages_seeds():
    registros = [_rec(0.001, 10.0, seed=0), _rec(0.001, 14.0, seed=1), _rec(0.002, 11.0, seed=0), _rec(0.002, 12.0, seed=1)]
    assert select_optimal(registros, 128, 2 * 10**9, "s") == (0.002, 11.5)


def test_select_optimal_ignores_failed_and_other_cells():
    registros = [_rec(0.001, 10.0, status="failed"), _rec(0.002, 11.0), _rec(0.004, 5.0, beta=256)]
    assert select_optimal(registros, 128, 2 * 10**9, "s") == (0.002, 11.0)
    with pytest.raises(FitError):
        select_optimal(registros, 64, 2 * 10**9, "s")


def test_select_power_params():
    registros = [
        _rec(None, 12.0, schedule_kind="power", power_a=a, power_b=b)
        for a, b in [(2.0, -0.5), (4.0, -0.51), (4.0, -0.6)]
    ] + [_rec(None, 11.0, schedule_kind="power", power_a=4.0, power_b=-0.51, seed=1)]
    assert select_power_params(registros, 128, 2 * 10**9, "s") == (4.0, -0.51, 11.5)
    assert select_power_params(registros[:3], 128, 2 * 10**9, "s") == (2.0, -0.5, 12.0)


# ─── análise ─────────────────────────────────────────────────────────────────

A, B = 4.6, -0.51
T_GRID = [k * 10**9 for k in (2, 4, 8, 16, 32)]
BETAS = [128, 256, 512]


def _registros_oraculo(tamanhos=("s",)):
    registros = []
    for size in tamanhos:
        for tokens in T_GRID:
            for i, beta in enumerate(BETAS):
                otimo = beta * A * tokens**B
                for fator in (0.25, 0.5, 1.0, 2.0, 4.0):
                    ppl = 10.0 + i + math.log(fator) ** 2
                    registros.append(_rec(otimo * fator, ppl, beta=beta, tokens=tokens, size=size))
    return registros


def test_analyze_recovers_oracle_law():
    analise = analyze(_registros_oraculo())
    assert math.isclose(analise.fit.a, A, rel_tol=1e-6)
    assert math.isclose(analise.fit.b, B, rel_tol=1e-6)
    assert [r.tokens for r in analise.rows] == T_GRID
    assert all(r.n_batch_sizes_used == 3 and not r.flagged for r in analise.rows)
    assert analise.flagged_cells == []


def test_analyze_per_size_fits():
    analise = analyze(_registros_oraculo(("s", "m")))
    assert set(analise.per_size_fits) == {"s", "m"}
    for fit in analise.per_size_fits.values():
        assert math.isclose(fit.b, B, rel_tol=1e-6)


def test_analyze_is_invariant_to_record_order():
    registros = _registros_oraculo(("s", "m"))
    embaralhados = list(registros)
    random.Random(0).shuffle(embaralhados)
    assert analyze(embaralhados) == analyze(registros)


def test_analyze_averages_three_gammas():
    registros = []
    for beta, gamma in [(8, 1e-3), (16, 2e-3), (32, 4e-3)]:
        for tokens in (1000, 2000):
            for fator in (0.5, 1.0, 2.0):
                registros.append(_rec(gamma * beta * fator, 10.0 + abs(math.log(fator)), beta=beta, tokens=tokens))
    analise = analyze(registros)
    assert analise.rows[0].avg_gamma == pytest.approx((1e-3 + 2e-3 + 4e-3) / 3)


def test_analyze_keeps_top_k_batch_sizes():
    registros = _registros_oraculo()
    # um quarto β, muito pior, com γ completamente diferente
    for tokens in T_GRID:
        for fator in (0.5, 1.0, 2.0):
            registros.append(_rec(1.0 * fator, 50.0 + abs(math.log(fator)), beta=64, tokens=tokens))
    analise = analyze(registros, top_k=3)
    assert math.isclose(analise.fit.a, A, rel_tol=1e-6)


def test_edge_optimum_is_flagged():
    registros = [_rec(e, p, tokens=t) for t in (1000, 2000) for e, p in [(0.001, 10.0), (0.002, 11.0), (0.004, 12.0)]]
    analise = analyze(registros, top_k=1)
    assert all(c.edge for c in analise.cells)
    assert all(r.flagged for r in analise.rows)


def test_optimal_table_only_uses_done_records():
    registros = [_rec(0.001, 10.0, status="failed"), _rec(0.002, 11.0), _rec(0.004, 12.0)]
    (celula,) = optimal_table(registros)
    assert celula.eta_opt == 0.002 and celula.edge


def test_analyze_with_single_budget_raises():
    registros = [_rec(e, 10.0 + i) for i, e in enumerate((0.001, 0.002))]
    with pytest.raises(FitError):
        analyze(registros)




# ─── bancada ─────────────────────────────────────────────────────────────────

BANCADA = ModelConfig(n_layers=2, d_model=64, n_heads=4, d_head=16, mlp_hidden=128, sequence_length=64)
BANCADA_ETAS = tuple(2.0**k * 1e-3 for k in range(7))
BANCADA_BETAS = (8, 16, 32)
BANCADA_T = (1_000_000, 2_000_000, 4_000_000)


def _violacoes(valores, crescente: bool) -> int:
    return sum(1 for a, b in zip(valores, valores[1:]) if (b < a if crescente else b > a))


@pytest.fixture(scope="module")
def registros_bancada(desk_corpus_file, tmp_path_factory):
    grid = SweepGrid(
        etas=BANCADA_ETAS, betas=BANCADA_BETAS, token_budgets=BANCADA_T,
        model_sizes={"desk": BANCADA}, eval_tokens=16384, mup=MupConfig(d_base=64),
    )
    corpus = load_corpus(desk_corpus_file, 0.95)
    store = RecordStore(str(tmp_path_factory.mktemp("sweep") / "bancada.jsonl"))
    return execute(grid, lambda run: train_one(run, corpus), 4, store)


@pytest.mark.slow
def test_desk_scale_trends(registros_bancada):
    """η_opt cai com T e sobe com β (WSD), com no máximo uma violação por direção."""
    otimo = {
        (beta, t): select_optimal(registros_bancada, beta, t, "desk")[0]
        for beta in BANCADA_BETAS for t in BANCADA_T
    }
    em_t = sum(_violacoes([otimo[beta, t] for t in BANCADA_T], crescente=False) for beta in BANCADA_BETAS)
    em_beta = sum(_violacoes([otimo[beta, t] for beta in BANCADA_BETAS], crescente=True) for t in BANCADA_T)
    assert em_t <= 1
    assert em_beta <= 1


@pytest.mark.slow
def test_desk_scale_report_flags_edge_optima(registros_bancada):
    celulas = {(c.beta, c.tokens): c for c in optimal_table(registros_bancada)}
    assert len(celulas) == len(BANCADA_BETAS) * len(BANCADA_T)
    for (beta, t), c in celulas.items():
        grade = {r.eta for r in registros_bancada if r.done and r.beta == beta and r.tokens == t}
        assert c.edge == (c.eta_opt in (min(grade), max(grade)))

    analise = analyze(registros_bancada)
    for row in analise.rows:
        assert row.flagged == any(c.edge for c in celulas.values() if c.tokens == row.tokens)
    assert {(c.beta, c.tokens) for c in analise.flagged_cells} == {k for k, c in celulas.items() if c.edge}

    # grid recortado nos dois menores η: todo ótimo cai na borda
    recortados = [r for r in registros_bancada if r.eta <= BANCADA_ETAS[1]]
    analise_recortada = analyze(recortados)
    assert len(analise_recortada.flagged_cells) == len(analise_recortada.cells)
    assert all(row.flagged for row in analise_recortada.rows)
