"""
sweep.py
Grid search (η, β, T, tamanho de modelo, seed) sobre o modelo de brinquedo:
planeja, executa com retomada, persiste no record store e analisa.

Protocolo de análise:
  1. para cada célula (β, T, tamanho), η_opt = argmin da perplexidade de holdout
  2. para cada (T, tamanho), mantém as top_k (3) batch sizes pela perplexidade ótima
  3. γ = η_opt / β dessas batch sizes, média por (T, tamanho), depois média entre tamanhos
  4. ajuste da lei de potência γ = a·T^b
"""

import math
import json
import time
import hashlib
import itertools
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from modules.corpus import Corpus
from modules.errors import ConfigError, DivergenceError, FitError, StoreWriteError
from modules.mup import MupConfig, derive_plan
from modules.powerlaw_fit import FitResult, SweepPoint, fit_power_law, gamma_of
from modules.record_store import RecordStore, RunRecord
from modules.schedule_core import cosine_for_budget, power_for_budget, wsd_for_budget
from modules.toy_model import ModelConfig
from modules.toy_trainer import OptimizerConfig, TrainConfig, init_model, train

log = logging.getLogger(__name__)

SCHEDULE_KINDS = ("wsd", "power", "cosine")


@dataclass(frozen=True)
class SweepGrid:
    etas: Tuple[float, ...]
    betas: Tuple[int, ...]
    token_budgets: Tuple[int, ...]
    model_sizes: Dict[str, ModelConfig]
    seeds: Tuple[int, ...] = (0,)
    schedule_kind: str = "wsd"
    decay_fraction: float = 0.1
    warmup_tokens: int = 0
    decay_shape: Optional[str] = None       # None = linear (wsd) / exponential (power)
    power_as: Tuple[float, ...] = (4.0,)
    power_bs: Tuple[float, ...] = (-0.51,)
    eta_max: float = 0.02
    top_k: int = 3
    eval_tokens: int = 8192
    mup: MupConfig = field(default_factory=MupConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        eixos = {"etas": self.etas, "betas": self.betas, "token_budgets": self.token_budgets,
                 "model_sizes": self.model_sizes, "seeds": self.seeds,
                 "power_as": self.power_as, "power_bs": self.power_bs}
        for nome, valores in eixos.items():
            if not valores:
                raise ConfigError(f"sweep.{nome} não pode ser vazio")
        for nome in ("etas", "betas"):
            valores = list(getattr(self, nome))
            if any(b <= a for a, b in zip(valores, valores[1:])):
                raise ConfigError(f"sweep.{nome} deve ser estritamente crescente: {valores}")
        if self.schedule_kind not in SCHEDULE_KINDS:
            raise ConfigError(f"sweep.schedule_kind inválido: '{self.schedule_kind}' (use {', '.join(SCHEDULE_KINDS)})")
        if not 0.0 < self.decay_fraction < 1.0:
            raise ConfigError(f"sweep.decay_fraction deve estar em (0, 1), recebido {self.decay_fraction}")
        if self.top_k < 1:
            raise ConfigError(f"sweep.top_k deve ser >= 1, recebido {self.top_k}")
        if min(self.betas) < 1 or min(self.token_budgets) < 1 or min(self.etas) <= 0:
            raise ConfigError("sweep: betas e token_budgets devem ser >= 1 e etas > 0")

    @property
    def shape(self) -> str:
        return self.decay_shape or ("exponential" if self.schedule_kind == "power" else "linear")


@dataclass(frozen=True)
class RunConfig:
    eta: Optional[float]
    beta: int
    tokens: int
    model_size: str
    seed: int
    schedule_kind: str
    power_a: Optional[float]
    power_b: Optional[float]
    model: ModelConfig
    eta_max: float
    decay_fraction: float
    warmup_tokens: int
    decay_shape: str
    eval_tokens: int
    mup: MupConfig
    optimizer: OptimizerConfig

    @property
    def run_id(self) -> str:
        """Hash estável de todos os campos da config."""
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def label(self) -> str:
        lr = f"eta={self.eta:g}" if self.eta is not None else f"a={self.power_a:g} b={self.power_b:g}"
        return f"{self.model_size} {lr} β={self.beta} T={self.tokens:.3g} seed={self.seed}"


@dataclass(frozen=True)
class RunOutcome:
    final_train_loss: float
    eval_ppl: float
    wall_seconds: float


# ─────────────────────────────────────────────────────────────────────────────
# Planejamento
# ─────────────────────────────────────────────────────────────────────────────

def plan_runs(grid: SweepGrid) -> List[RunConfig]:
    """Produto cartesiano dos eixos, em ordem lexicográfica (η, a, b, β, T, tamanho, seed)."""
    if grid.schedule_kind == "power":
        etas, power_as, power_bs = [None], list(grid.power_as), list(grid.power_bs)
    else:
        etas, power_as, power_bs = list(grid.etas), [None], [None]

    runs = []
    for eta, a, b, beta, tokens, size, seed in itertools.product(
        etas, power_as, power_bs, grid.betas, grid.token_budgets, list(grid.model_sizes), grid.seeds
    ):
        runs.append(RunConfig(
            eta=eta, beta=beta, tokens=tokens, model_size=size, seed=seed,
            schedule_kind=grid.schedule_kind, power_a=a, power_b=b,
            model=grid.model_sizes[size], eta_max=grid.eta_max,
            decay_fraction=grid.decay_fraction, warmup_tokens=grid.warmup_tokens,
            decay_shape=grid.shape, eval_tokens=grid.eval_tokens,
            mup=replace(grid.mup, d_model=grid.model_sizes[size].d_model, d_head=grid.model_sizes[size].d_head,
                        base_lr=eta if eta is not None else grid.eta_max),
            optimizer=grid.optimizer,
        ))
    return runs


def train_config_for(run: RunConfig) -> TrainConfig:
    if run.schedule_kind == "power":
        schedule = power_for_budget(
            batch_size=run.beta, a=run.power_a, b=run.power_b, eta_max=run.eta_max,
            warmup_tokens=run.warmup_tokens, total_tokens=run.tokens,
            decay_fraction=run.decay_fraction, decay_shape=run.decay_shape,
        )
    elif run.schedule_kind == "cosine":
        schedule = cosine_for_budget(run.eta, run.tokens, run.warmup_tokens)
    else:
        schedule = wsd_for_budget(run.eta, run.tokens, run.warmup_tokens, run.decay_fraction, run.decay_shape)
    return TrainConfig(
        batch_size=run.beta, total_tokens=run.tokens, schedule=schedule, mup=run.mup,
        optimizer=run.optimizer, seed=run.seed, eval_tokens=run.eval_tokens,
    )


def train_one(run: RunConfig, corpus: Corpus) -> RunOutcome:
    """Ponto de entrada padrão do sweep: um treino completo do modelo de brinquedo."""
    tcfg = train_config_for(run)
    state = init_model(run.model, derive_plan(run.mup), run.seed)
    resultado = train(state, corpus, tcfg)
    return RunOutcome(resultado.final_train_loss, resultado.eval_ppl, resultado.wall_seconds)


# ─────────────────────────────────────────────────────────────────────────────
# Execução
# ─────────────────────────────────────────────────────────────────────────────

def _executar(trainer: Callable[[RunConfig], RunOutcome], run: RunConfig) -> RunRecord:
    """Roda um único run; qualquer erro vira registro 'failed'."""
    inicio = time.perf_counter()
    base = dict(
        run_id=run.run_id, eta=run.eta, beta=run.beta, tokens=run.tokens,
        model_size=run.model_size, seed=run.seed, schedule_kind=run.schedule_kind,
        power_a=run.power_a, power_b=run.power_b,
    )
    try:
        out = trainer(run)
        if not (math.isfinite(out.eval_ppl) and math.isfinite(out.final_train_loss)):
            raise DivergenceError(f"métricas não-finitas (loss={out.final_train_loss}, ppl={out.eval_ppl})")
        return RunRecord(
            **base, final_train_loss=out.final_train_loss, eval_ppl=out.eval_ppl,
            wall_seconds=out.wall_seconds, status="done",
        )
    except DivergenceError as e:
        motivo = f"divergent: {e}"
    except Exception as e:
        motivo = f"{type(e).__name__}: {e}"
    return RunRecord(
        **base, final_train_loss=None, eval_ppl=None,
        wall_seconds=time.perf_counter() - inicio, status="failed", reason=motivo,
    )


def execute(
    grid: SweepGrid,
    trainer: Callable[[RunConfig], RunOutcome],
    parallelism: int,
    store: RecordStore,
    use_processes: bool = False,
) -> List[RunRecord]:
    """
    Executa todos os runs planejados que ainda não estão no store.
    Falhas individuais são registradas e nunca abortam o sweep;
    falha de escrita no store aborta com StoreWriteError.
    Retorna o conteúdo final do store para este grid.
    """
    if parallelism < 1:
        raise ConfigError(f"parallelism deve ser >= 1, recebido {parallelism}")

    planejados = plan_runs(grid)
    store.open_for_append()
    feitos = store.existing_ids()
    pendentes = [r for r in planejados if r.run_id not in feitos]
    log.info(f"Sweep: {len(planejados)} runs planejados | {len(planejados) - len(pendentes)} já no store | "
             f"{len(pendentes)} a executar (parallelism={parallelism})")

    ok, erros = 0, 0

    def _gravar(registro: RunRecord, i: int):
        nonlocal ok, erros
        store.append(registro)
        if registro.done:
            ok += 1
            log.info(f"[{i}/{len(pendentes)}] ✓ {registro.run_id} ppl={registro.eval_ppl:.3f}")
        else:
            erros += 1
            log.warning(f"[{i}/{len(pendentes)}] ✗ {registro.run_id} {registro.reason}")

    if parallelism == 1:
        for i, run in enumerate(pendentes, 1):
            log.info(f"Run {i}/{len(pendentes)}: {run.label()}")
            _gravar(_executar(trainer, run), i)
    else:
        pool_cls = ProcessPoolExecutor if use_processes else ThreadPoolExecutor
        with pool_cls(max_workers=parallelism) as pool:
            futuros = [pool.submit(_executar, trainer, run) for run in pendentes]
            try:
                for i, futuro in enumerate(as_completed(futuros), 1):
                    _gravar(futuro.result(), i)
            except StoreWriteError:
                for f in futuros:
                    f.cancel()
                raise

    log.info(f"Sweep concluído: {ok} ok, {erros} com falha")
    ids = {r.run_id for r in planejados}
    return [r for r in store.load() if r.run_id in ids]


def default_trainer(corpus: Corpus) -> Callable[[RunConfig], RunOutcome]:
    return partial(train_one, corpus=corpus)


# ─────────────────────────────────────────────────────────────────────────────
# Seleção e análise
# ─────────────────────────────────────────────────────────────────────────────

def _ppl_media_por(records, chave) -> Dict:
    """Média da perplexidade entre seeds, agrupada por chave(record)."""
    grupos = defaultdict(list)
    for r in sorted(records, key=lambda r: (r.seed, r.run_id)):
        grupos[chave(r)].append(r.eval_ppl)
    return {k: sum(v) / len(v) for k, v in grupos.items()}


def _da_celula(records, beta, tokens, model_size, power: bool):
    return [
        r for r in records
        if r.done and r.beta == beta and r.tokens == tokens and r.model_size == model_size
        and (r.schedule_kind == "power") == power
    ]


def select_optimal(records: Sequence[RunRecord], beta: int, tokens: int, model_size: str) -> Tuple[float, float]:
    """(η_opt, eval_ppl) da célula; empate vai para o menor η."""
    celula = _da_celula(records, beta, tokens, model_size, power=False)
    if not celula:
        raise FitError(f"Nenhum run concluído para β={beta}, T={tokens}, tamanho={model_size}")
    medias = _ppl_media_por(celula, lambda r: r.eta)
    eta = min(medias, key=lambda e: (medias[e], e))
    return eta, medias[eta]


def select_power_params(
    records: Sequence[RunRecord], beta: int, tokens: int, model_size: str
) -> Tuple[float, float, float]:
    """(a, b, eval_ppl) ótimos da busca do Power scheduler; empate → menor a, depois menor b."""
    celula = _da_celula(records, beta, tokens, model_size, power=True)
    if not celula:
        raise FitError(f"Nenhum run Power concluído para β={beta}, T={tokens}, tamanho={model_size}")
    medias = _ppl_media_por(celula, lambda r: (r.power_a, r.power_b))
    a, b = min(medias, key=lambda k: (medias[k], k[0], k[1]))
    return a, b, medias[(a, b)]


@dataclass(frozen=True)
class OptimalCell:
    model_size: str
    tokens: int
    beta: int
    eta_opt: float
    eval_ppl: float
    edge: bool


@dataclass(frozen=True)
class GammaRow:
    tokens: int
    avg_gamma: float
    n_batch_sizes_used: int
    flagged: bool


@dataclass
class Analysis:
    rows: List[GammaRow]
    fit: FitResult
    per_size_fits: Dict[str, FitResult]
    cells: List[OptimalCell]

    @property
    def flagged_cells(self) -> List[OptimalCell]:
        return [c for c in self.cells if c.edge]


def optimal_table(records: Sequence[RunRecord]) -> List[OptimalCell]:
    """η_opt de cada célula (tamanho, T, β) com pelo menos um run concluído."""
    lr_records = [r for r in records if r.done and r.schedule_kind != "power"]
    etas_da_celula = defaultdict(set)
    for r in lr_records:
        etas_da_celula[(r.model_size, r.tokens, r.beta)].add(r.eta)

    celulas = []
    for (size, tokens, beta) in sorted(etas_da_celula):
        try:
            eta, ppl = select_optimal(lr_records, beta, tokens, size)
        except FitError:
            continue
        grade = etas_da_celula[(size, tokens, beta)]
        borda = len(grade) > 1 and (eta == min(grade) or eta == max(grade))
        if borda:
            log.warning(f"η_opt={eta:g} na borda do grid (tamanho={size}, T={tokens}, β={beta})")
        celulas.append(OptimalCell(size, tokens, beta, eta, ppl, borda))
    return celulas


def analyze(records: Sequence[RunRecord], top_k: int = 3) -> Analysis:
    """Tabela de γ médio por T + ajuste agregado e por tamanho. Função pura do conjunto de registros."""
    celulas = optimal_table(records)
    if not celulas:
        raise FitError("Nenhuma célula com run concluído para analisar")

    por_t_tamanho = defaultdict(list)
    for c in celulas:
        por_t_tamanho[(c.tokens, c.model_size)].append(c)

    medias_por_t = defaultdict(list)      # T → [(tamanho, γ médio)]
    usados_por_t = defaultdict(int)
    flag_por_t = defaultdict(bool)
    for (tokens, size), lista in sorted(por_t_tamanho.items()):
        melhores = sorted(lista, key=lambda c: (c.eval_ppl, c.beta))[:top_k]
        if len(melhores) < top_k:
            log.warning(f"T={tokens}, tamanho={size}: só {len(melhores)} batch sizes disponíveis (top_k={top_k})")
            flag_por_t[tokens] = True
        if any(c.edge for c in melhores):
            flag_por_t[tokens] = True
        gammas = [gamma_of(c.eta_opt, c.beta) for c in sorted(melhores, key=lambda c: c.beta)]
        medias_por_t[tokens].append((size, sum(gammas) / len(gammas)))
        usados_por_t[tokens] += len(melhores)

    rows = []
    for tokens in sorted(medias_por_t):
        valores = [g for _, g in sorted(medias_por_t[tokens])]
        rows.append(GammaRow(tokens, sum(valores) / len(valores), usados_por_t[tokens], flag_por_t[tokens]))

    fit = fit_power_law([SweepPoint(r.tokens, r.avg_gamma) for r in rows])

    por_tamanho = defaultdict(list)
    for tokens, lista in medias_por_t.items():
        for size, g in lista:
            por_tamanho[size].append(SweepPoint(tokens, g))
    per_size = {}
    for size in sorted(por_tamanho):
        pontos = sorted(por_tamanho[size], key=lambda p: p.tokens)
        if len({p.tokens for p in pontos}) >= 2:
            per_size[size] = fit_power_law(pontos)

    return Analysis(rows=rows, fit=fit, per_size_fits=per_size, cells=celulas)
