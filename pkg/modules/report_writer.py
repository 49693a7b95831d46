"""
report_writer.py
Exporta curvas, planos µP, ajustes e análises de sweep em CSV/JSON
e imprime os resumos de console.
"""

import os
import csv
import json
import logging
from dataclasses import asdict
from datetime import datetime
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

from modules.mup import MupPlan
from modules.powerlaw_fit import FitResult, write_fit_csv
from modules.sweep import Analysis, OptimalCell

log = logging.getLogger(__name__)


def _g(x) -> str:
    """Números em 10 dígitos significativos; inteiros e None passam direto."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    return f"{x:.10g}"


def _escrever_csv(path: str, cabecalho: Sequence[str], linhas: Iterable[Sequence]) -> str:
    pasta = os.path.dirname(path)
    if pasta:
        os.makedirs(pasta, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        escritor = csv.writer(f)
        escritor.writerow(cabecalho)
        for linha in linhas:
            escritor.writerow([_g(v) for v in linha])
    log.info(f"CSV salvo: {path}")
    return path


# ─────────────────────────────────────────────────────────────────────────────
# CSVs
# ─────────────────────────────────────────────────────────────────────────────

def write_curve_csv(curve: Sequence[Tuple[int, float]], path: str) -> str:
    return _escrever_csv(path, ["tokens", "lr"], curve)


def write_compare_csv(nomes: Sequence[str], linhas: Sequence[Sequence[float]], path: str) -> str:
    return _escrever_csv(path, ["tokens", *nomes], linhas)


def write_plan_csv(plan: MupPlan, path: str) -> str:
    return _escrever_csv(
        path, ["group", "lr", "init_std", "forward_multiplier"],
        [(p.group, p.lr, p.init_std, p.forward_multiplier) for p in plan.rows()],
    )


def write_history_csv(history: Sequence[Tuple[int, float]], path: str) -> str:
    return _escrever_csv(path, ["tokens", "loss"], history)


def write_optimal_csv(cells: Sequence[OptimalCell], path: str) -> str:
    return _escrever_csv(
        path, ["size", "tokens", "batch_size", "eta_opt", "eval_ppl", "edge"],
        [(c.model_size, c.tokens, c.beta, c.eta_opt, c.eval_ppl, c.edge) for c in cells],
    )


class ReportWriter:
    def __init__(self, pasta_output: str, prefixo: str = "sweep"):
        self.pasta_output = pasta_output
        self.prefixo = prefixo

    def salvar_analise(self, analysis: Analysis, store_path: str = "") -> Dict[str, str]:
        """
        Salva a análise do sweep na pasta de output.
        Retorna dict com caminhos dos arquivos criados.
        """
        os.makedirs(self.pasta_output, exist_ok=True)
        base = os.path.join(self.pasta_output, self.prefixo)
        arquivos = {}

        arquivos["gamma"] = _escrever_csv(
            f"{base}_gamma.csv", ["tokens", "avg_gamma", "n_batch_sizes_used", "flagged"],
            [(r.tokens, r.avg_gamma, r.n_batch_sizes_used, r.flagged) for r in analysis.rows],
        )
        arquivos["fit"] = write_fit_csv(analysis.fit, f"{base}_fit.csv")
        arquivos["optimal"] = write_optimal_csv(analysis.cells, f"{base}_optimal.csv")
        if analysis.per_size_fits:
            arquivos["fit_por_tamanho"] = _escrever_csv(
                f"{base}_fit_by_size.csv", ["size", "a", "b", "rmse_log", "n_points"],
                [(s, f.a, f.b, f.rmse_log, f.n_points) for s, f in sorted(analysis.per_size_fits.items())],
            )

        # --- resumo.json (tudo junto) ---
        json_path = f"{base}_summary.json"
        resumo = {
            "store": store_path,
            "gerado_em": datetime.now().strftime("%Y-%m-%d %H:%M"),
            "fit": asdict(analysis.fit),
            "fit_por_tamanho": {s: asdict(f) for s, f in sorted(analysis.per_size_fits.items())},
            "celulas_na_borda": [asdict(c) for c in analysis.flagged_cells],
            "arquivos": dict(arquivos),
        }
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(resumo, f, ensure_ascii=False, indent=2)
        arquivos["json"] = json_path

        log.info(f"Análise salva em {self.pasta_output}/")
        return arquivos


# ─────────────────────────────────────────────────────────────────────────────
# Resumos de console
# ─────────────────────────────────────────────────────────────────────────────

def _caixa(titulo: str):
    print("\n" + "=" * 62)
    print(f"  {titulo}")
    print("=" * 62)


def exibir_fit(fit: FitResult, titulo: str = "AJUSTE DA LEI DE POTÊNCIA"):
    _caixa(titulo)
    print(f"  γ = a·T^b")
    print(f"  a        : {fit.a:.6g}")
    print(f"  b        : {fit.b:.6g}")
    print(f"  rmse_log : {fit.rmse_log:.4g}")
    print(f"  pontos   : {fit.n_points}")
    print("=" * 62)


def exibir_plano(plan: MupPlan):
    _caixa(f"PLANO DE GRUPOS ({plan.parametrization})")
    print(f"  m_width={plan.width_multiplier:g} | m_res={plan.residual_multiplier:g} | "
          f"escala de atenção={plan.attention_scale:.6g}")
    print(f"  {'grupo':<18}{'lr':>14}{'init_std':>14}{'mult fwd':>14}")
    for p in plan.rows():
        print(f"  {p.group:<18}{p.lr:>14.6g}{p.init_std:>14.6g}{p.forward_multiplier:>14.6g}")
    print("=" * 62)


def exibir_analise(analysis: Analysis):
    _caixa("ANÁLISE DO SWEEP")
    print(f"  {'T':>14}{'γ médio':>16}{'β usados':>10}  flag")
    for r in analysis.rows:
        print(f"  {r.tokens:>14.4g}{r.avg_gamma:>16.6g}{r.n_batch_sizes_used:>10}  {'⚠' if r.flagged else ''}")
    print(f"\n  Ajuste agregado: a={analysis.fit.a:.6g} b={analysis.fit.b:.6g} "
          f"(rmse_log={analysis.fit.rmse_log:.3g})")
    for size, fit in sorted(analysis.per_size_fits.items()):
        print(f"  Tamanho {size:<8}: a={fit.a:.6g} b={fit.b:.6g}")
    borda = analysis.flagged_cells
    if borda:
        print(f"\n  ⚠ {len(borda)} célula(s) com η_opt na borda do grid:")
        for c in borda:
            print(f"     tamanho={c.model_size} T={c.tokens:.3g} β={c.beta} η_opt={c.eta_opt:g}")
    print("=" * 62)


def exibir_coord_check(tabelas: Mapping[str, List[Tuple[int, float]]]):
    _caixa("COORD CHECK — RMS DO STREAM RESIDUAL NA INICIALIZAÇÃO")
    nomes = list(tabelas)
    print(f"  {'d_model':>10}" + "".join(f"{n:>16}" for n in nomes))
    larguras = [d for d, _ in tabelas[nomes[0]]]
    for i, d in enumerate(larguras):
        print(f"  {d:>10}" + "".join(f"{tabelas[n][i][1]:>16.6g}" for n in nomes))
    for n in nomes:
        valores = [v for _, v in tabelas[n]]
        print(f"  {n}: razão max/min = {max(valores) / min(valores):.3f}")
    print("=" * 62)


def exibir_treino(history: Sequence[Tuple[int, float]], eval_ppl: float, steps: int, wall: float):
    _caixa("TREINO — RESUMO FINAL")
    if history:
        print(f"  Loss final   : {history[-1][1]:.4f} (tokens={history[-1][0]})")
    print(f"  Eval ppl     : {eval_ppl:.4f}")
    print(f"  Steps        : {steps}")
    print(f"  Tempo        : {wall:.1f}s")
    print("=" * 62)
