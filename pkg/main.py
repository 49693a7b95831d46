"""
main.py — Power LR Toolkit
Schedules de learning rate (WSD / Power), plano µP, ajuste da lei de potência
do LR ótimo e sweeps sobre um transformer de brinquedo em numpy.

Uso:
  python main.py predict-lr --a 4.6 --b -0.51 --batch-size 1024 --tokens 1e13
  python main.py schedule-emit --stride 1e8 --out curva.csv
  python main.py schedule-compare --stride 1e8 --out comparacao.csv
  python main.py mup-derive --out plano.csv
  python main.py fit --in pontos.csv
  python main.py sweep-run --parallelism 4 --store sweep.jsonl
  python main.py sweep-analyze --store sweep.jsonl --out-dir export
  python main.py train --out-history historico.csv --out-checkpoint modelo.npz
  python main.py coord-check --widths 32,64,128
  python main.py --config meu_config.yaml <comando> ...

Códigos de saída: 0 sucesso, 1 falha de execução/I-O, 2 falha de validação.
"""

import os
import sys
import logging
import argparse
from dataclasses import replace
from typing import List, Optional

from dotenv import load_dotenv

sys.path.insert(0, os.path.dirname(__file__))

from modules.config_loader import ToolConfig, carregar_config
from modules.corpus import load_corpus, unigram_entropy
from modules.errors import ConfigError, ToolkitError
from modules.mup import derive_plan, standard_plan
from modules.powerlaw_fit import fit_power_law, predict_opt_lr, read_points_csv, write_fit_csv
from modules.record_store import RecordStore
from modules.report_writer import (
    ReportWriter, exibir_analise, exibir_coord_check, exibir_fit, exibir_plano, exibir_treino,
    write_compare_csv, write_curve_csv, write_history_csv, write_plan_csv,
)
from modules.schedule_core import clamp_crossover, compare_curves, emit_curve, figure_specs
from modules.sweep import analyze, default_trainer, execute, plan_runs
from modules.toy_model import ModelConfig
from modules.toy_trainer import coord_check, init_model, save_checkpoint, train

log = logging.getLogger("Main")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDACAO = 0, 1, 2


def banner():
    print("""
╔══════════════════════════════════════════════════════════╗
║              POWER LR TOOLKIT — Schedules & µP           ║
║   Schedule → µP → Sweep → Ajuste γ = a·T^b → Previsão    ║
╚══════════════════════════════════════════════════════════╝
""", file=sys.stderr)


def _numero(texto: str) -> float:
    """Flags numéricas aceitam notação científica (1e13)."""
    try:
        return float(texto)
    except ValueError:
        raise argparse.ArgumentTypeError(f"número inválido: {texto!r}")


def _inteiro(texto: str) -> int:
    valor = _numero(texto)
    if not valor.is_integer():
        raise argparse.ArgumentTypeError(f"esperado inteiro, recebido {texto!r}")
    return int(valor)


def _config(args) -> ToolConfig:
    return carregar_config(args.config)


# ─────────────────────────────────────────────────────────────────────────────
# Comandos
# ─────────────────────────────────────────────────────────────────────────────

def _fim_da_curva(spec, end: Optional[int]) -> int:
    if end is not None:
        return end
    if spec.total_tokens is None:
        raise ConfigError("--end é obrigatório quando schedule.total_tokens não está definido")
    return spec.total_tokens


def cmd_schedule_emit(args) -> int:
    cfg = _config(args)
    cfg.require("schedule")
    spec = cfg.schedule
    curva = emit_curve(spec, args.start, _fim_da_curva(spec, args.end), args.stride)
    write_curve_csv(curva, args.out)
    if spec.kind == "power":
        if spec.power_b >= 0 and spec.batch_size * spec.power_a >= spec.eta_max:
            print(f"clamp_crossover: clamp sempre ativo (b={spec.power_b:g} >= 0, η_max={spec.eta_max:g} em toda a curva)")
        else:
            n_estrela = clamp_crossover(spec.batch_size, spec.power_a, spec.power_b, spec.eta_max)
            print(f"clamp_crossover: {n_estrela:.6g} tokens (η_max={spec.eta_max:g} até aqui)")
    print(f"{len(curva)} pontos → {args.out}")
    return EXIT_OK


def cmd_schedule_compare(args) -> int:
    cfg = _config(args)
    cfg.require("schedule")
    specs = figure_specs(cfg.schedule, args.batch_size)
    linhas = compare_curves(specs, args.start, _fim_da_curva(cfg.schedule, args.end), args.stride)
    write_compare_csv(list(specs), linhas, args.out)
    print(f"{len(linhas)} pontos ({', '.join(specs)}) → {args.out}")
    return EXIT_OK


def cmd_predict_lr(args) -> int:
    lr = predict_opt_lr(args.a, args.b, args.batch_size, args.tokens)
    print(f"{lr:#.4g}")
    return EXIT_OK


def cmd_mup_derive(args) -> int:
    cfg = _config(args)
    cfg.require("mup")
    mup = cfg.mup_for_model() if cfg.model is not None else cfg.mup
    plan = standard_plan(mup) if args.standard else derive_plan(mup)
    exibir_plano(plan)
    if args.out:
        write_plan_csv(plan, args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    resultado = fit_power_law(read_points_csv(args.input))
    exibir_fit(resultado)
    if args.out:
        write_fit_csv(resultado, args.out)
    return EXIT_OK


def _carregar_corpus(cfg: ToolConfig, override: Optional[str]):
    cfg.require("train")
    caminho = override or cfg.train.corpus
    if not caminho:
        raise ConfigError("train.corpus ausente (ou passe --corpus)")
    corpus = load_corpus(caminho, cfg.train.train_fraction)
    log.info(f"Entropia unigrama do treino: {unigram_entropy(corpus.train):.4f} nats")
    return corpus


def cmd_sweep_run(args) -> int:
    cfg = _config(args)
    cfg.require("sweep")
    corpus = _carregar_corpus(cfg, args.corpus)
    log.info(f"Grid: {len(plan_runs(cfg.sweep))} runs | store {args.store}")
    registros = execute(
        cfg.sweep, default_trainer(corpus), args.parallelism, RecordStore(args.store),
        use_processes=args.parallelism > 1,
    )
    falhas = [r for r in registros if not r.done]

    print("\n" + "=" * 62)
    print("  SWEEP — RESUMO FINAL")
    print("=" * 62)
    print(f"  Runs no store : {len(registros)}")
    print(f"  Concluídos    : {len(registros) - len(falhas)}")
    if falhas:
        print(f"  Com falha     : {len(falhas)}")
        for r in falhas[:10]:
            print(f"     [✗] {r.run_id} β={r.beta} T={r.tokens:.3g} η={r.eta}: {r.reason[:60]}")
    print("=" * 62)
    return EXIT_OK


def cmd_sweep_analyze(args) -> int:
    store = RecordStore(args.store)
    if not os.path.exists(args.store):
        raise FileNotFoundError(f"Store não encontrado: {args.store}")
    analise = analyze(store.load(), top_k=args.top_k)
    exibir_analise(analise)
    arquivos = ReportWriter(args.out_dir, args.prefix).salvar_analise(analise, store_path=args.store)
    for nome, caminho in arquivos.items():
        print(f"  {nome:<16}: {caminho}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    tcfg = cfg.train_config()
    corpus = _carregar_corpus(cfg, args.corpus)
    state = init_model(cfg.model, derive_plan(tcfg.mup), tcfg.seed)
    resultado = train(state, corpus, tcfg)
    exibir_treino(resultado.history, resultado.eval_ppl, resultado.steps, resultado.wall_seconds)
    if args.out_history:
        write_history_csv(resultado.history, args.out_history)
    if args.out_checkpoint:
        save_checkpoint(args.out_checkpoint, state)
    return EXIT_OK


def cmd_coord_check(args) -> int:
    cfg = _config(args)
    cfg.require("model", "mup")
    try:
        larguras = [int(w) for w in args.widths.split(",") if w.strip()]
    except ValueError:
        raise ConfigError(f"--widths deve ser lista de inteiros separada por vírgula: {args.widths!r}")
    if not larguras:
        raise ConfigError("--widths precisa de pelo menos uma largura")

    d_head = cfg.model.d_head
    razao_mlp = cfg.model.mlp_hidden / cfg.model.d_model
    mcfgs: List[ModelConfig] = []
    for w in larguras:
        if w % d_head != 0:
            raise ConfigError(f"--widths: {w} não é múltiplo de model.d_head={d_head}")
        mcfgs.append(replace(
            cfg.model, d_model=w, n_heads=w // d_head, mlp_hidden=max(1, round(w * razao_mlp))
        ))
    mups = [replace(cfg.mup, d_model=m.d_model, d_head=d_head) for m in mcfgs]

    tabelas = {
        "mup": coord_check(mcfgs, [derive_plan(m) for m in mups], seed=args.seed),
        "standard": coord_check(mcfgs, [standard_plan(m) for m in mups], seed=args.seed),
    }
    exibir_coord_check(tabelas)
    return EXIT_OK


# ─────────────────────────────────────────────────────────────────────────────
# Parser
# ─────────────────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Power LR Toolkit — schedules, µP, sweeps e lei de potência do LR ótimo"
    )
    parser.add_argument(
        "--config", default=os.getenv("POWERLR_CONFIG", "config.yaml"),
        help="Caminho para o arquivo de configuracao (default: $POWERLR_CONFIG ou config.yaml)"
    )
    parser.add_argument(
        "--log-level", default=os.getenv("POWERLR_LOG_LEVEL", "INFO"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper,
        help="Nível de log (default: $POWERLR_LOG_LEVEL ou INFO)"
    )
    sub = parser.add_subparsers(dest="comando", required=True)

    def _faixa(p, com_fim=True):
        p.add_argument("--start", type=_inteiro, default=0, help="Primeiro token da curva (default: 0)")
        p.add_argument("--end", type=_inteiro, default=None, help="Último token (default: schedule.total_tokens)")
        p.add_argument("--stride", type=_inteiro, required=True, help="Passo em tokens (aceita 1e8)")
        p.add_argument("--out", required=True, help="CSV de saída")

    p = sub.add_parser("schedule-emit", help="Amostra o schedule do config em CSV tokens,lr")
    _faixa(p)
    p.set_defaults(func=cmd_schedule_emit)

    p = sub.add_parser("schedule-compare", help="Cosine, WSD e Power lado a lado em CSV")
    _faixa(p)
    p.add_argument("--batch-size", type=_inteiro, default=None, help="β do Power (default: schedule.batch_size)")
    p.set_defaults(func=cmd_schedule_compare)

    p = sub.add_parser("predict-lr", help="η_opt = β·a·T^b")
    p.add_argument("--a", type=_numero, required=True)
    p.add_argument("--b", type=_numero, required=True)
    p.add_argument("--batch-size", type=_numero, required=True)
    p.add_argument("--tokens", type=_numero, required=True)
    p.set_defaults(func=cmd_predict_lr)

    p = sub.add_parser("mup-derive", help="Plano µP por grupo de parâmetros")
    p.add_argument("--out", default=None, help="CSV group,lr,init_std,forward_multiplier")
    p.add_argument("--standard", action="store_true", help="Mostra a parametrização padrão em vez do µP")
    p.set_defaults(func=cmd_mup_derive)

    p = sub.add_parser("fit", help="Ajusta γ = a·T^b a partir de um CSV tokens,gamma")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None, help="CSV a,b,rmse_log,n_points")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep-run", help="Executa (ou retoma) o sweep do config")
    p.add_argument("--parallelism", type=_inteiro, default=1)
    p.add_argument("--store", default="sweep_store.jsonl")
    p.add_argument("--corpus", default=None, help="Sobrescreve train.corpus")
    p.set_defaults(func=cmd_sweep_run)

    p = sub.add_parser("sweep-analyze", help="η_opt por célula, γ médio por T e ajuste")
    p.add_argument("--store", default="sweep_store.jsonl")
    p.add_argument("--top-k", type=_inteiro, default=3)
    p.add_argument("--out-dir", default="export")
    p.add_argument("--prefix", default="sweep")
    p.set_defaults(func=cmd_sweep_analyze)

    p = sub.add_parser("train", help="Um treino do modelo de brinquedo")
    p.add_argument("--out-history", default=None, help="CSV tokens,loss")
    p.add_argument("--out-checkpoint", default=None, help="Checkpoint .npz")
    p.add_argument("--corpus", default=None, help="Sobrescreve train.corpus")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("coord-check", help="RMS do stream residual por largura (µP vs padrão)")
    p.add_argument("--widths", default="32,64,128")
    p.add_argument("--seed", type=_inteiro, default=0)
    p.set_defaults(func=cmd_coord_check)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s [%(name)s] %(message)s",
        datefmt="%H:%M:%S",
        stream=sys.stderr,
        force=True,
    )
    banner()

    try:
        return args.func(args)
    except ValueError as e:            # ConfigError, ScheduleDomainError, FitError
        log.error(f"Erro de validação: {e}")
        return EXIT_VALIDACAO
    except (OSError, ToolkitError) as e:
        log.error(f"Erro de execução: {e}")
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        log.error("Interrompido pelo usuário.")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
