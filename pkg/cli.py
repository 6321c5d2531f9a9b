"""
GFSID command-line interface
Batch entry points: gen-data, train, eval, gradcheck, compare, experiment
"""
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import typer
import yaml
from tabulate import tabulate

from config import (
    BANNER,
    DEFAULT_PRESET,
    DEFAULT_SEED,
    GRADCHECK_FIXTURES,
    GRADCHECK_MAX_DIMS,
    GRADCHECK_STEP,
    LOGS_PATH,
    STREAM_DATA,
    STREAM_EVAL,
    STREAM_MEMORY,
    STREAM_PHASE1,
    STREAM_PHASE2,
    STREAM_SPLIT,
    TRAIN_PRESETS,
    validate_config,
)
from gfsid.data_io import (
    Checkpoint,
    DatasetManifest,
    load_checkpoint,
    load_dataset,
    load_embeddings,
    load_manifest,
    load_records,
    save_checkpoint,
    save_dataset,
    save_manifest,
    save_records,
)
from gfsid.evaluation import (
    EpisodeSpec,
    EvalReport,
    GfsidSplit,
    eval_episodic,
    eval_nonepisodic,
    forgetting_diagnostics,
    make_split,
    render_diagnostics,
    render_report,
)
from gfsid.experiment import ExperimentConfig, run_experiment, vocab_texts
from gfsid.gradient_suite import GRADIENT_CHECKS, run_gradient_suite
from gfsid.model import IntentModel
from gfsid.synthetic import generate_synthetic
from gfsid.text_pipeline import MeanPoolEncoder, PrecomputedEncoder, Utterance, make_encoder
from gfsid.training import (
    PhaseOutput,
    Preservation,
    TrainConfig,
    TrainReport,
    prepare_preservation,
    run_phase1,
    run_phase2,
)
from numeric import derive_rng
from utils.error_handler import ConfigError, DataFormatError, cli_error_handler
from utils.logger import get_logger, setup_logging

logger = get_logger(__name__)

app = typer.Typer(
    add_completion=False,
    no_args_is_help=True,
    help="Two-phase generalized few-shot intent detection with prototype knowledge preservation.",
)


class EvalMode(str, Enum):
    NONEPS = "noneps"
    EPS = "eps"


@app.callback()
def main(
    debug: bool = typer.Option(False, "--debug", help="Log at DEBUG level"),
    log_dir: Path = typer.Option(LOGS_PATH, "--log-dir", help="Directory for the dated log file"),
):
    setup_logging(logging.DEBUG if debug else logging.INFO, log_dir)
    logger.debug(BANNER)


# ============================================================================
# Helpers
# ============================================================================

def _read_config_file(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        values = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {path} does not parse: {e}") from None
    if not isinstance(values, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return values


def _train_config(
    base: Dict[str, Any],
    preset: Optional[str],
    config_path: Optional[Path],
    flags: Dict[str, Any],
) -> TrainConfig:
    """flags > config file > preset (if given) > base values."""
    values = dict(base)
    file_values = _read_config_file(config_path)
    preset = preset or file_values.pop("preset", None)
    if preset is not None:
        if preset not in TRAIN_PRESETS:
            raise ConfigError(f"unknown preset '{preset}', expected one of {sorted(TRAIN_PRESETS)}")
        values.update(TRAIN_PRESETS[preset])
    values.update(file_values)
    values.update({k: v for k, v in flags.items() if v is not None})
    return TrainConfig.parse(values)


def _config_echo(cfg: TrainConfig, phase: int, data_path: Path, embeddings: Optional[Path], **extra) -> Dict:
    return {
        "phase": phase,
        "train": cfg.model_dump(mode="json", by_alias=True),
        "dataset": str(data_path),
        "embeddings": str(embeddings) if embeddings else None,
        "encoder": PrecomputedEncoder.kind if embeddings else MeanPoolEncoder.kind,
        **extra,
    }


def _load_split(data_path: Path, seed: int, k: int) -> Tuple[List[Utterance], GfsidSplit]:
    data = load_dataset(data_path)
    manifest = load_manifest(data_path)
    split = make_split(data, manifest.seen, manifest.novel, k, derive_rng(seed, STREAM_SPLIT), seed)
    return data, split


def _restore_model(ckpt: Checkpoint, cfg: TrainConfig, n_records: int) -> IntentModel:
    echo = ckpt.config or {}
    vectors = None
    if echo.get("embeddings"):
        vectors = load_embeddings(echo["embeddings"], expected_count=n_records)
    encoder = make_encoder(echo.get("encoder", MeanPoolEncoder.kind), cfg.encoder, vectors)
    return IntentModel(encoder, ckpt.vocab, ckpt.params, ckpt.store)


def _echo_of(ckpt: Checkpoint, path: Path) -> Dict:
    if not ckpt.config or "train" not in ckpt.config or "dataset" not in ckpt.config:
        raise ConfigError(f"checkpoint {path} carries no training configuration")
    return ckpt.config


def _report_path(out: Path, suffix: str) -> Path:
    return out.with_name(f"{out.name}.{suffix}.jsonl")


def _print_train_report(report: TrainReport) -> None:
    last = report.epochs[-1]
    rows = [
        ["phase", report.phase],
        ["preservation", report.preservation.value],
        ["epochs", len(report.epochs)],
        ["final total loss", f"{last.total:.6f}"],
        ["  cls / ii / is", f"{last.l_cls:.6f} / {last.l_ii:.6f} / {last.l_is:.6f}"],
        ["  kd / l2", f"{last.l_kd:.6f} / {last.l_l2:.6f}"],
        ["checksum", report.checksum],
    ]
    typer.echo(tabulate(rows, tablefmt="simple"))


# ============================================================================
# Commands
# ============================================================================

@app.command("gen-data")
@cli_error_handler
def gen_data(
    out: Path = typer.Option(..., "--out", help="Dataset file to write (JSON lines)"),
    seen: int = typer.Option(8, "--seen", min=2, help="Number of seen intents"),
    novel: int = typer.Option(4, "--novel", min=1, help="Number of novel intents"),
    per_intent: int = typer.Option(50, "--per-intent", min=10, help="Utterances per intent"),
    seed: int = typer.Option(DEFAULT_SEED, "--seed", min=0, help="Generator seed"),
):
    """Write a synthetic corpus plus its seen/novel manifest."""
    if not validate_config(out.parent):
        raise ConfigError(f"cannot write into {out.parent}")
    data, seen_names, novel_names = generate_synthetic(seen, novel, per_intent, derive_rng(seed, STREAM_DATA))
    try:
        save_dataset(data, out)
        manifest = save_manifest(
            DatasetManifest(seen=seen_names, novel=novel_names, seed=seed, per_intent=per_intent), out
        )
    except OSError as e:
        raise DataFormatError(f"cannot write dataset: {e}", str(out)) from None
    typer.echo(f"wrote {len(data)} utterances to {out} (manifest {manifest})")


@app.command()
@cli_error_handler
def train(
    phase: int = typer.Option(..., "--phase", min=1, max=2, help="Training phase (1 or 2)"),
    out: Path = typer.Option(..., "--out", help="Checkpoint file to write"),
    data: Optional[Path] = typer.Option(None, "--data", help="Dataset file (phase 1; phase 2 defaults to the checkpoint's)"),
    from_ckpt: Optional[Path] = typer.Option(None, "--from", help="Phase-1 checkpoint (phase 2)"),
    preserve: Optional[Preservation] = typer.Option(None, "--preserve", help="Knowledge preservation (phase 2)"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Split and training seed"),
    k_shot: int = typer.Option(
        1, "--k-shot", min=1, help="Supports per intent (phase 2; phase 1 under vocab scope 'train')"
    ),
    lambda_: Optional[float] = typer.Option(None, "--lambda", help="L2 penalty weight"),
    memory_ratio: Optional[float] = typer.Option(None, "--memory-ratio", help="Replay memory size as a fraction of seen data"),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Epochs for this phase"),
    lr: Optional[float] = typer.Option(None, "--lr", help="Learning rate for this phase"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size"),
    preset: Optional[str] = typer.Option(None, "--preset", help=f"One of {sorted(TRAIN_PRESETS)}"),
    config_path: Optional[Path] = typer.Option(None, "--config", help="YAML/JSON file with TrainConfig fields"),
    embeddings: Optional[Path] = typer.Option(None, "--embeddings", help="Precomputed hidden vectors (phase 1)"),
):
    """Run phase 1 or phase 2 and write a checkpoint plus per-epoch report."""
    if not validate_config(out.parent):
        raise ConfigError(f"cannot write into {out.parent}")
    flags = {
        f"phase{phase}_epochs": epochs,
        f"phase{phase}_lr": lr,
        "batch_size": batch_size,
        "lambda": lambda_,
        "memory_ratio": memory_ratio,
        "seed": seed,
    }

    if phase == 1:
        if data is None:
            raise typer.BadParameter("phase 1 requires a dataset", param_hint="--data")
        cfg = _train_config(TRAIN_PRESETS[DEFAULT_PRESET], preset, config_path, flags)
        records, split = _load_split(data, cfg.seed, k_shot)
        vectors = load_embeddings(embeddings, expected_count=len(records)) if embeddings else None
        output = run_phase1(
            split.seen_train, cfg, derive_rng(cfg.seed, STREAM_PHASE1), vocab_texts(cfg, split), vectors
        )
        echo = _config_echo(cfg, 1, data, embeddings, k_shot=k_shot)
        ckpt = Checkpoint(output.params, output.store, output.model.vocab, config=echo)
    else:
        if from_ckpt is None:
            raise typer.BadParameter("phase 2 requires a phase-1 checkpoint", param_hint="--from")
        if preserve is None:
            raise typer.BadParameter("phase 2 requires none, dakp or ddkp", param_hint="--preserve")
        base = load_checkpoint(from_ckpt)
        echo = _echo_of(base, from_ckpt)
        if echo.get("phase") != 1:
            raise ConfigError(f"{from_ckpt} is not a phase-1 checkpoint")
        phase1_seed = echo["train"]["seed"]
        if seed is not None and seed != phase1_seed:
            raise ConfigError(f"phase 2 must reuse the phase-1 seed {phase1_seed}, got {seed}")
        flags["preservation"] = preserve
        cfg = _train_config(echo["train"], preset, config_path, flags)
        if cfg.vocab_scope == "train" and k_shot != echo.get("k_shot", k_shot):
            raise ConfigError(f"vocab scope 'train' was built from {echo['k_shot']}-shot supports, got --k-shot {k_shot}")

        data_path = data or Path(echo["dataset"])
        records, split = _load_split(data_path, cfg.seed, k_shot)
        model = _restore_model(base, cfg, len(records))
        phase1 = PhaseOutput(model, TrainReport(phase=1, preservation=Preservation.NONE, epochs=[], checksum=model.checksum()))
        snapshot, memory = prepare_preservation(phase1, cfg, split.seen_train, derive_rng(cfg.seed, STREAM_MEMORY))
        output = run_phase2(split.joint_support(), phase1, cfg, derive_rng(cfg.seed, STREAM_PHASE2), snapshot, memory)
        ckpt = Checkpoint(
            output.params,
            output.store,
            output.model.vocab,
            snapshot=snapshot,
            memory=memory,
            config=_config_echo(cfg, 2, data_path, echo.get("embeddings") and Path(echo["embeddings"]), k_shot=k_shot),
        )

    save_checkpoint(ckpt, out)
    report_file = save_records(output.report.epochs, _report_path(out, "train"))
    _print_train_report(output.report)
    typer.echo(f"checkpoint: {out}\nreport: {report_file}")


@app.command("eval")
@cli_error_handler
def evaluate(
    from_ckpt: Path = typer.Option(..., "--from", help="Phase-2 checkpoint"),
    mode: EvalMode = typer.Option(EvalMode.NONEPS, "--mode"),
    ways: Optional[int] = typer.Option(None, "--ways", help="C (eps)"),
    shots: Optional[int] = typer.Option(None, "--shots", help="K (eps)"),
    episodes: Optional[int] = typer.Option(None, "--episodes", help="Episode count (eps)"),
    novel_only: bool = typer.Option(False, "--novel-only", help="Sample episode ways from novel intents only"),
    workers: int = typer.Option(1, "--workers", min=1, help="Threads for episodic evaluation"),
    data: Optional[Path] = typer.Option(None, "--data", help="Dataset file (defaults to the checkpoint's)"),
    out: Optional[Path] = typer.Option(None, "--out", help="Report file (JSON lines)"),
):
    """Evaluate a phase-2 checkpoint non-episodically or over C-way K-shot episodes."""
    spec = None
    if mode == EvalMode.EPS:
        missing = [flag for flag, value in (("--ways", ways), ("--shots", shots), ("--episodes", episodes)) if value is None]
        if missing:
            raise typer.BadParameter(f"episodic mode requires {', '.join(missing)}", param_hint="--mode")
        spec = EpisodeSpec.create(ways=ways, shots=shots, episodes=episodes)

    ckpt = load_checkpoint(from_ckpt)
    echo = _echo_of(ckpt, from_ckpt)
    if echo.get("phase") != 2:
        raise ConfigError(f"{from_ckpt} is not a phase-2 checkpoint")
    cfg = TrainConfig.parse(echo["train"])
    records, split = _load_split(data or Path(echo["dataset"]), cfg.seed, echo.get("k_shot", 1))
    model = _restore_model(ckpt, cfg, len(records))

    preservation = cfg.preservation.value
    if spec is None:
        report = eval_nonepisodic(model, split, preservation)
    else:
        report = eval_episodic(
            model, split, spec, derive_rng(cfg.seed, STREAM_EVAL), novel_only=novel_only,
            workers=workers, preservation=preservation,
        )

    out = out or _report_path(from_ckpt, f"eval.{mode.value}")
    save_records([report], out)
    typer.echo(render_report(report))
    typer.echo(f"\nreport: {out}")


@app.command()
@cli_error_handler
def gradcheck(
    step: float = typer.Option(GRADCHECK_STEP, "--step", help="Central-difference step"),
    dims: int = typer.Option(GRADCHECK_MAX_DIMS, "--dims", min=2, help="Maximum fixture dimension"),
    seed: int = typer.Option(DEFAULT_SEED, "--seed", min=0),
    fixtures: int = typer.Option(GRADCHECK_FIXTURES, "--fixtures", min=1, help="Randomized fixtures per check"),
    only: Optional[List[str]] = typer.Option(None, "--only", help=f"Subset of {list(GRADIENT_CHECKS)}"),
):
    """Check every closed-form gradient against finite differences."""
    results = run_gradient_suite(seed, only, fixtures, dims, step)
    rows = [
        [r.name, r.fixtures, f"{r.max_rel_error:.3e}", "PASS" if r.passed else f"FAIL {r.error}".strip()]
        for r in results
    ]
    typer.echo(tabulate(rows, headers=["check", "fixtures", "max rel error", "status"], tablefmt="simple"))
    if not all(r.passed for r in results):
        raise typer.Exit(code=1)


@app.command()
@cli_error_handler
def compare(
    reports: List[Path] = typer.Argument(..., help="Non-episodic report files, one per preservation mode"),
    out: Optional[Path] = typer.Option(None, "--out", help="Diagnostics file (JSON lines)"),
):
    """Seen/novel accuracy deltas of each preservation mode against 'none'."""
    by_mode: Dict[str, EvalReport] = {}
    for path in reports:
        loaded = load_records(path, EvalReport)
        if not loaded:
            raise DataFormatError("report file is empty", str(path))
        report = loaded[-1]
        if report.preservation is None:
            raise DataFormatError("report does not name its preservation mode", str(path))
        by_mode[report.preservation] = report

    rows = forgetting_diagnostics(by_mode)
    typer.echo(render_diagnostics(rows))
    if out is not None:
        save_records(rows, out)


@app.command()
@cli_error_handler
def experiment(
    seeds: List[int] = typer.Option([1, 2, 3], "--seed", help="Repeat for several seeds"),
    k_shots: List[int] = typer.Option([1, 5], "--k-shot", help="Repeat for several K"),
    seen: int = typer.Option(8, "--seen", min=2),
    novel: int = typer.Option(4, "--novel", min=1),
    per_intent: int = typer.Option(50, "--per-intent", min=10),
    episodes: Optional[int] = typer.Option(None, "--episodes", min=1, help="Also evaluate on joint K-shot episodes"),
    preset: Optional[str] = typer.Option(None, "--preset"),
    config_path: Optional[Path] = typer.Option(None, "--config"),
    out: Optional[Path] = typer.Option(None, "--out", help="Per-run results file (JSON lines)"),
):
    """Synthetic end-to-end runs under every preservation mode, summarised by median over seeds."""
    cfg = _train_config(TRAIN_PRESETS[DEFAULT_PRESET], preset, config_path, {})
    exp = ExperimentConfig.parse(
        seeds=seeds, k_shots=k_shots, n_seen=seen, n_novel=novel, per_intent=per_intent, train=cfg,
        episodes=episodes,
    )
    results, summary, diagnostics = run_experiment(exp)

    for seed, k, rows in diagnostics:
        typer.echo(f"\nseed {seed}, {k}-shot")
        typer.echo(render_diagnostics(rows))
    headers = ["K", "preservation", "accuracy", "seen", "novel", "seeds"]
    table = [
        [s.k_shot, s.preservation.value, f"{s.median_accuracy:.4f}", f"{s.median_seen_accuracy:.4f}",
         f"{s.median_novel_accuracy:.4f}", s.seeds]
        for s in summary
    ]
    if episodes is not None:
        headers.append("episodic")
        for row, s in zip(table, summary):
            row.append(f"{s.median_episodic_accuracy:.4f}")
    typer.echo("\n" + tabulate(table, headers=headers))
    if out is not None:
        save_records(results, out)


if __name__ == "__main__":
    app()
