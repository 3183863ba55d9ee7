from __future__ import annotations

import math
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any

import typer
from rich.console import Console
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
    TimeElapsedColumn,
)
from rich.table import Table

from genhoi import __version__
from genhoi.config import (
    RunConfig,
    Settings,
    ZeroShotSetting,
    config_hash,
    get_config_file_path,
    get_settings,
    load_run_config,
    resolve_data_dir,
    save_config,
    save_run_config,
)
from genhoi.data.dataset import HOIDataset, load_samples
from genhoi.data.generator import DatasetSpec, generate_dataset
from genhoi.data.manifest import load_manifest
from genhoi.data.teacher import TEACHER_DIR, TEACHER_IDS, TEACHER_MATRIX, FileTeacher
from genhoi.embeddings.prompts import (
    BACKGROUND_PROMPT,
    hoi_prompts,
    object_prompts,
    read_prompts,
    write_prompts,
)
from genhoi.embeddings.providers import EmbeddingProvider, FileEmbeddingProvider, create_provider
from genhoi.embeddings.store import load_embedding_matrix, save_embedding_matrix
from genhoi.errors import EmbeddingError, GenHOIError
from genhoi.evaluation import evaluate
from genhoi.events import GENERATION_PROGRESS, TRAIN_STEP, EventBus
from genhoi.inference import (
    detect_dataset,
    load_detections,
    read_detections_meta,
    render_detections,
    write_detections,
)
from genhoi.label_space import (
    LabelSpace,
    SplitSpec,
    load_split,
    make_zero_shot_split,
    regular_split,
    resolve_label_space,
    save_split,
)
from genhoi.model.checkpoint import load_checkpoint
from genhoi.model.gen import build_model
from genhoi.selftest import SUITES, run_selftest
from genhoi.training.trainer import CHECKPOINT_NAME, Trainer
from genhoi.utils.logging import get_logger, run_log, set_run_id, set_stage, setup_logging

logger = get_logger(__name__)

app = typer.Typer(
    name="genhoi",
    help="Guided-embedding HOI detector: synthetic data, training, zero-shot splits, mAP",
    no_args_is_help=True,
    rich_markup_mode="rich",
)

console = Console()

MANIFEST = "manifest.json"
HOI_PROMPTS = "hoi_prompts.txt"
OBJECT_PROMPTS = "object_prompts.txt"
BACKGROUND_PROMPTS = "background_prompt.txt"
HOI_STORE = "hoi_text"
OBJECT_STORE = "object_text"
BACKGROUND_STORE = "background_text"
RUN_LOG = "train.log"

ConfigOption = Annotated[
    Path | None, typer.Option("--config", "-c", help="Run config (.json or .yaml)")
]
SeedOption = Annotated[int | None, typer.Option("--seed", help="Override the config seed")]
DataOption = Annotated[
    Path | None, typer.Option("--data", help="Dataset root holding train/ and test/")
]
RunDirOption = Annotated[
    Path | None, typer.Option("--run-dir", help="Directory for checkpoints and reports")
]


def version_callback(value: bool) -> None:
    if value:
        console.print(f"[bold blue]genhoi[/bold blue] version [green]{__version__}[/green]")
        raise typer.Exit()


@contextmanager
def cli_errors() -> Iterator[None]:
    try:
        yield
    except GenHOIError as e:
        logger.error("%s", e.message)
        console.print(f"[red]Error:[/red] {e.message}")
        raise typer.Exit(1) from None


def load_cli_config(config: Path | None, seed: int | None) -> RunConfig:
    cfg = load_run_config(config) if config is not None else RunConfig.preset("toy")
    return cfg.with_updates(seed=seed) if seed is not None else cfg


def default_run_dir(cfg: RunConfig, settings: Settings | None = None) -> Path:
    settings = settings or get_settings()
    return (settings.runs_dir or Path("runs")) / cfg.name


def create_progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[bold blue]{task.description}"),
        BarColumn(bar_width=40),
        MofNCompleteColumn(),
        "•",
        TextColumn("{task.fields[status]}"),
        TimeElapsedColumn(),
        console=console,
        transient=False,
    )


def train_counts_of(manifest_path: Path, ls: LabelSpace) -> list[int] | None:
    if not manifest_path.exists():
        return None
    return load_manifest(manifest_path, ls).hoi_counts(ls.num_triplets)


def resolve_split(
    cfg: RunConfig, ls: LabelSpace, split_path: Path | None, counts: list[int] | None
) -> SplitSpec:
    path = split_path or cfg.split.path
    if path is not None:
        return load_split(path, ls)
    if cfg.split.setting is None:
        return regular_split(ls, counts)
    return make_zero_shot_split(
        ls,
        cfg.split.setting,
        n_unseen=cfg.split.n_unseen,
        unseen_objects=cfg.split.unseen_objects,
        unseen_verbs=cfg.split.unseen_verbs,
        n_unseen_verbs=cfg.split.n_unseen_verbs,
        seed=cfg.seed,
        train_counts=counts,
    )


@app.command("gen-data")
def gen_data(
    config: ConfigOption = None,
    seed: SeedOption = None,
    output: Annotated[
        Path | None, typer.Option("-o", "--output", help="Dataset root (default: data dir)")
    ] = None,
    n_train: Annotated[int | None, typer.Option("--n-train", help="Training images")] = None,
    n_test: Annotated[int | None, typer.Option("--n-test", help="Held-out images")] = None,
    exponent: Annotated[
        float | None, typer.Option("--exponent", help="Long-tail exponent of triplet frequency")
    ] = None,
) -> None:
    """Render a synthetic train/test dataset with manifests."""
    cfg = load_cli_config(config, seed)
    updates = {
        k: v
        for k, v in {"n_train": n_train, "n_test": n_test, "long_tail_exponent": exponent}.items()
        if v is not None
    }
    if updates:
        cfg = cfg.with_updates(data=updates)

    with set_run_id(), set_stage("generate"), cli_errors():
        ls = resolve_label_space(cfg.data.label_space)
        root = output or resolve_data_dir(cfg)
        digest = config_hash(cfg)
        parts = [("train", cfg.data.n_train, cfg.seed), ("test", cfg.data.n_test, cfg.seed + 1)]
        progress = create_progress()
        with progress:
            for name, count, part_seed in parts:
                if count == 0:
                    continue
                task = progress.add_task(f"gen {name}", total=count, status="")
                bus = EventBus()
                bus.subscribe(
                    GENERATION_PROGRESS,
                    lambda data, task=task: progress.update(task, completed=data["done"]),
                )
                spec = DatasetSpec(
                    n_images=count,
                    image_size=cfg.model.image_size,
                    long_tail_exponent=cfg.data.long_tail_exponent,
                    seed=part_seed,
                    config=cfg.data,
                    prefix=name,
                )
                generate_dataset(spec, ls, root / name, config_hash=digest, event_bus=bus)
        save_run_config(cfg, root / "config.json")
    console.print(f"[green]Dataset written to[/green] {root}")


@app.command("make-split")
def make_split(
    setting: Annotated[str, typer.Argument(help="RF-UC, NF-UC, UO, UV or rare")],
    output: Annotated[Path, typer.Option("-o", "--output", help="Split JSON to write")],
    config: ConfigOption = None,
    seed: SeedOption = None,
    n_unseen: Annotated[
        int | None, typer.Option("--n-unseen", help="Unseen HOIs for RF-UC/NF-UC")
    ] = None,
    n_unseen_verbs: Annotated[
        int | None, typer.Option("--n-unseen-verbs", help="Draw this many unseen verbs (UV)")
    ] = None,
    data: DataOption = None,
) -> None:
    """Write a zero-shot or rare/non-rare split."""
    cfg = load_cli_config(config, seed)
    with set_run_id(), set_stage("split"), cli_errors():
        ls = resolve_label_space(cfg.data.label_space)
        root = data or resolve_data_dir(cfg)
        counts = train_counts_of(root / "train" / MANIFEST, ls)
        if setting == "rare":
            split = regular_split(ls, counts)
        else:
            try:
                zs = ZeroShotSetting(setting)
            except ValueError:
                console.print(f"[red]Unknown setting:[/red] {setting}")
                raise typer.Exit(1) from None
            split = make_zero_shot_split(
                ls,
                zs,
                n_unseen=n_unseen if n_unseen is not None else cfg.split.n_unseen,
                unseen_objects=cfg.split.unseen_objects,
                unseen_verbs=cfg.split.unseen_verbs,
                n_unseen_verbs=n_unseen_verbs or cfg.split.n_unseen_verbs,
                seed=cfg.seed,
                train_counts=counts,
            )
        save_split(split, output)

    table = Table(title=f"Split {split.setting} ({ls.name})")
    table.add_column("Set", style="cyan")
    table.add_column("HOIs", justify="right", style="green")
    table.add_row("seen", str(len(split.seen)))
    table.add_row("unseen", str(len(split.unseen)))
    table.add_row("rare", str(len(split.rare)))
    table.add_row("non-rare", str(len(split.non_rare)))
    console.print(table)


@app.command("export-prompts")
def export_prompts(
    output: Annotated[Path, typer.Option("-o", "--output", help="Directory for prompt files")],
    config: ConfigOption = None,
    seed: SeedOption = None,
) -> None:
    """Write one prompt per line for an external text encoder."""
    cfg = load_cli_config(config, seed)
    with cli_errors():
        ls = resolve_label_space(cfg.data.label_space)
        write_prompts(hoi_prompts(ls), output / HOI_PROMPTS)
        write_prompts(object_prompts(ls), output / OBJECT_PROMPTS)
        write_prompts([BACKGROUND_PROMPT], output / BACKGROUND_PROMPTS)
    console.print(
        f"Wrote {ls.num_triplets} HOI prompts, {ls.num_objects} object prompts "
        f"and the background prompt to {output}"
    )


@app.command("import-embeddings")
def import_embeddings(
    hoi: Annotated[Path, typer.Option("--hoi", help="EMB1 matrix, one row per HOI prompt")],
    objects: Annotated[
        Path, typer.Option("--objects", help="EMB1 matrix, one row per object prompt")
    ],
    background: Annotated[
        Path, typer.Option("--background", help="EMB1 matrix, one row for the background prompt")
    ],
    store: Annotated[Path, typer.Option("--store", help="Embedding store directory")],
    teacher: Annotated[
        Path | None, typer.Option("--teacher", help="EMB1 matrix of per-image embeddings")
    ] = None,
    teacher_ids: Annotated[
        Path | None, typer.Option("--teacher-ids", help="Image ids, one per teacher row")
    ] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
) -> None:
    """Validate externally computed embeddings and store them for training."""
    cfg = load_cli_config(config, seed)
    with cli_errors():
        ls = resolve_label_space(cfg.data.label_space)
        hoi_matrix = load_embedding_matrix(hoi, normalize=True)
        object_matrix = load_embedding_matrix(objects, normalize=True)
        if hoi_matrix.shape[0] != ls.num_triplets:
            raise EmbeddingError(f"{hoi} has {hoi_matrix.shape[0]} rows, need {ls.num_triplets}")
        if object_matrix.shape[0] != ls.num_objects:
            raise EmbeddingError(
                f"{objects} has {object_matrix.shape[0]} rows, need {ls.num_objects}"
            )
        background_matrix = load_embedding_matrix(background, normalize=True)
        if background_matrix.shape[0] != 1:
            raise EmbeddingError(f"{background} has {background_matrix.shape[0]} rows, need 1")
        if len({hoi_matrix.shape[1], object_matrix.shape[1], background_matrix.shape[1]}) != 1:
            raise EmbeddingError("HOI, object and background embeddings differ in dimension")
        save_embedding_matrix(hoi_matrix, store / f"{HOI_STORE}.emb")
        write_prompts(hoi_prompts(ls), store / f"{HOI_STORE}.txt")
        save_embedding_matrix(object_matrix, store / f"{OBJECT_STORE}.emb")
        write_prompts(object_prompts(ls), store / f"{OBJECT_STORE}.txt")
        save_embedding_matrix(background_matrix, store / f"{BACKGROUND_STORE}.emb")
        write_prompts([BACKGROUND_PROMPT], store / f"{BACKGROUND_STORE}.txt")
        if teacher is not None:
            if teacher_ids is None:
                raise EmbeddingError("--teacher needs --teacher-ids")
            ids = read_prompts(teacher_ids)
            matrix = load_embedding_matrix(teacher, normalize=True)
            FileTeacher(ids, matrix)
            save_embedding_matrix(matrix, store / TEACHER_DIR / TEACHER_MATRIX)
            write_prompts(ids, store / TEACHER_DIR / TEACHER_IDS)
    console.print(
        f"[green]Stored[/green] {hoi_matrix.shape[1]}-d embeddings in {store}; "
        f"train with --embeddings {store}"
    )


@app.command()
def train(
    config: ConfigOption = None,
    seed: SeedOption = None,
    data: DataOption = None,
    run_dir: RunDirOption = None,
    split: Annotated[Path | None, typer.Option("--split", help="Split JSON")] = None,
    epochs: Annotated[int | None, typer.Option("--epochs", help="Override epochs")] = None,
    embeddings: Annotated[
        Path | None, typer.Option("--embeddings", help="Embedding store from import-embeddings")
    ] = None,
) -> None:
    """Train a model; writes checkpoint, metrics and the resolved config."""
    cfg = load_cli_config(config, seed)
    if epochs is not None:
        cfg = cfg.with_updates(optim={"epochs": epochs})
    settings = get_settings()

    with set_run_id() as run_id, set_stage("train"), cli_errors():
        provider: EmbeddingProvider
        file_teacher = None
        if embeddings is not None:
            provider = FileEmbeddingProvider.from_store(embeddings)
            cfg = cfg.with_updates(
                embedding={"provider": "file", "store_dir": embeddings, "dim": provider.dim}
            )
            file_teacher = FileTeacher.from_store(embeddings)
        else:
            provider = create_provider(cfg.embedding)
        ls = resolve_label_space(cfg.data.label_space)
        root = data or resolve_data_dir(cfg, settings)
        train_manifest = root / "train" / MANIFEST
        counts = train_counts_of(train_manifest, ls)
        spec = resolve_split(cfg, ls, split, counts)
        run = run_dir or default_run_dir(cfg, settings)
        save_run_config(cfg, run / "config.json")
        save_split(spec, run / "split.json")

        dataset = HOIDataset.from_manifest(
            train_manifest, ls, cfg.data, augment=True, seed=cfg.seed
        )
        model = build_model(cfg, ls, provider, frozen_classifiers=spec.is_zero_shot)
        trainer = Trainer(
            cfg,
            model,
            dataset,
            ls,
            provider=provider,
            split=spec,
            run_dir=run,
            event_bus=EventBus(),
            file_teacher=file_teacher,
            device=settings.device,
        )
        steps = cfg.optim.epochs * math.ceil(len(dataset) / cfg.optim.batch_size)
        if cfg.optim.max_steps is not None:
            steps = min(steps, cfg.optim.max_steps)
        logger.info("Run %s writing to %s", run_id, run)

        progress = create_progress()
        task = progress.add_task("train", total=steps, status="")

        def on_step(event: dict[str, Any]) -> None:
            progress.update(task, completed=event["step"], status=f"loss {event['total']:.3f}")

        with (
            run_log(run / RUN_LOG),
            trainer.event_bus.subscribed(TRAIN_STEP, on_step),
            progress,
        ):
            result = trainer.fit()

    console.print(
        f"[green]Trained[/green] {result.steps} steps; checkpoint {result.checkpoint} "
        f"[dim](config {result.config_hash[:12]})[/dim]"
    )


@app.command()
def infer(
    config: ConfigOption = None,
    seed: SeedOption = None,
    data: DataOption = None,
    run_dir: RunDirOption = None,
    checkpoint: Annotated[
        Path | None, typer.Option("--checkpoint", help="Checkpoint (default: run dir)")
    ] = None,
    manifest: Annotated[
        Path | None, typer.Option("--manifest", help="Images to run on (default: test set)")
    ] = None,
    output: Annotated[
        Path | None, typer.Option("-o", "--output", help="Detections JSON")
    ] = None,
    render: Annotated[
        Path | None, typer.Option("--render", help="Write annotated PNGs to this directory")
    ] = None,
    render_limit: Annotated[
        int, typer.Option("--render-limit", help="Images to render")
    ] = 16,
    top_k: Annotated[int | None, typer.Option("--top-k", help="Detections per image")] = None,
    nms: Annotated[
        float | None, typer.Option("--nms", help="Triplet NMS IoU threshold")
    ] = None,
) -> None:
    """Detect HOI triplets with a trained checkpoint."""
    cfg = load_cli_config(config, seed)
    with set_run_id(), set_stage("infer"), cli_errors():
        run = run_dir or default_run_dir(cfg)
        model, trained_cfg, ls, header = load_checkpoint(checkpoint or run / CHECKPOINT_NAME)
        inference = trained_cfg.inference
        overrides = {"top_k": top_k, "nms_threshold": nms}
        inference = inference.model_copy(
            update={k: v for k, v in overrides.items() if v is not None}
        )
        manifest_path = manifest or (data or resolve_data_dir(cfg)) / "test" / MANIFEST
        samples = load_samples(load_manifest(manifest_path, ls), manifest_path.parent)
        detections = detect_dataset(samples, model, ls, inference)
        out = output or run / "detections.json"
        write_detections(detections, out, config_hash=header.get("config_hash"))
        if render is not None:
            for sample in samples[:render_limit]:
                render_detections(sample, detections, ls, render / f"{sample.image_id}.png")
    console.print(f"[green]Wrote[/green] {len(detections)} detections to {out}")


@app.command("eval")
def eval_command(
    config: ConfigOption = None,
    seed: SeedOption = None,
    data: DataOption = None,
    run_dir: RunDirOption = None,
    detections: Annotated[
        Path | None, typer.Option("--detections", help="Detections JSON")
    ] = None,
    manifest: Annotated[
        Path | None, typer.Option("--manifest", help="Ground-truth manifest")
    ] = None,
    split: Annotated[Path | None, typer.Option("--split", help="Split JSON")] = None,
    output: Annotated[Path | None, typer.Option("-o", "--output", help="Report JSON")] = None,
    csv: Annotated[Path | None, typer.Option("--csv", help="Per-category CSV")] = None,
) -> None:
    """Compute Full/Rare/Non-Rare (and Seen/Unseen) mAP."""
    cfg = load_cli_config(config, seed)
    with set_run_id(), set_stage("eval"), cli_errors():
        ls = resolve_label_space(cfg.data.label_space)
        run = run_dir or default_run_dir(cfg)
        root = data or resolve_data_dir(cfg)
        det_path = detections or run / "detections.json"
        split_path = split or (run / "split.json" if (run / "split.json").exists() else None)
        spec = load_split(split_path, ls) if split_path is not None else None
        report = evaluate(
            load_detections(det_path),
            load_manifest(manifest or root / "test" / MANIFEST, ls),
            ls,
            spec,
            train_counts=train_counts_of(root / "train" / MANIFEST, ls),
            config_hash=read_detections_meta(det_path).get("config_hash"),
        )
        out = output or run / "report.json"
        report.write_json(out)
        if csv is not None:
            report.write_csv(csv, ls, spec)

    table = Table(title=f"mAP ({report.setting})")
    table.add_column("Categories", style="cyan")
    table.add_column("mAP", justify="right", style="green")
    for name, value in report.summary_rows():
        table.add_row(name, "n/a" if value is None else f"{value:.4f}")
    console.print(table)
    console.print(f"Report written to {out}")


@app.command()
def selftest(
    suite: Annotated[
        list[str] | None, typer.Option("--suite", help=f"Run only these ({', '.join(SUITES)})")
    ] = None,
    full_gradcheck: Annotated[
        bool, typer.Option("--full-gradcheck", help="Check every parameter entry")
    ] = False,
    config: ConfigOption = None,
    seed: SeedOption = None,
) -> None:
    """Run the oracle suites."""
    unknown = [s for s in suite or [] if s not in SUITES]
    if unknown:
        console.print(f"[red]Unknown suite:[/red] {', '.join(unknown)}")
        raise typer.Exit(1)
    with set_run_id(), set_stage("selftest"):
        results = run_selftest(suite, full_gradcheck=full_gradcheck)

    table = Table(title="Self-test")
    table.add_column("Suite", style="cyan")
    table.add_column("Result")
    table.add_column("Detail", style="dim")
    table.add_column("Time", justify="right")
    for r in results:
        verdict = "[green]pass[/green]" if r.passed else "[red]FAIL[/red]"
        table.add_row(r.name, verdict, r.detail, f"{r.seconds:.1f}s")
    console.print(table)
    if not all(r.passed for r in results):
        raise typer.Exit(1)


@app.command()
def config(
    show: Annotated[bool, typer.Option("--show", help="Show current settings")] = False,
    init: Annotated[
        Path | None, typer.Option("--init", help="Write a preset run config to this path")
    ] = None,
    preset: Annotated[str, typer.Option("--preset", help="Preset for --init")] = "toy",
    reset: Annotated[bool, typer.Option("--reset", help="Reset settings to defaults")] = False,
) -> None:
    """Show settings, write a run config preset, or reset settings."""
    if reset:
        get_config_file_path().unlink(missing_ok=True)
        save_config(Settings())
        console.print("[green]Settings reset to defaults[/green]")
    if init is not None:
        with cli_errors():
            save_run_config(RunConfig.preset(preset), init)
        console.print(f"[green]Wrote {preset} config to[/green] {init}")

    if show or (not reset and init is None):
        settings = get_settings()
        table = Table(title="Current Settings")
        table.add_column("Setting", style="cyan")
        table.add_column("Value", style="green")
        table.add_row("Data Directory", str(settings.data_dir))
        table.add_row("Runs Directory", str(settings.runs_dir or Path("runs")))
        table.add_row("Device", settings.device)
        table.add_row("Threads", str(settings.num_threads or "default"))
        table.add_row("Config Directory", str(settings.config_dir))
        console.print(table)


@app.callback()
def main(
    version: Annotated[
        bool | None,
        typer.Option("--version", "-V", callback=version_callback, is_eager=True),
    ] = None,
) -> None:
    setup_logging()
    threads = get_settings().num_threads
    if threads is not None:
        import torch

        torch.set_num_threads(threads)


if __name__ == "__main__":
    app()
