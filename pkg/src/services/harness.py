"""Experiment orchestration: config loading, per-seed runs, probes, grids, outputs.

Run directory layout::

    <out>/<strategy>/seed_<s>/config.ini
                              summary.json
                              epochs.csv
                              checkpoint_net<k>.bin
                              histograms/epoch_<e>.csv
"""

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import structlog
from pydantic import ValidationError

from src.models.augmentation import AugStrategy, Policy, WarmupVariant
from src.models.dataset import NoiseKind, NoisyDataset
from src.models.experiment import (
    DataSource,
    ExperimentConfig,
    ExperimentReport,
    LossViews,
    ProbeResult,
    RunResult,
)
from src.models.mixture import HistogramBin, LossRecord
from src.models.network import Network
from src.models.strategy import StrategyFamily, StrategySpec, parse_strategy
from src.services.augment import expand, plain_images
from src.services.checkpoint import save_checkpoint
from src.services.coteaching import coteaching_plus_epoch
from src.services.data import generate_glyphs, inject_asymmetric, inject_symmetric, load_idx
from src.services.dividemix import dividemix_epoch
from src.services.lossmodel import (
    loss_histogram,
    loss_record,
    per_sample_losses,
    separation_auc,
)
from src.services.mdyrh import mdyrh_epoch
from src.services.nn import lr_at
from src.services.strategies import EpochContext, ce_baseline_epoch, evaluate, warmup
from src.utils.config import (
    apply_overrides,
    nest_sections,
    read_ini,
    settings,
    validation_message,
    write_ini,
)
from src.utils.errors import ConfigurationError, DiagnosticError, HarnessIOError

log = structlog.get_logger(__name__)

# INI section -> ExperimentConfig field (None: top-level keys).
SECTIONS: Dict[str, Optional[str]] = {
    "run": None,
    "data": "data",
    "noise": "noise",
    "augment": "augment",
    "optim": "optim",
    "dividemix": "dividemix",
    "coteaching": "coteaching",
    "mdyrh": "mdyrh",
}

_TEST_SEED_OFFSET = 7919


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()
) -> ExperimentConfig:
    sections = read_ini(Path(path)) if path else {}
    sections = apply_overrides(sections, overrides)
    try:
        return ExperimentConfig.model_validate(nest_sections(sections, SECTIONS))
    except ValidationError as e:
        raise ConfigurationError(validation_message(e)) from e


def _flatten(values: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in values.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def config_sections(config: ExperimentConfig) -> Dict[str, Dict[str, Any]]:
    """INI sections that ``load_config`` turns back into an equal config."""
    families = ("dividemix", "coteaching", "mdyrh")
    dumped = config.model_dump(mode="json", exclude={name: {"strategy"} for name in families})
    sections: Dict[str, Dict[str, Any]] = {"run": {}}
    for key, value in dumped.items():
        if key in SECTIONS and SECTIONS[key] is not None:
            sections[key] = _flatten(value)
        else:
            sections["run"][key] = value
    return sections


def build_datasets(config: ExperimentConfig, seed: int) -> Tuple[NoisyDataset, NoisyDataset]:
    """(noisy train set, clean test set normalized with the train statistics)."""
    data = config.data
    data_seed = data.seed if data.seed is not None else seed
    if data.source == DataSource.GLYPHS:
        train = generate_glyphs(data.glyph, data_seed)
        test_spec = data.glyph.model_copy(update={"samples_per_class": data.test_samples_per_class})
        test = generate_glyphs(test_spec, data_seed + _TEST_SEED_OFFSET)
    else:
        paths = (data.train_images, data.train_labels, data.test_images, data.test_labels)
        if any(p is None for p in paths):
            raise ConfigurationError(
                "idx data needs train_images, train_labels, test_images and test_labels"
            )
        train = load_idx(data.train_images, data.train_labels)
        test = load_idx(data.test_images, data.test_labels, train.num_classes)
    if test.image_shape != train.image_shape:
        raise ConfigurationError(
            f"test images {test.image_shape} do not match train images {train.image_shape}"
        )

    noise_seed = config.noise.seed if config.noise.seed is not None else seed
    if config.noise.kind == NoiseKind.SYMMETRIC:
        train = inject_symmetric(train, config.noise.rate, noise_seed, config.noise.convention)
    else:
        train = inject_asymmetric(train, config.noise.rate, noise_seed)
    return train, replace(test, stats=train.stats)


def _diagnostic_auc(
    net: Network, dataset: NoisyDataset, epoch: int
) -> Tuple[Optional[float], LossRecord]:
    losses = per_sample_losses(net, plain_images(dataset), dataset.given_labels)
    record = loss_record(epoch, losses)
    try:
        return separation_auc(record.raw, dataset.flip_mask), record
    except DiagnosticError:
        return None, record


class _Trainer:
    """Dispatches one epoch of the configured strategy family."""

    def __init__(self, config: ExperimentConfig, spec: StrategySpec, noise_rate: float):
        self.config = config
        self.spec = spec
        self.warmup_strategy = spec.augmentation
        if spec.family in (StrategyFamily.COTEACHING_PLUS, StrategyFamily.MDYRH):
            self.warmup_strategy = AugStrategy(
                variant=spec.augmentation.variant, warmup=WarmupVariant.WAW
            )
        aug = config.augment
        self.kwargs = dict(
            batch_size=config.optim.batch_size, randaugment=aug.randaugment, pad=aug.pad
        )
        analysis_losses = aug.loss_views == LossViews.ANALYSIS
        asymmetric = config.noise.kind == NoiseKind.ASYMMETRIC
        family = spec.family
        if family == StrategyFamily.DIVIDEMIX:
            self.family_cfg = config.dividemix.resolved(noise_rate, asymmetric).model_copy(
                update={"strategy": spec.augmentation}
            )
            self.warm_up = self.family_cfg.warm_up
            self.penalty = bool(self.family_cfg.confidence_penalty)
            self.epoch_kwargs = dict(self.kwargs, loss_views_analysis=analysis_losses)
        elif family == StrategyFamily.COTEACHING_PLUS:
            self.family_cfg = config.coteaching.resolved(noise_rate).model_copy(
                update={"strategy": spec.augmentation}
            )
            self.warm_up = self.family_cfg.warm_up
            self.penalty = False
            # Co-teaching+ and M-DYR-H draw strong views from their own sections.
            self.epoch_kwargs = dict(batch_size=config.optim.batch_size, pad=aug.pad)
        elif family == StrategyFamily.MDYRH:
            self.family_cfg = config.mdyrh.model_copy(update={"strategy": spec.augmentation})
            self.warm_up = self.family_cfg.warm_up
            self.penalty = False
            self.epoch_kwargs = dict(
                batch_size=config.optim.batch_size,
                pad=aug.pad,
                loss_views_analysis=analysis_losses,
            )
        else:
            self.family_cfg = None
            self.warm_up = 0
            self.penalty = False
            self.epoch_kwargs = dict(self.kwargs)

    @property
    def num_nets(self) -> int:
        two = (StrategyFamily.DIVIDEMIX, StrategyFamily.COTEACHING_PLUS)
        return 2 if self.spec.family in two else 1

    def epoch(self, ctx: EpochContext, train: NoisyDataset) -> EpochContext:
        if ctx.epoch < self.warm_up:
            return warmup(
                ctx, train, 1, self.warmup_strategy, penalty=self.penalty, **self.kwargs
            )
        family = self.spec.family
        if family == StrategyFamily.DIVIDEMIX:
            return dividemix_epoch(ctx, train, self.family_cfg, **self.epoch_kwargs)
        if family == StrategyFamily.COTEACHING_PLUS:
            return coteaching_plus_epoch(ctx, train, self.family_cfg, **self.epoch_kwargs)
        if family == StrategyFamily.MDYRH:
            return mdyrh_epoch(ctx, train, self.family_cfg, **self.epoch_kwargs)
        return ce_baseline_epoch(
            ctx, train, self.spec.augmentation.descent_policy, **self.epoch_kwargs
        )


def _prepare_train(
    train: NoisyDataset, config: ExperimentConfig, spec: StrategySpec, seed: int
) -> NoisyDataset:
    kind = spec.augmentation.expansion_policy
    if kind is None:
        return train
    policy = Policy(kind=kind, randaugment=config.augment.randaugment, pad=config.augment.pad)
    return expand(train, policy, seed)


def run_seed(
    config: ExperimentConfig, seed: int, directory: Optional[Union[str, Path]] = None
) -> RunResult:
    """Train one seed end to end; deterministic for a fixed (config, seed)."""
    started = time.perf_counter()
    spec = parse_strategy(config.strategy)
    train, test = build_datasets(config, seed)
    noise_rate = train.noise_rate
    trainer = _Trainer(config, spec, noise_rate)
    train = _prepare_train(train, config, spec, seed)
    ctx = EpochContext.create(
        train.image_shape,
        train.num_classes,
        trainer.num_nets,
        seed,
        config.optim.schedule(),
        config.optim.momentum,
        config.optim.weight_decay,
    )
    result = RunResult(seed=seed, strategy=spec.name, noise_rate=noise_rate)
    histograms: Dict[int, List[HistogramBin]] = {}
    run_log = log.bind(strategy=spec.name, seed=seed)
    run_log.info("run_started", train_size=len(train), noise_rate=round(noise_rate, 4))

    for _ in range(config.epochs):
        lr = lr_at(ctx.epoch, ctx.schedule)
        ctx = trainer.epoch(ctx, train)
        acc = evaluate(ctx.nets, test)
        auc, record = _diagnostic_auc(ctx.nets[0], train, ctx.epoch)
        result.test_acc.append(acc)
        result.train_loss.append(ctx.train_loss)
        result.auc.append(auc)
        result.lr.append(lr)
        if config.histogram_every and ctx.epoch % config.histogram_every == 0:
            histograms[ctx.epoch] = loss_histogram(
                record.normalized, train.flip_mask, config.probe_bins
            )
        run_log.info(
            "epoch_finished",
            epoch=ctx.epoch,
            test_acc=round(acc, 2),
            train_loss=round(ctx.train_loss, 4),
            auc=None if auc is None else round(auc, 4),
        )

    result.wall_time = time.perf_counter() - started
    result.audit_violations = len(ctx.audit.violations)
    result.audit_counts = ctx.audit.summary()
    run_log.info("run_finished", best=round(result.best, 2), last=round(result.last, 2))
    if directory is not None:
        emit_metrics(result, directory, config, ctx.nets, histograms)
    return result


def _guard_io(path: Path, action) -> None:
    try:
        action()
    except OSError as e:
        raise HarnessIOError(path, e) from e


def write_histogram_csv(bins: Sequence[HistogramBin], path: Path) -> Path:
    def action() -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["bin_left", "clean_count", "noisy_count"])
            for row in bins:
                writer.writerow([f"{row.bin_left:.6f}", row.clean_count, row.noisy_count])

    _guard_io(path, action)
    return path


def emit_metrics(
    result: RunResult,
    directory: Union[str, Path],
    config: Optional[ExperimentConfig] = None,
    nets: Sequence[Network] = (),
    histograms: Optional[Dict[int, List[HistogramBin]]] = None,
) -> List[Path]:
    out = Path(directory)
    _guard_io(out, lambda: out.mkdir(parents=True, exist_ok=True))
    written: List[Path] = []

    epochs_path = out / "epochs.csv"

    def write_epochs() -> None:
        with open(epochs_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "test_acc", "train_loss", "auc", "lr"])
            for i, acc in enumerate(result.test_acc):
                auc = result.auc[i]
                writer.writerow(
                    [
                        i + 1,
                        f"{acc:.4f}",
                        f"{result.train_loss[i]:.6f}",
                        "" if auc is None else f"{auc:.6f}",
                        f"{result.lr[i]:.6g}",
                    ]
                )

    _guard_io(epochs_path, write_epochs)
    written.append(epochs_path)

    summary = result.summary()
    if config is not None:
        summary["config"] = config.model_dump(mode="json")
    summary_path = out / "summary.json"
    _guard_io(summary_path, lambda: summary_path.write_text(json.dumps(summary, indent=2)))
    written.append(summary_path)

    if config is not None:
        ini_path = out / "config.ini"
        echo = config.model_copy(update={"seeds": [result.seed]})
        _guard_io(ini_path, lambda: write_ini(config_sections(echo), ini_path))
        written.append(ini_path)

    for k, net in enumerate(nets):
        written.append(save_checkpoint(net, out / f"checkpoint_net{k}.bin"))

    for epoch, bins in sorted((histograms or {}).items()):
        written.append(write_histogram_csv(bins, out / "histograms" / f"epoch_{epoch}.csv"))
    return written


def _map_seeds(config: ExperimentConfig, seeds: Sequence[int], base: Path) -> List[RunResult]:
    dirs = [base / f"seed_{seed}" for seed in seeds]
    workers = min(settings.THREADS, len(seeds))
    if workers <= 1:
        return [run_seed(config, seed, d) for seed, d in zip(seeds, dirs)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_seed, [config] * len(seeds), seeds, dirs))


def output_root(config: ExperimentConfig, out: Optional[Union[str, Path]] = None) -> Path:
    return Path(out or config.output_dir or settings.OUTPUT_DIR)


def run(config: ExperimentConfig, out: Optional[Union[str, Path]] = None) -> ExperimentReport:
    """All seeds of one configuration, plus the aggregate in report.json."""
    spec = parse_strategy(config.strategy)
    base = output_root(config, out) / spec.name
    report = ExperimentReport(
        strategy=spec.name, results=_map_seeds(config, list(config.seeds), base)
    )
    payload = {
        "strategy": spec.name,
        "aggregate": report.aggregate(),
        "seeds": [r.summary() for r in report.results],
    }
    report_path = base / "report.json"
    _guard_io(report_path, lambda: report_path.write_text(json.dumps(payload, indent=2)))
    log.info("experiment_finished", strategy=spec.name, **report.aggregate())
    return report


def probe_seed(
    config: ExperimentConfig, seed: int, p_strong: float, directory: Optional[Path] = None
) -> ProbeResult:
    """Single-network warm-up with strong views at rate ``p_strong``, measured at the probe epoch."""
    spec = parse_strategy(config.strategy)
    train, _ = build_datasets(config, seed)
    strategy = AugStrategy(variant=spec.augmentation.variant, warmup=WarmupVariant.WAW)
    ctx = EpochContext.create(
        train.image_shape,
        train.num_classes,
        1,
        seed,
        config.optim.schedule(),
        config.optim.momentum,
        config.optim.weight_decay,
    )
    warmup(
        ctx,
        train,
        config.probe_epoch,
        strategy,
        batch_size=config.optim.batch_size,
        p_strong=p_strong,
        randaugment=config.augment.randaugment,
        pad=config.augment.pad,
    )
    auc, record = _diagnostic_auc(ctx.nets[0], train, ctx.epoch)
    bins = loss_histogram(record.normalized, train.flip_mask, config.probe_bins)
    result = ProbeResult(
        seed=seed, p_strong=p_strong, epoch=config.probe_epoch, auc=auc, histogram=bins
    )
    log.info("probe_finished", seed=seed, p_strong=p_strong, auc=auc)
    if directory is not None:
        write_histogram_csv(bins, directory / "histograms" / f"epoch_{config.probe_epoch}.csv")
        probe_path = directory / "probe.json"
        _guard_io(
            probe_path,
            lambda: probe_path.write_text(result.model_dump_json(indent=2)),
        )
    return result


def warmup_probe(
    config: ExperimentConfig,
    p_strong: Sequence[float],
    out: Optional[Union[str, Path]] = None,
) -> Dict[float, List[ProbeResult]]:
    for p in p_strong:
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"p_strong values must lie in [0, 1], got {p}")
    base = output_root(config, out) / "probe"
    results: Dict[float, List[ProbeResult]] = {}
    for p in p_strong:
        results[p] = [
            probe_seed(config, seed, p, base / f"p_{p:g}" / f"seed_{seed}") for seed in config.seeds
        ]
    return results


def grid(
    config: ExperimentConfig,
    strategies: Sequence[str],
    noise_rates: Sequence[float],
    out: Optional[Union[str, Path]] = None,
) -> Dict[Tuple[str, float], ExperimentReport]:
    """Cartesian strategy × noise sweep, one directory per cell."""
    for name in strategies:
        parse_strategy(name)
    base = output_root(config, out)
    reports: Dict[Tuple[str, float], ExperimentReport] = {}
    for name in strategies:
        for rate in noise_rates:
            cell = config.model_copy(
                update={
                    "strategy": name,
                    "noise": config.noise.model_copy(update={"rate": rate}),
                }
            )
            reports[(name, rate)] = run(cell, base / f"noise_{rate:g}")
    return reports
