"""Experiment orchestration: pretrain -> fine-tune -> evaluate, plus ablations.

All randomness flows through seeded streams keyed by (seed, stream, epoch,
...), so a run is fully determined by its config, checkpoints are
byte-identical across repeats, and resuming after an interrupt reproduces
the uninterrupted run exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Adam
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .classifier import ClassifierHead, classify, finetune_loss
from .config import ExperimentConfig
from .data import (
    DatasetSplit,
    NormalizationStats,
    TactileTensor,
    generate_synthetic,
    load_dataset,
    normalize_split,
)
from .metrics import EvalReport, evaluate_predictions
from .model import TactileActionModel
from .pretrain import pretrain_step
from .seeding import STREAM_DROPOUT, STREAM_SAMPLE, STREAM_SHUFFLE, rng_for
from .tokenizer import TubeletGrid, tokenize_values

ABLATION_STRATEGIES: dict[int, dict] = {
    1: {"use_temporal": True, "use_spatial": False, "temporal_task": False},
    2: {"use_temporal": False, "use_spatial": True, "temporal_task": False},
    3: {"use_temporal": True, "use_spatial": True, "temporal_task": False},
    4: {"use_temporal": False, "use_spatial": False, "temporal_task": True},
    5: {"use_temporal": True, "use_spatial": True, "temporal_task": True},
}


class TrainError(ValueError):
    pass


@dataclass
class PreparedData:
    """Dataset after normalization, plus the token-matrix caches."""

    dataset: DatasetSplit
    stats: NormalizationStats | None
    grid: TubeletGrid
    config: ExperimentConfig
    fingerprint: str
    _tokens: dict[str, np.ndarray] = field(default_factory=dict)

    def tokens(self, split: str) -> np.ndarray:
        if split not in self._tokens:
            samples = self.dataset.split(split)
            mats = [tokenize_values(s.tensor.values, self.config.tubelet)[1] for s in samples]
            self._tokens[split] = np.stack(mats) if mats else np.zeros((0, self.grid.n_tube, self.grid.token_dim))
        return self._tokens[split]

    def labels(self, split: str) -> np.ndarray:
        return np.array([s.label for s in self.dataset.split(split)], dtype=np.intp)

    @property
    def n_classes(self) -> int:
        return self.dataset.num_classes


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Load or synthesize the dataset, fit training statistics, normalize."""
    if config.data.source == "synthetic":
        raw = generate_synthetic(config.data.synthetic)
    else:
        raw = load_dataset(
            config.data.root,
            config.data.manifest,
            balance_train_to=config.data.balance_train_to,
            balance_seed=config.seed,
        )
    if not raw.train:
        raise TrainError("training split is empty")
    fingerprint = raw.fingerprint()
    shape = raw.train[0].tensor.shape
    grid = TubeletGrid.for_shape(shape, config.tubelet)
    stats = None
    dataset = raw
    if config.data.normalize:
        stats = NormalizationStats.from_samples(s.tensor for s in raw.train)
        dataset = normalize_split(raw, stats)
    return PreparedData(dataset=dataset, stats=stats, grid=grid, config=config, fingerprint=fingerprint)


def build_model(config: ExperimentConfig, grid: TubeletGrid, n_classes: int) -> TactileActionModel:
    return TactileActionModel(
        grid,
        config.encoder,
        n_classes,
        use_spatial=config.use_spatial,
        use_temporal=config.use_temporal,
        seed=config.seed,
    )


def predict_proba(model: TactileActionModel, data: PreparedData, tensors: Sequence[TactileTensor], batch_size: int = 64) -> np.ndarray:
    """Class probabilities for already-normalized tactile tensors."""
    head = ClassifierHead(model.params["head.classifier.weight"], model.params["head.classifier.bias"])
    out = []
    for start in range(0, len(tensors), batch_size):
        chunk = tensors[start : start + batch_size]
        mats = np.stack([tokenize_values(t.values, data.config.tubelet)[1] for t in chunk])
        encoded = model.forward(mats)
        out.append(classify(encoded, head).data)
    return np.concatenate(out, axis=0)


def evaluate_split(model: TactileActionModel, data: PreparedData, split: str, batch_size: int = 64) -> EvalReport:
    samples = data.dataset.split(split)
    if not samples:
        raise TrainError(f"empty split: {split}")
    probs = predict_proba(model, data, [s.tensor for s in samples], batch_size)
    return evaluate_predictions(
        data.labels(split), probs, n_classes=data.n_classes, class_names=list(data.dataset.class_names)
    )


# ---------------------------------------------------------------------------
# checkpoints

def _make_checkpoint(
    model: TactileActionModel,
    optimizer: Adam,
    config: ExperimentConfig,
    stage: str,
    epoch: int,
    extra: dict | None = None,
) -> Checkpoint:
    return Checkpoint(
        stage=stage,
        epoch=epoch,
        config=config.to_dict(),
        params=model.params.to_arrays(),
        optimizer_t=optimizer.t,
        optimizer_slots=optimizer.state_arrays(),
        rng={"seed": config.seed, "scheme": "per-epoch-derived-streams"},
        extra=extra or {},
    )


def _check_architecture(ckpt: Checkpoint, model: TactileActionModel) -> None:
    model_shapes = {name: tuple(t.data.shape) for name, t in model.params.items()}
    ckpt_shapes = {name: tuple(np.asarray(a).shape) for name, a in ckpt.params.items()}
    if model_shapes != ckpt_shapes:
        for name in sorted(set(model_shapes) | set(ckpt_shapes)):
            if model_shapes.get(name) != ckpt_shapes.get(name):
                raise TrainError(
                    f"architecture mismatch at {name!r}: checkpoint has"
                    f" {ckpt_shapes.get(name)}, model expects {model_shapes.get(name)}"
                )


def _restore(model: TactileActionModel, optimizer: Adam, ckpt: Checkpoint) -> None:
    _check_architecture(ckpt, model)
    model.params.load_arrays(ckpt.params)
    optimizer.load_state(ckpt.optimizer_t, ckpt.optimizer_slots)


def _as_checkpoint(value) -> Checkpoint:
    if isinstance(value, Checkpoint):
        return value
    return load_checkpoint(value)


# ---------------------------------------------------------------------------
# pretraining

def run_pretrain(
    config: ExperimentConfig,
    out_dir: Path | str,
    *,
    resume: Checkpoint | Path | str | None = None,
    data: PreparedData | None = None,
) -> Path:
    """Self-supervised pretraining on the training split only.

    Writes a per-step loss log (step, L_MTR, L_temp, total), one checkpoint
    per epoch, and returns the final checkpoint path.
    """
    if not config.pretrain.enabled:
        raise TrainError("pretraining not enabled in config")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if data is None:
        data = prepare_data(config)
    model = build_model(config, data.grid, data.n_classes)
    pc = config.pretrain
    optimizer = Adam(model.params, lr=pc.lr, weight_decay=pc.weight_decay)

    start_epoch = 0
    if resume is not None:
        ckpt = _as_checkpoint(resume)
        if ckpt.stage != "pretrain":
            raise TrainError(f"cannot resume pretraining from a {ckpt.stage!r} checkpoint")
        _restore(model, optimizer, ckpt)
        start_epoch = ckpt.epoch
    if start_epoch >= pc.epochs:
        raise TrainError(f"nothing to resume: checkpoint already at epoch {start_epoch}")

    tokens = data.tokens("train")
    n = tokens.shape[0]
    log_path = out / "pretrain_log.csv"
    mode = "a" if resume is not None and log_path.exists() else "w"
    steps_per_epoch = (n + pc.batch_size - 1) // pc.batch_size
    with open(log_path, mode, encoding="utf-8", newline="\n") as log:
        if mode == "w":
            log.write("step,mtr,temporal,total\n")
        for epoch in range(start_epoch, pc.epochs):
            order = rng_for(config.seed, STREAM_SHUFFLE, epoch).permutation(n)
            for step in range(steps_per_epoch):
                batch_ids = order[step * pc.batch_size : (step + 1) * pc.batch_size]
                rngs = [rng_for(config.seed, STREAM_SAMPLE, epoch, int(i)) for i in batch_ids]
                result = pretrain_step(
                    model,
                    tokens[batch_ids],
                    beta=pc.beta,
                    mask_ratio=pc.mask_ratio,
                    n_comp=pc.n_comp,
                    sample_rngs=rngs,
                    temporal_task=pc.temporal_task,
                    dropout_rng=None,
                )
                optimizer.step()
                global_step = epoch * steps_per_epoch + step
                log.write(
                    f"{global_step},{result.mtr:.10g},{result.temporal:.10g},{result.total:.10g}\n"
                )
            save_checkpoint(
                out / f"pretrain_epoch{epoch:03d}.ckpt",
                _make_checkpoint(model, optimizer, config, "pretrain", epoch + 1),
            )
    final = out / "pretrain_final.ckpt"
    save_checkpoint(final, _make_checkpoint(model, optimizer, config, "pretrain", pc.epochs))
    return final


# ---------------------------------------------------------------------------
# fine-tuning

def run_finetune(
    config: ExperimentConfig,
    out_dir: Path | str,
    *,
    init: Checkpoint | Path | str | None = None,
    resume: Checkpoint | Path | str | None = None,
    data: PreparedData | None = None,
) -> Path:
    """Supervised fine-tuning of all parameters from the [CLS] head.

    `init` warm-starts from a pretraining checkpoint; omitting it trains from
    scratch. Logs per-epoch validation metrics and returns the checkpoint of
    the best validation acc@1 epoch (ties broken toward the earlier epoch).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if data is None:
        data = prepare_data(config)
    model = build_model(config, data.grid, data.n_classes)
    fc = config.finetune
    optimizer = Adam(model.params, lr=fc.lr, weight_decay=fc.weight_decay)
    head = ClassifierHead(model.params["head.classifier.weight"], model.params["head.classifier.bias"])

    start_epoch = 0
    best_epoch = -1
    best_acc1 = -1.0
    if init is not None and resume is not None:
        raise TrainError("pass either init or resume, not both")
    if init is not None:
        ckpt = _as_checkpoint(init)
        if ckpt.stage != "pretrain":
            raise TrainError(f"init checkpoint must come from pretraining, got {ckpt.stage!r}")
        _check_architecture(ckpt, model)
        model.params.load_arrays(ckpt.params)  # fresh optimizer for the new objective
    if resume is not None:
        ckpt = _as_checkpoint(resume)
        if ckpt.stage != "finetune":
            raise TrainError(f"cannot resume fine-tuning from a {ckpt.stage!r} checkpoint")
        _restore(model, optimizer, ckpt)
        start_epoch = ckpt.epoch
        best_epoch = int(ckpt.extra.get("best_epoch", -1))
        best_acc1 = float(ckpt.extra.get("best_val_acc1", -1.0))
    if start_epoch >= fc.epochs:
        raise TrainError(f"nothing to resume: checkpoint already at epoch {start_epoch}")

    tokens = data.tokens("train")
    labels = data.labels("train")
    n = tokens.shape[0]
    has_val = len(data.dataset.validation) > 0
    log_path = out / "finetune_log.csv"
    mode = "a" if resume is not None and log_path.exists() else "w"
    dropout_on = config.encoder.dropout > 0
    with open(log_path, mode, encoding="utf-8", newline="\n") as log:
        if mode == "w":
            log.write("epoch,train_loss,val_acc1,val_acc3,val_macro_f1,train_acc1\n")
        for epoch in range(start_epoch, fc.epochs):
            order = rng_for(config.seed, STREAM_SHUFFLE, epoch).permutation(n)
            epoch_loss = 0.0
            steps = 0
            for step, start in enumerate(range(0, n, fc.batch_size)):
                ids = order[start : start + fc.batch_size]
                drng = rng_for(config.seed, STREAM_DROPOUT, epoch, step) if dropout_on else None
                encoded = model.forward(tokens[ids], dropout_rng=drng)
                probs = classify(encoded, head)
                loss = finetune_loss(probs, labels[ids])
                model.params.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_loss += loss.item()
                steps += 1
            if has_val:
                val_report = evaluate_split(model, data, "validation")
                val_acc1, val_acc3, val_f1 = val_report.acc1, val_report.acc3, val_report.macro_f1
            else:
                val_acc1 = val_acc3 = val_f1 = float("nan")
            train_acc1 = (
                evaluate_split(model, data, "train").acc1 if fc.track_train_accuracy else float("nan")
            )
            score = val_acc1 if has_val else -float("inf")
            if has_val and score > best_acc1:
                best_acc1 = score
                best_epoch = epoch
            log.write(
                f"{epoch},{epoch_loss / max(steps, 1):.10g},{val_acc1:.10g},{val_acc3:.10g},"
                f"{val_f1:.10g},{train_acc1:.10g}\n"
            )
            save_checkpoint(
                out / f"finetune_epoch{epoch:03d}.ckpt",
                _make_checkpoint(
                    model,
                    optimizer,
                    config,
                    "finetune",
                    epoch + 1,
                    extra={"best_epoch": best_epoch, "best_val_acc1": best_acc1},
                ),
            )
    if best_epoch < 0:
        best_epoch = fc.epochs - 1  # no validation split: fall back to the last epoch
    best_src = load_checkpoint(out / f"finetune_epoch{best_epoch:03d}.ckpt")
    best_path = out / "finetune_best.ckpt"
    best_src.config = config.to_dict()  # resumed runs re-echo the active config
    best_src.extra = {"best_epoch": best_epoch, "best_val_acc1": best_acc1, "selected": True}
    save_checkpoint(best_path, best_src)
    return best_path


# ---------------------------------------------------------------------------
# evaluation

def run_eval(
    checkpoint: Checkpoint | Path | str,
    split: str = "test",
    out_dir: Path | str | None = None,
    *,
    data: PreparedData | None = None,
) -> EvalReport:
    """Evaluate a checkpoint on one split; writes report JSON and confusion CSV."""
    ckpt = _as_checkpoint(checkpoint)
    config = ExperimentConfig.from_dict(ckpt.config)
    if data is None:
        data = prepare_data(config)
    model = build_model(config, data.grid, data.n_classes)
    _check_architecture(ckpt, model)
    model.params.load_arrays(ckpt.params)
    report = evaluate_split(model, data, split)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{split}_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (out / f"eval_{split}_confusion.csv").write_text(report.confusion_csv(), encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# ablation suite

@dataclass
class StrategyResult:
    strategy: int
    use_temporal: bool
    use_spatial: bool
    temporal_task: bool
    report: EvalReport
    fingerprint: str


def apply_strategy(config: ExperimentConfig, strategy: int) -> ExperimentConfig:
    if strategy not in ABLATION_STRATEGIES:
        raise TrainError(f"unknown ablation strategy {strategy}")
    flags = ABLATION_STRATEGIES[strategy]
    return replace(
        config,
        use_temporal=flags["use_temporal"],
        use_spatial=flags["use_spatial"],
        pretrain=replace(config.pretrain, enabled=True, temporal_task=flags["temporal_task"]),
    )


def run_ablation_suite(config: ExperimentConfig, out_dir: Path | str) -> list[StrategyResult]:
    """Run the five embedding/pretraining strategies on identical seed and data.

    Emits `ablation_table.csv` (acc@1/acc@3/macro-F1 per strategy) and
    `ablation_results.json` with per-class detail and the dataset fingerprint.
    """
    if config.data.source != "synthetic":
        raise TrainError("the ablation suite runs on a synthetic data source")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results: list[StrategyResult] = []
    for strategy in sorted(ABLATION_STRATEGIES):
        cfg = apply_strategy(config, strategy)
        sub = out / f"strategy{strategy}"
        data = prepare_data(cfg)
        pre = run_pretrain(cfg, sub, data=data)
        best = run_finetune(cfg, sub, init=pre, data=data)
        report = run_eval(best, "test", sub, data=data)
        flags = ABLATION_STRATEGIES[strategy]
        results.append(
            StrategyResult(
                strategy=strategy,
                use_temporal=flags["use_temporal"],
                use_spatial=flags["use_spatial"],
                temporal_task=flags["temporal_task"],
                report=report,
                fingerprint=data.fingerprint,
            )
        )
    lines = ["strategy,temporal_embeddings,spatial_embeddings,temporal_pretraining,acc1,acc3,macro_f1"]
    for r in results:
        lines.append(
            f"{r.strategy},{int(r.use_temporal)},{int(r.use_spatial)},{int(r.temporal_task)},"
            f"{r.report.acc1:.6f},{r.report.acc3:.6f},{r.report.macro_f1:.6f}"
        )
    (out / "ablation_table.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    payload = []
    for r in results:
        payload.append(
            {
                "strategy": r.strategy,
                "use_temporal": r.use_temporal,
                "use_spatial": r.use_spatial,
                "temporal_task": r.temporal_task,
                "fingerprint": r.fingerprint,
                "acc1": r.report.acc1,
                "acc3": r.report.acc3,
                "macro_f1": r.report.macro_f1,
                "classes": r.report.class_names,
                "per_class_recall": r.report.recall.tolist(),
                "supports": r.report.supports.tolist(),
                "confusion": r.report.confusion.tolist(),
            }
        )
    (out / "ablation_results.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return results


def restrict_train(data: PreparedData, per_class: int) -> PreparedData:
    """A view of the dataset with the training split cut to `per_class` samples.

    Used for low-label experiments: pretraining sees the full training split,
    fine-tuning only the restricted one. Normalization statistics (already
    applied) still come from the full split.
    """
    kept: list = []
    counts: dict[int, int] = {}
    for sample in data.dataset.train:
        if counts.get(sample.label, 0) < per_class:
            kept.append(sample)
            counts[sample.label] = counts.get(sample.label, 0) + 1
    reduced = DatasetSplit(
        kept, data.dataset.validation, data.dataset.test, list(data.dataset.class_names)
    )
    return PreparedData(
        dataset=reduced,
        stats=data.stats,
        grid=data.grid,
        config=data.config,
        fingerprint=data.fingerprint,
    )


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average used to judge loss-curve trends."""
    arr = np.asarray(values, dtype=float)
    if window < 1 or arr.size < window:
        raise TrainError(f"need at least {window} values, got {arr.size}")
    kernel = np.ones(window) / window
    return np.convolve(arr, kernel, mode="valid")
