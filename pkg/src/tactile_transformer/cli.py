"""Command-line harness.

Verbs: pretrain, finetune, eval, ablate, gradcheck, synth. Each takes
--config <path> (YAML), --out <dir>, an optional --seed override and, where
it makes sense, --resume <checkpoint>. For `finetune`, a pretraining
checkpoint passed via --resume warm-starts the model; a fine-tuning
checkpoint resumes the interrupted run. For `eval`, --resume names the
checkpoint to evaluate.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .classifier import ClassifierHead, classify, finetune_loss
from .config import ExperimentConfig, default_config, load_config
from .data import generate_synthetic, save_dataset
from .gradcheck import gradient_check
from .pretrain import (
    bce_loss,
    masked_input_values,
    mtr_loss_tensor,
    order_probabilities,
    plan_spatial_mask,
    sample_pairs,
)
from .seeding import rng_for
from .train import build_model, prepare_data, run_ablation_suite, run_eval, run_finetune, run_pretrain


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _out_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    if config.out_dir:
        return Path(config.out_dir)
    raise SystemExit("no output directory: pass --out or set out_dir in the config")


def _cmd_pretrain(args: argparse.Namespace) -> int:
    config = _load(args)
    out = _out_dir(args, config)
    final = run_pretrain(config, out, resume=args.resume)
    print(f"pretraining finished: {final}")
    return 0


def _cmd_finetune(args: argparse.Namespace) -> int:
    config = _load(args)
    out = _out_dir(args, config)
    init = None
    resume = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if ckpt.stage == "pretrain":
            init = ckpt
        else:
            resume = ckpt
    best = run_finetune(config, out, init=init, resume=resume)
    print(f"fine-tuning finished, best checkpoint: {best}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    if not args.resume:
        raise SystemExit("eval needs --resume <checkpoint>")
    ckpt = load_checkpoint(args.resume)
    config = ExperimentConfig.from_dict(ckpt.config)
    out = args.out or config.out_dir or Path(args.resume).parent
    report = run_eval(ckpt, args.split, out)
    print(f"{args.split}: acc@1={report.acc1:.4f} acc@3={report.acc3:.4f} macro_f1={report.macro_f1:.4f}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    config = _load(args)
    out = _out_dir(args, config)
    results = run_ablation_suite(config, out)
    for r in results:
        print(
            f"strategy {r.strategy}: acc@1={r.report.acc1:.4f}"
            f" acc@3={r.report.acc3:.4f} macro_f1={r.report.macro_f1:.4f}"
        )
    print(f"table written to {out / 'ablation_table.csv'}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    config = _load(args)
    if config.data.source != "synthetic" or config.data.synthetic is None:
        raise SystemExit("synth needs a config with a synthetic data source")
    out = _out_dir(args, config)
    split = generate_synthetic(config.data.synthetic)
    manifest = save_dataset(split, out)
    sizes = {name: len(samples) for name, samples in split.items()}
    print(f"wrote {sizes} samples to {out} (manifest: {manifest})")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    config = _load(args)
    data = prepare_data(config)
    model = build_model(config, data.grid, data.n_classes)
    tokens = data.tokens("train")[:2]
    labels = data.labels("train")[:2]
    rng = rng_for(config.seed, 99)
    plan = plan_spatial_mask(model.grid, config.pretrain.mask_ratio, rng)
    pairs = sample_pairs(model.grid, plan, config.pretrain.n_comp, rng)
    mask = plan.mask_vector(model.grid).astype(np.float64)[None, :, None]

    def pretrain_closure():
        masked = masked_input_values(tokens, np.repeat(mask, tokens.shape[0], axis=0), model.mask_token)
        encoded = model.forward(masked)
        loss = mtr_loss_tensor(tokens, model.reconstruction(encoded), np.repeat(mask, tokens.shape[0], axis=0))
        probs = order_probabilities(
            encoded.tokens,
            np.stack([pairs.first] * tokens.shape[0]),
            np.stack([pairs.second] * tokens.shape[0]),
            model.params["head.order.weight"],
        )
        labels_arr = np.stack([pairs.labels] * tokens.shape[0])[..., None]
        return loss + config.pretrain.beta * bce_loss(probs, labels_arr)

    head = ClassifierHead(model.params["head.classifier.weight"], model.params["head.classifier.bias"])

    def finetune_closure():
        probs = classify(model.forward(tokens), head)
        return finetune_loss(probs, labels)

    params = dict(model.params.items())
    limit = None if args.max_elements == 0 else args.max_elements
    ok = True
    for name, closure in (("pretrain loss", pretrain_closure), ("finetune loss", finetune_closure)):
        report = gradient_check(
            closure, params, rel_tol=args.tolerance, max_elements_per_param=limit, sample_seed=config.seed
        )
        print(f"== {name}")
        print(report.summary())
        ok = ok and report.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tactile-transformer",
        description="Pretrain, fine-tune and evaluate the tactile action classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="YAML experiment config")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume/init/eval")

    p = sub.add_parser("pretrain", help="run self-supervised pretraining")
    common(p)
    p.set_defaults(fn=_cmd_pretrain)

    p = sub.add_parser("finetune", help="train the action classifier")
    common(p)
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run the five-strategy ablation suite")
    common(p)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    common(p)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument(
        "--max-elements", type=int, default=20,
        help="coordinates checked per parameter (0 = every element)",
    )
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("synth", help="emit a synthetic dataset to disk")
    common(p)
    p.set_defaults(fn=_cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
