"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from .checkpoint import CheckpointError
from .data import DatasetError, DatasetSpec, ToySpec, make_toy_dataset, open_domain
from .evaluation import RandomConvFeatures, diversity_score, fid_protocol
from .inference import (
    interpolate_content,
    interpolate_content_cross_domain,
    interpolate_style,
    multimodal,
    save_grid,
    save_image,
    write_sequence,
)
from .model import Domain
from .training import TrainingData, TrainState, fit, load_model

log = logging.getLogger("dsmap")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser, checkpoint: bool = False):
    p.add_argument("--config", help="YAML file of flat dotted keys (model.*, train.*, ...)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset root (trainA/trainB/testA/testB)")
    if checkpoint:
        p.add_argument("--checkpoint", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsmap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="write the synthetic two-domain toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=64, help="images per domain")
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("translate", help="example-guided or multimodal translation")
    _common(p, checkpoint=True)
    p.add_argument("--src", default="A", type=str.upper, choices=["A", "B"])
    p.add_argument("--dst", default="B", type=str.upper, choices=["A", "B"])
    p.add_argument("--n", type=int, default=8, help="number of content images")
    p.add_argument("--n-styles", type=int, default=4)
    p.add_argument("--mode", choices=["example", "multimodal"], default="example")

    p = sub.add_parser("interpolate", help="latent interpolation sequences")
    _common(p, checkpoint=True)
    p.add_argument("--mode", choices=["style", "content", "cross"], default="style")
    p.add_argument("--domain", default="A", type=str.upper, choices=["A", "B"],
                   help="output (style) domain")
    p.add_argument("--steps", type=int, default=8)

    for name in ("eval-fid", "eval-diversity"):
        p = sub.add_parser(name, help="quality score" if name == "eval-fid" else "diversity score")
        _common(p, checkpoint=True)
        p.add_argument("--src", default="A", type=str.upper, choices=["A", "B"])
        p.add_argument("--dst", default="B", type=str.upper, choices=["A", "B"])
    return parser


# ---------------------------------------------------------------------------


def _effective_config(args, extra=None) -> dict:
    overrides = cfgmod.parse_overrides(args.set)
    if args.seed is not None:
        overrides.setdefault("model.seed", args.seed)
        overrides.setdefault("train.seed", args.seed)
    if getattr(args, "data", None):
        overrides["data.root"] = args.data
    overrides.update(extra or {})
    return cfgmod.resolve(args.config, overrides)


def _dataset(config: dict, image_size: int) -> DatasetSpec:
    root = config["data.root"]
    if not root:
        raise UsageError("no dataset given (--data or data.root)")
    if not Path(root).is_dir():
        raise UsageError(f"dataset root not found: {root}")
    return DatasetSpec(root=root, image_size=image_size, load_size=config["data.load_size"] or None,
                       random_crop=config["data.random_crop"],
                       horizontal_flip=config["data.horizontal_flip"])


def _split_images(spec: DatasetSpec, domain, split: str) -> torch.Tensor:
    try:
        folder = open_domain(spec, domain, split)
    except DatasetError:
        if split == "train":
            raise
        log.warning("no %s%s images; using train%s", split, Domain(domain).value, Domain(domain).value)
        folder = open_domain(spec, domain, "train")
    return folder.tensor()


def _load(path):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_model(path)


def cmd_make_toy(args) -> int:
    try:
        spec = ToySpec(n_per_domain=args.n, image_size=args.image_size, seed=args.seed,
                       test_fraction=args.test_fraction)
        make_toy_dataset(spec, args.out)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return 0


def cmd_train(args) -> int:
    extra = {"train.steps": args.steps} if args.steps is not None else {}
    config = _effective_config(args, extra)
    model_cfg, train_cfg, _, _ = cfgmod.build(config)
    if args.resume:
        if not Path(args.resume).is_file():
            raise UsageError(f"checkpoint not found: {args.resume}")
        state = TrainState.load(args.resume, train_cfg)
        model_cfg = state.model.cfg
        config.update({f"model.{k}": v for k, v in model_cfg.to_dict().items()})
        log.info("resuming from step %d", state.step)
    else:
        state = TrainState.create(model_cfg, train_cfg)
    spec = _dataset(config, model_cfg.image_size)
    try:
        spec.validate(("train",))
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    data = TrainingData(open_domain(spec, "A"), open_domain(spec, "B"), spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(config, out / "config.yaml")
    fit(data, state, out, progress_every=max(1, train_cfg.steps // 20))
    return 0


def cmd_translate(args) -> int:
    config = _effective_config(args)
    seed = args.seed or 0
    model = _load(args.checkpoint)
    spec = _dataset(config, model.cfg.image_size)
    split = config["eval.split"]
    content = _split_images(spec, args.src, split)[:args.n]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(config, out / "config.yaml")
    if args.mode == "multimodal":
        outputs = multimodal(content, args.src, args.dst, args.n_styles, seed, model)
    else:
        styles = _split_images(spec, args.dst, split)
        rng = np.random.default_rng(seed)
        outputs = []
        with torch.no_grad():
            for _ in range(args.n_styles):
                idx = rng.integers(0, styles.shape[0], size=content.shape[0])
                outputs.append(model.translate(content, styles[idx], args.src, args.dst))
    mode = f"{args.mode}_{args.src}2{args.dst}"
    for k, y in enumerate(outputs):
        for i in range(y.shape[0]):
            save_image(y[i], out / f"{mode}_c{i:03d}_s{k:02d}_seed{seed}.png")
    save_grid([[content[i]] + [y[i] for y in outputs] for i in range(content.shape[0])],
              out / f"{mode}_grid_seed{seed}.png")
    return 0


def cmd_interpolate(args) -> int:
    if args.steps < 2:
        raise UsageError("--steps must be >= 2")
    config = _effective_config(args)
    seed = args.seed or 0
    model = _load(args.checkpoint)
    spec = _dataset(config, model.cfg.image_size)
    split = config["eval.split"]
    dst = Domain(args.domain)
    rng = np.random.default_rng(seed)
    imgs = {d: _split_images(spec, d, split) for d in Domain}

    def pick(d, k=1):
        return imgs[d][rng.integers(0, imgs[d].shape[0], size=k)]

    if args.mode == "style":
        s1, s2 = model.sample_style(1, seed), model.sample_style(1, seed + 1)
        frames = interpolate_style(pick(dst.other), s1, s2, args.steps, dst, model)
    elif args.mode == "content":
        frames = interpolate_content(pick(dst), pick(dst), pick(dst), dst, args.steps, model)
    else:
        frames = interpolate_content_cross_domain(pick(Domain.A), pick(Domain.B), pick(dst), dst,
                                                  args.steps, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(config, out / "config.yaml")
    write_sequence(frames, out, f"{args.mode}_{dst.value}", seed)
    return 0


def _write_report(out: Path, name: str, report: dict):
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    lines = [f"{k}: {report[k]}" for k in sorted(report)]
    (out / f"{name}.txt").write_text("\n".join(lines) + "\n")


def cmd_eval_fid(args) -> int:
    config = _effective_config(args)
    seed = args.seed or 0
    model = _load(args.checkpoint)
    spec = _dataset(config, model.cfg.image_size)
    split = config["eval.split"]
    content = _split_images(spec, args.src, split)
    targets = _split_images(spec, args.dst, split)
    extractor = RandomConvFeatures(dim=config["eval.feature_dim"], seed=config["eval.feature_seed"])
    report = fid_protocol(model, content, targets, targets, args.src, args.dst,
                          n_content=config["eval.n_content"], n_styles=config["eval.n_styles"],
                          repeats=config["eval.repeats"], seed=seed, extractor=extractor)
    report["checkpoint"] = str(args.checkpoint)
    report["config"] = {k: v for k, v in config.items() if k.startswith(("eval.", "data."))}
    out = Path(args.out)
    _write_report(out, f"fid_{args.src}2{args.dst}", report)
    cfgmod.dump(config, out / "config.yaml")
    print(f"FID {args.src}->{args.dst}: {report['mean']:.4f} +- {report['std']:.4f}")
    return 0


def cmd_eval_diversity(args) -> int:
    config = _effective_config(args)
    seed = args.seed or 0
    model = _load(args.checkpoint)
    spec = _dataset(config, model.cfg.image_size)
    content = _split_images(spec, args.src, config["eval.split"])[:config["eval.n_content"]]
    extractor = RandomConvFeatures(dim=config["eval.feature_dim"], seed=config["eval.feature_seed"])
    score = diversity_score(model, content, args.src, args.dst, n_pairs=config["eval.n_pairs"],
                            extractor=extractor, seed=seed)
    report = {"metric": "diversity", "direction": f"{args.src}->{args.dst}", "score": score,
              "n_content": int(content.shape[0]), "n_pairs": config["eval.n_pairs"], "seed": seed,
              "extractor": extractor.identifier, "checkpoint": str(args.checkpoint)}
    out = Path(args.out)
    _write_report(out, f"diversity_{args.src}2{args.dst}", report)
    cfgmod.dump(config, out / "config.yaml")
    print(f"diversity {args.src}->{args.dst}: {score:.6f}")
    return 0


COMMANDS = {
    "make-toy": cmd_make_toy,
    "train": cmd_train,
    "translate": cmd_translate,
    "interpolate": cmd_interpolate,
    "eval-fid": cmd_eval_fid,
    "eval-diversity": cmd_eval_diversity,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, cfgmod.ConfigError, CheckpointError, DatasetError) as exc:
        print(f"dsmap {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.exception("dsmap %s failed", args.command)
        print(f"dsmap {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
