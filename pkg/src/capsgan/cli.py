"""``capsgan`` command line: train, generate, gam, semisup.

Runs are described by a JSON config.  Every key must be known; missing keys
take defaults, and the fully resolved config is written next to the outputs.
Exit codes: 0 success, 1 invalid config or arguments, 2 runtime failure
(divergence, degenerate battle), 3 file I/O or format errors.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from PIL import Image

from .capsnet import MarginLossConfig
from .datasets import (DatasetFormatError, LabeledDataset, SyntheticSpec, load_cifar10_binary,
                       load_mnist_idx, make_synthetic, to_signed11)
from .evaluation import (PUBLISHED_GAM_RESULTS, PUBLISHED_SEMISUP_ERRORS, LabelSpreadConfig,
                         StratificationError, gam_battle, semi_sup_experiment)
from .gan import (CheckpointError, DiscriminatorConfig, GeneratorConfig, TrainingConfig,
                  TrainingDivergenceError, build_model, generate, load_checkpoint,
                  mnist_configs, save_checkpoint, synthetic_configs, train)

log = logging.getLogger("capsgan")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
IMAGE_SHAPES = {"mnist": (1, 28, 28), "cifar10": (3, 32, 32)}


class ConfigError(ValueError):
    pass


# Sections whose keys are checked against a dataclass rather than this tree.
_OPEN = object()

DEFAULTS = {
    "model": {"generator": _OPEN, "discriminator": _OPEN},
    "training": {
        "steps": 2000,
        "checkpoint_every": 500,
        "batch_size": 64,
        "seed": 0,
        "learning_rate": 2e-4,
        "beta1": 0.5,
        "beta2": 0.999,
        "eps": 1e-8,
        "margin": {"m_plus": 0.9, "m_minus": 0.1, "lam": 0.5},
    },
    "data": {
        "kind": "synthetic",
        "synthetic": {"image_shape": [1, 8, 8], "n_modes": 2, "noise_std": 0.05,
                      "samples_per_mode": 500, "test_samples_per_mode": 100,
                      "seed": 0, "test_seed": 1},
        "mnist": {"train_images": None, "train_labels": None,
                  "test_images": None, "test_labels": None},
        "cifar10": {"train": [], "test": []},
        "train_limit": None,
        "test_limit": None,
    },
    "evaluation": {
        "gam": {"n_samples": 1000, "tie_tolerance": 0.05, "threshold": 0.5},
        "semisup": {"n_labeled": [100, 1000, 10000], "n_unlabeled": 50000,
                    "label_spreading": {f.name: f.default for f in fields(LabelSpreadConfig)}},
    },
    "output": {"dir": "runs/default"},
}


def _merge(defaults: dict, user: dict, path: str) -> dict:
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(user).__name__}")
    unknown = sorted(set(user) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key {'.'.join(filter(None, [path, unknown[0]]))!r}")
    out = {}
    for key, default in defaults.items():
        where = f"{path}.{key}" if path else key
        if default is _OPEN:
            out[key] = dict(user.get(key, {}))
            if not isinstance(out[key], dict):
                raise ConfigError(f"{where}: expected an object")
        elif isinstance(default, dict):
            out[key] = _merge(default, user.get(key, {}), where)
        else:
            out[key] = copy.deepcopy(user.get(key, default))
    return out


def _check_fields(section: dict, cls, path: str) -> None:
    known = {f.name for f in fields(cls)}
    for key in sorted(section):
        if key not in known:
            raise ConfigError(f"unknown key '{path}.{key}'")


def resolve_config(user: dict) -> dict:
    """Fill defaults, reject unknown keys and materialise the network configs."""
    cfg = _merge(DEFAULTS, user, "")
    kind = cfg["data"]["kind"]
    if kind not in ("synthetic", "mnist", "cifar10"):
        raise ConfigError(f"data.kind: expected synthetic, mnist or cifar10, got {kind!r}")
    gen_user, disc_user = cfg["model"]["generator"], cfg["model"]["discriminator"]
    _check_fields(gen_user, GeneratorConfig, "model.generator")
    _check_fields(disc_user, DiscriminatorConfig, "model.discriminator")
    variant = disc_user.get("variant", "capsule")
    try:
        if kind == "synthetic":
            shape = tuple(cfg["data"]["synthetic"]["image_shape"])
            gen, disc = synthetic_configs(variant, shape)
        else:
            gen, disc = mnist_configs(variant)
            shape = IMAGE_SHAPES[kind]
            gen = GeneratorConfig(**{**gen.to_dict(), "output_shape": shape})
            disc = DiscriminatorConfig(**{**disc.to_dict(), "input_shape": shape})
        gen = GeneratorConfig(**{**gen.to_dict(), **gen_user})
        disc = DiscriminatorConfig(**{**disc.__dict__, **disc_user})
        tr = cfg["training"]
        MarginLossConfig(**tr["margin"])
        LabelSpreadConfig(**cfg["evaluation"]["semisup"]["label_spreading"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"model/training: {e}") from e
    if tuple(gen.output_shape) != tuple(shape) or tuple(disc.input_shape) != tuple(shape):
        raise ConfigError(f"model image shapes must match data shape {list(shape)}")
    cfg["model"] = {"generator": gen.to_dict(), "discriminator": disc.to_dict()}
    for key in ("steps", "checkpoint_every", "batch_size"):
        if not isinstance(tr[key], int) or tr[key] < 1:
            raise ConfigError(f"training.{key}: expected a positive integer, got {tr[key]!r}")
    n_list = cfg["evaluation"]["semisup"]["n_labeled"]
    if not isinstance(n_list, list) or not all(isinstance(n, int) for n in n_list):
        raise ConfigError("evaluation.semisup.n_labeled: expected a list of integers")
    return cfg


def load_config(path) -> dict:
    if path is None:
        return resolve_config({})
    with open(path, encoding="utf-8") as fh:
        try:
            user = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return resolve_config(user)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def training_config(cfg: dict) -> TrainingConfig:
    tr = cfg["training"]
    return TrainingConfig(learning_rate=tr["learning_rate"], beta1=tr["beta1"], beta2=tr["beta2"],
                          eps=tr["eps"], batch_size=tr["batch_size"], seed=tr["seed"],
                          margin=tr["margin"])


def load_data(cfg: dict, split: str) -> LabeledDataset:
    data = cfg["data"]
    kind = data["kind"]
    if kind == "synthetic":
        s = data["synthetic"]
        per_mode = s["samples_per_mode"] if split == "train" else s["test_samples_per_mode"]
        spec = SyntheticSpec(tuple(s["image_shape"]), s["n_modes"], s["noise_std"], per_mode)
        ds = make_synthetic(spec, s["seed"] if split == "train" else s["test_seed"])
    elif kind == "mnist":
        m = data["mnist"]
        images, labels = m[f"{split}_images"], m[f"{split}_labels"]
        if not images or not labels:
            raise ConfigError(f"data.mnist.{split}_images and {split}_labels are required")
        ds = load_mnist_idx(images, labels)
    else:
        paths = data["cifar10"][split]
        if not paths:
            raise ConfigError(f"data.cifar10.{split}: at least one batch file is required")
        ds = load_cifar10_binary(paths)
    limit = data[f"{split}_limit"]
    if limit is not None:
        ds = ds.subset(np.arange(min(int(limit), len(ds))))
    return ds


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -------------------------------------------------------------------

def cmd_train(args, cfg) -> int:
    out = _out_dir(args, cfg)
    write_json(out / "resolved_config.json", cfg)
    ds = load_data(cfg, "train")
    model = build_model(GeneratorConfig(**cfg["model"]["generator"]),
                        DiscriminatorConfig(**cfg["model"]["discriminator"]),
                        training_config(cfg))
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    every, steps = cfg["training"]["checkpoint_every"], cfg["training"]["steps"]
    rows, last = [], [None]

    def record(m, t, d_loss, g_loss):
        rows.append((t, d_loss, g_loss))
        if m.step % every == 0 and m.step < steps:
            path = ckpt_dir / f"step_{m.step:07d}.ckpt"
            save_checkpoint(m, path)
            last[0] = path

    def write_history():
        with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "d_loss", "g_loss"])
            w.writerows((t, repr(d), repr(g)) for t, d, g in rows)

    log.info("training %s GAN for %d steps on %d images", model.variant, steps, len(ds))
    try:
        train(model, ds, steps, callbacks=[record])
    except TrainingDivergenceError as e:
        write_history()
        raise TrainingDivergenceError(e.step, math.nan, math.nan, last[0]) from e
    write_history()
    save_checkpoint(model, ckpt_dir / "final.ckpt")
    log.info("wrote %s", ckpt_dir / "final.ckpt")
    return EXIT_OK


def grid_shape(n: int) -> tuple[int, int]:
    cols = math.ceil(math.sqrt(n))
    return math.ceil(n / cols), cols


def to_bytes(x: np.ndarray) -> np.ndarray:
    """Map signed images in [-1, 1] to uint8."""
    return np.clip(np.rint((x + 1.0) * 127.5), 0, 255).astype(np.uint8)


def image_grid(samples: np.ndarray) -> np.ndarray:
    """Tile [N, C, H, W] into a [rows*H, cols*W, C] uint8 array, row-major, no padding."""
    n, c, h, w = samples.shape
    rows, cols = grid_shape(n)
    grid = np.zeros((rows * h, cols * w, c), dtype=np.uint8)
    px = to_bytes(samples).transpose(0, 2, 3, 1)
    for k in range(n):
        r, q = divmod(k, cols)
        grid[r * h:(r + 1) * h, q * w:(q + 1) * w] = px[k]
    return grid


def png_bytes(grid: np.ndarray) -> bytes:
    img = Image.fromarray(grid[..., 0] if grid.shape[-1] == 1 else grid)
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False, compress_level=9)
    return buf.getvalue()


def cmd_generate(args, cfg) -> int:
    model = load_checkpoint(args.checkpoint)
    out = _out_dir(args, cfg)
    seed = cfg["training"]["seed"] if args.seed is None else args.seed
    samples = generate(model, args.n, seed)
    np.save(out / "samples.npy", samples)
    (out / "grid.png").write_bytes(png_bytes(image_grid(samples)))
    log.info("wrote %d samples to %s", args.n, out)
    return EXIT_OK


def cmd_gam(args, cfg) -> int:
    a, b = load_checkpoint(args.checkpoint_a), load_checkpoint(args.checkpoint_b)
    if tuple(a.generator.output_shape) != tuple(b.generator.output_shape):
        raise ConfigError(f"image shape mismatch: checkpoint_a {list(a.generator.output_shape)} "
                          f"vs checkpoint_b {list(b.generator.output_shape)}")
    test = load_data(cfg, "test")
    if tuple(test.image_shape) != tuple(a.generator.output_shape):
        raise ConfigError(f"image shape mismatch: test data {list(test.image_shape)} vs "
                          f"models {list(a.generator.output_shape)}")
    out = _out_dir(args, cfg)
    write_json(out / "resolved_config.json", cfg)
    g = cfg["evaluation"]["gam"]
    seed = cfg["training"]["seed"] if args.seed is None else args.seed
    x = to_signed11(test.images)
    kw = dict(n_samples=g["n_samples"], seed=seed, tie_tolerance=g["tie_tolerance"],
              threshold=g["threshold"])
    ab = gam_battle(a, b, x, **kw)
    ba = gam_battle(b, a, x, **kw)
    report = {
        "model_1": {"checkpoint": str(args.checkpoint_a), "variant": a.variant, "step": a.step},
        "model_2": {"checkpoint": str(args.checkpoint_b), "variant": b.variant, "step": b.step},
        "a_vs_b": ab.to_dict(),
        "b_vs_a": ba.to_dict(),
        "reference": PUBLISHED_GAM_RESULTS,
    }
    write_json(out / "gam_report.json", report)
    log.info("a vs b: r_samples=%.4f r_test=%.4f %s", ab.r_samples, ab.r_test, ab.verdict)
    return EXIT_OK


def semisup_table(cells: dict, n_list: list[int]) -> str:
    """Rows are model variants, columns are labeled-set sizes; cells hold error rates."""
    head = ["model"] + [f"n = {n:,}" for n in n_list]
    lines = [" | ".join(head)]
    for variant, by_n in cells.items():
        row = [variant]
        for n in n_list:
            v = by_n.get(n)
            row.append(f"{v:.4f}" if isinstance(v, float) else "error")
        lines.append(" | ".join(row))
    return "\n".join(lines) + "\n"


def cmd_semisup(args, cfg) -> int:
    s = cfg["evaluation"]["semisup"]
    n_list = args.n or s["n_labeled"]
    train_ds, test_ds = load_data(cfg, "train"), load_data(cfg, "test")
    ls = LabelSpreadConfig(**s["label_spreading"])
    seed = cfg["training"]["seed"] if args.seed is None else args.seed
    out = _out_dir(args, cfg)
    write_json(out / "resolved_config.json", cfg)
    cells, summary, failed = {}, [], False
    for path in args.checkpoint:
        model = load_checkpoint(path)
        row = cells.setdefault(model.variant, {})
        for n in n_list:
            name = f"report_{model.variant}_n{n}.json"
            try:
                rep = semi_sup_experiment(model, train_ds, test_ds, n, ls, seed, s["n_unlabeled"])
            except StratificationError as e:
                failed = True
                log.error("n=%d: %s", n, e)
                write_json(out / name, {"n_labeled": n, "model_variant": model.variant,
                                        "error": str(e)})
                summary.append({"checkpoint": str(path), "n_labeled": n, "error": str(e)})
                continue
            row[n] = rep.error_rate
            write_json(out / name, rep.to_dict())
            summary.append({"checkpoint": str(path), **rep.to_dict()})
    write_json(out / "summary.json", {"cells": summary, "reference": PUBLISHED_SEMISUP_ERRORS})
    (out / "summary.txt").write_text(semisup_table(cells, n_list), encoding="utf-8")
    sys.stdout.write(semisup_table(cells, n_list))
    return EXIT_CONFIG if failed else EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capsgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="overrides training.seed")
        sp.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        return sp

    common(sub.add_parser("train", help="train a GAN and write checkpoints and loss history"))
    g = common(sub.add_parser("generate", help="sample a checkpoint into a PNG grid"))
    g.add_argument("--checkpoint", type=Path, required=True)
    g.add_argument("--n", type=int, default=64)
    b = common(sub.add_parser("gam", help="battle two checkpoints"))
    b.add_argument("--checkpoint-a", type=Path, required=True)
    b.add_argument("--checkpoint-b", type=Path, required=True)
    s = common(sub.add_parser("semisup", help="label spreading with generated unlabeled images"))
    s.add_argument("--checkpoint", type=Path, action="append", required=True)
    s.add_argument("--n", type=int, action="append", help="labeled-set size (repeatable)")
    return p


COMMANDS = {"train": cmd_train, "generate": cmd_generate, "gam": cmd_gam, "semisup": cmd_semisup}


def _setup_logging() -> None:
    level = os.environ.get("CAPSGAN_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"CAPSGAN_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s",
                        force=True)
    logging.captureWarnings(True)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        _setup_logging()
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["training"]["seed"] = args.seed
        if getattr(args, "n", None) is not None and args.command == "generate" and args.n < 1:
            raise ConfigError("--n must be positive")
        return COMMANDS[args.command](args, cfg)
    except (CheckpointError, DatasetFormatError, OSError) as e:
        log.error("%s", e)
        return EXIT_IO
    except (TrainingDivergenceError, ZeroDivisionError, RuntimeError) as e:
        log.error("%s", e)
        return EXIT_RUNTIME
    except (ConfigError, ValueError) as e:
        log.error("%s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
