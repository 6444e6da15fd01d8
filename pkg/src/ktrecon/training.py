"""Experiment orchestration: config parsing, the training loop, checkpoints,
and evaluation over dataset manifests.

Runs are reproducible: every random stream (weight init, loss sampling, mask
draws, noise, shuffling, evaluation) is derived from the config seed with a
distinct tag, and single-threaded runs of the same config produce
byte-identical checkpoints. Checkpoints are a single file: one JSON header
line followed by the raw little-endian float32 parameter blob in
registration order; writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .backbone import (
    BackboneConfig,
    blob_to_params,
    init_params,
    param_manifest,
    params_to_blob,
    reconstruct,
)
from .data import DatasetManifest, load_manifest, load_masks
from .errors import ConfigError, CorruptHeaderError, DataError, NumericError
from .forward_model import MaskSpec, add_noise, forward, sample_masks, zero_filled
from .losses import LossConfig, LossKind, compute_loss, tssdu_star_reconstruct
from .metrics import MetricsReport
from .video import ImageSequence

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# RNG stream tags; each stream is seeded from (seed, tag, ...)
_TAG_MODEL = 0
_TAG_LOSS = 1
_TAG_MASK = 2
_TAG_NOISE = 3
_TAG_SHUFFLE = 4
_TAG_EVAL_MASK = 5
_TAG_EVAL_NOISE = 6
_TAG_EVAL_SPLIT = 7


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence(keys).generate_state(1, np.uint64)[0])


def derive_numpy_rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(keys))


def derive_torch_rng(*keys: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(*keys))
    return gen


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind != "adam":
            raise ConfigError(f"unsupported optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        known = {"kind", "lr", "beta1", "beta2", "eps"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown optimizer config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    mask_spec: MaskSpec = field(default_factory=MaskSpec)
    noise_sigma: float = 0.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 1
    batch_size: int = 1
    seed: int = 0
    dataset_manifest: str = ""
    checkpoint_dir: str = ""
    eval_every: int = 10
    fixed_masks: bool = False   # reuse the epoch-0 mask draw (ablation mode)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.loss.kind in (LossKind.SURE, LossKind.DDEI_SURE):
            if self.noise_sigma <= 0:
                raise ConfigError("sure losses require noise_sigma > 0")
            if self.loss.sure_sigma <= 0:
                raise ConfigError("sure losses require sure_sigma > 0")

    def to_dict(self) -> dict:
        return {
            "loss": self.loss.to_dict(),
            "backbone": self.backbone.to_dict(),
            "mask_spec": self.mask_spec.to_dict(),
            "noise_sigma": self.noise_sigma,
            "optimizer": self.optimizer.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "dataset_manifest": self.dataset_manifest,
            "checkpoint_dir": self.checkpoint_dir,
            "eval_every": self.eval_every,
            "fixed_masks": self.fixed_masks,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {
            "loss", "backbone", "mask_spec", "noise_sigma", "optimizer",
            "epochs", "batch_size", "seed", "dataset_manifest",
            "checkpoint_dir", "eval_every", "fixed_masks",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        for key, sub in (("loss", LossConfig), ("backbone", BackboneConfig),
                         ("mask_spec", MaskSpec), ("optimizer", OptimizerConfig)):
            if key in d:
                d[key] = sub.from_dict(d[key])
        return cls(**d)

    @classmethod
    def from_json_file(cls, path: str | os.PathLike) -> "TrainConfig":
        path = Path(path)
        if not path.exists():
            raise DataError(f"no such config file: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"unparseable config {path}: {e}") from e
        return cls.from_dict(payload)


@dataclass
class Checkpoint:
    """Serialized training state: header metadata plus the parameter blob."""

    header: dict
    blob: bytes

    @property
    def step(self) -> int:
        return self.header["step"]

    def config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.header["config"])

    def build_model(self) -> torch.nn.Module:
        model = init_params(
            BackboneConfig.from_dict(self.header["config"]["backbone"]),
            torch.Generator().manual_seed(0),
        )
        blob_to_params(model, self.blob)
        return model

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header_line = json.dumps(self.header, separators=(",", ":"), sort_keys=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as f:
            f.write(header_line.encode("utf-8"))
            f.write(b"\n")
            f.write(self.blob)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise DataError(f"no such checkpoint: {path}")
        raw = path.read_bytes()
        newline = raw.find(b"\n")
        if newline < 0:
            raise CorruptHeaderError(f"{path}: missing header line")
        try:
            header = json.loads(raw[:newline].decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise CorruptHeaderError(f"{path}: unreadable header: {e}") from e
        if header.get("version") != CHECKPOINT_VERSION:
            raise CorruptHeaderError(
                f"{path}: checkpoint version {header.get('version')}, "
                f"expected {CHECKPOINT_VERSION}"
            )
        blob = raw[newline + 1:]
        expected = 4 * sum(
            int(np.prod(p["shape"])) if p["shape"] else 1 for p in header["params"]
        )
        if len(blob) != expected:
            raise CorruptHeaderError(
                f"{path}: parameter blob holds {len(blob)} bytes, expected {expected}"
            )
        return cls(header=header, blob=blob)


def _make_checkpoint(model, config: TrainConfig, step: int, rng_state: bytes,
                     best: dict) -> Checkpoint:
    header = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "loss_kind": config.loss.kind.value,
        "seed": config.seed,
        "step": step,
        "rng_state": rng_state.hex(),
        "best": best,
        "params": param_manifest(model),
    }
    return Checkpoint(header=header, blob=params_to_blob(model))


def _simulate_measurements(x: ImageSequence, config: TrainConfig, epoch: int, idx: int):
    mask_epoch = 0 if config.fixed_masks else epoch
    masks = sample_masks(
        config.mask_spec, *x.shape,
        derive_numpy_rng(config.seed, _TAG_MASK, mask_epoch, idx),
    )
    y = forward(x, masks)
    if config.noise_sigma > 0:
        y = add_noise(y, config.noise_sigma,
                      derive_numpy_rng(config.seed, _TAG_NOISE, epoch, idx))
    return y, masks


def train(config: TrainConfig, threads: int = 1,
          manifest: DatasetManifest | None = None) -> Checkpoint:
    """Train the configured reconstructor and return the final checkpoint.

    Masks are redrawn per sample per epoch (fresh acquisition simulation)
    unless ``fixed_masks`` is set. Checkpoints land in ``checkpoint_dir``
    every ``eval_every`` epochs and at the end.
    """
    torch.set_num_threads(threads)
    if manifest is None:
        manifest = load_manifest(config.dataset_manifest)
    entries = manifest.split("train")
    if not entries:
        raise DataError("manifest has no training entries")
    sequences = [manifest.load(e) for e in entries]

    model = init_params(config.backbone, derive_torch_rng(config.seed, _TAG_MODEL))
    opt = torch.optim.Adam(
        model.parameters(), lr=config.optimizer.lr,
        betas=(config.optimizer.beta1, config.optimizer.beta2),
        eps=config.optimizer.eps,
    )
    loss_rng = derive_torch_rng(config.seed, _TAG_LOSS)

    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    step = 0
    best = {"loss": None, "epoch": None}
    for epoch in range(config.epochs):
        order = derive_numpy_rng(config.seed, _TAG_SHUFFLE, epoch).permutation(len(entries))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            values = []
            for idx in batch:
                x = sequences[int(idx)]
                y, masks = _simulate_measurements(x, config, epoch, int(idx))
                values.append(
                    compute_loss(model, config.loss, y, masks, x_gt=x, rng=loss_rng)
                )
            loss = torch.stack(values).mean()
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, step {step}, "
                    f"kind {config.loss.kind.value}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            epoch_losses.append(float(loss.item()))
        mean_loss = float(np.mean(epoch_losses))
        if best["loss"] is None or mean_loss < best["loss"]:
            best = {"loss": mean_loss, "epoch": epoch}
        logger.info("epoch %d/%d loss %.3e", epoch + 1, config.epochs, mean_loss)
        if ckpt_dir and (epoch + 1) % config.eval_every == 0:
            _make_checkpoint(model, config, step, loss_rng.get_state().numpy().tobytes(),
                             best).save(ckpt_dir / "checkpoint.ckpt")

    checkpoint = _make_checkpoint(
        model, config, step, loss_rng.get_state().numpy().tobytes(), best
    )
    if ckpt_dir:
        checkpoint.save(ckpt_dir / "checkpoint.ckpt")
    return checkpoint


def _entry_masks(entry, manifest: DatasetManifest, config: TrainConfig,
                 seed: int, index: int):
    if entry.mask_path is not None:
        return load_masks(manifest.root / entry.mask_path)
    spec = entry.mask_spec if entry.mask_spec is not None else config.mask_spec
    return sample_masks(spec, *entry.dims, derive_numpy_rng(seed, _TAG_EVAL_MASK, index))


def evaluate(
    model: torch.nn.Module | None,
    config: TrainConfig,
    manifest: DatasetManifest | None = None,
    split: str = "test",
    mode: str = "direct",
    tssdu_splits: int = 8,
    seed: int | None = None,
) -> MetricsReport:
    """Score reconstructions against ground truth over a manifest split.

    ``model=None`` evaluates the zero-filled baseline. ``mode`` is ``direct``
    (a single reconstruction of the measurements) or ``tssdu_star``
    (average over ``tssdu_splits`` input-side splits).
    """
    if mode not in ("direct", "tssdu_star"):
        raise ConfigError(f"unknown reconstruction mode {mode!r}")
    if manifest is None:
        manifest = load_manifest(config.dataset_manifest)
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"manifest has no '{split}' entries")
    seed = config.seed if seed is None else seed

    pairs = {}
    with torch.no_grad():
        for i, entry in enumerate(entries):
            x_gt = manifest.load(entry)
            masks = _entry_masks(entry, manifest, config, seed, i)
            y = forward(x_gt, masks)
            if config.noise_sigma > 0:
                y = add_noise(y, config.noise_sigma,
                              derive_numpy_rng(seed, _TAG_EVAL_NOISE, i))
            if model is None:
                xhat = zero_filled(y)
            elif mode == "direct":
                xhat = reconstruct(model, y, masks)
            else:
                xhat = tssdu_star_reconstruct(
                    model, y, masks, tssdu_splits, config.loss.ssdu_input_fraction,
                    derive_torch_rng(seed, _TAG_EVAL_SPLIT, i),
                )
            pairs[entry.id] = (xhat, x_gt)
    return MetricsReport.from_pairs(pairs)


def evaluate_checkpoint(checkpoint: Checkpoint, manifest_path: str | os.PathLike | None = None,
                        **kwargs) -> MetricsReport:
    config = checkpoint.config()
    if manifest_path is not None:
        config = replace(config, dataset_manifest=str(manifest_path))
    return evaluate(checkpoint.build_model(), config, **kwargs)
