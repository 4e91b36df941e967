"""Training configuration (YAML or JSON, schema version 1).

Example::

    version: 1
    seed: 0
    ladder: [64, 128]
    iterations_per_level: 2000        # or {64: 2000, 128: 1000}
    batch_size: {64: 8, 128: 4}       # or a single int
    sigma: 3.2
    model: {width: 1.0}
    optimizer: {lr: 2.0e-4, weight_decay: 5.0e-4, betas: [0.9, 0.999]}
    loss: {global_weight: 1.0, local_weight: 1.0,
           taps: [pixel, relu1_2, relu2_2, relu3_2, relu4_2],
           extractor_weights: null, extractor_seed: 0}
    descriptors: {schedule: {64: 18, 128: 18, 256: 31, 512: 31, 1024: 44}}
    adversarial: {levels: [1024], lambda_adv: 0.1, groups: 1, crop_sides: [128]}
    data: {manifest: data/train.jsonl, pairing: ordered}
    output: {dir: runs/exp1, checkpoint_every: 1000, log_every: 10}

Relative paths resolve against the config file's directory. Paths (and
only paths) may be overridden through the environment:
``POSETRANSFER_MANIFEST``, ``POSETRANSFER_OUTPUT_DIR`` and
``POSETRANSFER_EXTRACTOR_WEIGHTS``.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import LEVELS
from .descriptors import DescriptorLayout
from .errors import ConfigError
from .losses import DEFAULT_TAPS

CONFIG_VERSION = 1
DEFAULT_ITERATIONS = 700_000
ENV_OVERRIDES = {
    "POSETRANSFER_MANIFEST": ("data", "manifest"),
    "POSETRANSFER_OUTPUT_DIR": ("output", "dir"),
    "POSETRANSFER_EXTRACTOR_WEIGHTS": ("loss", "extractor_weights"),
}


def default_batch_sizes() -> dict[int, int]:
    """8 at 64^2, halving as resolution doubles (never below 1)."""
    return {lvl: max(1, 8 >> i) for i, lvl in enumerate(LEVELS)}


@dataclass
class OptimizerConfig:
    lr: float = 2e-4
    weight_decay: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)


@dataclass
class LossConfig:
    global_weight: float = 1.0
    local_weight: float = 1.0
    taps: tuple[str, ...] = DEFAULT_TAPS
    extractor_weights: str | None = None
    extractor_seed: int = 0


@dataclass
class AdversarialConfig:
    levels: tuple[int, ...] = (1024,)
    lambda_adv: float = 0.1
    groups: int = 1
    crop_sides: tuple[int, ...] = (128,)


@dataclass
class TrainConfig:
    ladder: tuple[int, ...] = LEVELS
    iterations_per_level: dict[int, int] = field(default_factory=lambda: {lvl: DEFAULT_ITERATIONS for lvl in LEVELS})
    batch_size: dict[int, int] = field(default_factory=default_batch_sizes)
    sigma: float = 3.2
    seed: int = 0
    width: float = 1.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    descriptors: DescriptorLayout = field(default_factory=DescriptorLayout)
    adversarial: AdversarialConfig = field(default_factory=AdversarialConfig)
    manifest: str | None = None
    pairing: str = "ordered"
    output_dir: str = "runs/default"
    checkpoint_every: int = 1000
    log_every: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ladder = list(self.ladder)
        if not ladder:
            raise ConfigError("ladder must contain at least one level")
        if any(lvl not in LEVELS for lvl in ladder):
            raise ConfigError(f"ladder levels must come from {LEVELS}, got {ladder}")
        if any(b != 2 * a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError(f"ladder must double at every step, got {ladder}")
        for lvl in ladder:
            if self.iterations_per_level.get(lvl, 0) < 1:
                raise ConfigError(f"iterations_per_level missing or < 1 for level {lvl}")
            if self.batch_size.get(lvl, 0) < 1:
                raise ConfigError(f"batch_size missing or < 1 for level {lvl}")
            if lvl not in self.descriptors.schedule:
                raise ConfigError(f"descriptor schedule has no entry for level {lvl}")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not self.width > 0:
            raise ConfigError("model width must be positive")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigError("checkpoint_every and log_every must be >= 1")
        if self.pairing not in ("ordered", "with_identity"):
            raise ConfigError(f"unknown pairing policy {self.pairing!r}")
        if self.adversarial.groups < 1:
            raise ConfigError("adversarial.groups must be >= 1")

    def adversarial_at(self, level: int) -> bool:
        """Discriminators train only at the final ladder level, and only if enabled there."""
        return level == self.ladder[-1] and level in self.adversarial.levels

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "ladder": list(self.ladder),
            "iterations_per_level": dict(self.iterations_per_level),
            "batch_size": dict(self.batch_size),
            "sigma": self.sigma,
            "model": {"width": self.width},
            "optimizer": {
                "lr": self.optimizer.lr,
                "weight_decay": self.optimizer.weight_decay,
                "betas": list(self.optimizer.betas),
            },
            "loss": {
                "global_weight": self.loss.global_weight,
                "local_weight": self.loss.local_weight,
                "taps": list(self.loss.taps),
                "extractor_weights": self.loss.extractor_weights,
                "extractor_seed": self.loss.extractor_seed,
            },
            "descriptors": self.descriptors.to_dict(),
            "adversarial": {
                "levels": list(self.adversarial.levels),
                "lambda_adv": self.adversarial.lambda_adv,
                "groups": self.adversarial.groups,
                "crop_sides": list(self.adversarial.crop_sides),
            },
            "data": {"manifest": self.manifest, "pairing": self.pairing},
            "output": {"dir": self.output_dir, "checkpoint_every": self.checkpoint_every, "log_every": self.log_every},
        }

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path | None = None) -> "TrainConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = copy.deepcopy(raw)
        version = raw.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
        known = {"seed", "ladder", "iterations_per_level", "batch_size", "sigma", "model", "optimizer", "loss",
                 "descriptors", "adversarial", "data", "output"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        try:
            ladder = tuple(int(v) for v in raw.get("ladder", LEVELS))
            iters = _per_level(raw.get("iterations_per_level", DEFAULT_ITERATIONS), ladder)
            batch = _per_level(raw.get("batch_size", default_batch_sizes()), ladder)
            model = raw.get("model", {}) or {}
            opt = raw.get("optimizer", {}) or {}
            loss = raw.get("loss", {}) or {}
            adv = raw.get("adversarial", {}) or {}
            data = raw.get("data", {}) or {}
            out = raw.get("output", {}) or {}
            cfg = cls(
                ladder=ladder,
                iterations_per_level=iters,
                batch_size=batch,
                sigma=float(raw.get("sigma", 3.2)),
                seed=int(raw.get("seed", 0)),
                width=float(model.get("width", 1.0)),
                optimizer=OptimizerConfig(
                    lr=float(opt.get("lr", 2e-4)),
                    weight_decay=float(opt.get("weight_decay", 5e-4)),
                    betas=tuple(float(b) for b in opt.get("betas", (0.9, 0.999))),
                ),
                loss=LossConfig(
                    global_weight=float(loss.get("global_weight", 1.0)),
                    local_weight=float(loss.get("local_weight", 1.0)),
                    taps=tuple(loss.get("taps", DEFAULT_TAPS)),
                    extractor_weights=_resolve(loss.get("extractor_weights"), base_dir),
                    extractor_seed=int(loss.get("extractor_seed", 0)),
                ),
                descriptors=DescriptorLayout.from_dict(raw.get("descriptors", {}) or {}),
                adversarial=AdversarialConfig(
                    levels=tuple(int(v) for v in adv.get("levels", (1024,))),
                    lambda_adv=float(adv.get("lambda_adv", 0.1)),
                    groups=int(adv.get("groups", 1)),
                    crop_sides=tuple(int(v) for v in adv.get("crop_sides", (128,))),
                ),
                manifest=_resolve(data.get("manifest"), base_dir),
                pairing=str(data.get("pairing", "ordered")),
                output_dir=_resolve(out.get("dir", "runs/default"), base_dir),
                checkpoint_every=int(out.get("checkpoint_every", 1000)),
                log_every=int(out.get("log_every", 1)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from None
        return cfg


def _per_level(value, ladder) -> dict[int, int]:
    if isinstance(value, dict):
        return {int(k): int(v) for k, v in value.items()}
    return {lvl: int(value) for lvl in ladder}


def _resolve(path, base_dir) -> str | None:
    if path is None:
        return None
    p = Path(os.path.expanduser(str(path)))
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return str(p)


def load_config(path: str | Path, environ: dict | None = None) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    env = os.environ if environ is None else environ
    for var, (section, key) in ENV_OVERRIDES.items():
        if env.get(var):
            raw.setdefault(section, {})
            if not isinstance(raw[section], dict):
                raise ConfigError(f"{path}: section {section!r} must be a mapping")
            raw[section][key] = str(Path(env[var]).absolute())
    return TrainConfig.from_dict(raw, base_dir=path.parent)


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
