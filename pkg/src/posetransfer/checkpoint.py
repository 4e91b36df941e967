"""Versioned checkpoint container.

A checkpoint is a ``torch.save`` archive holding one dict:

=========================  ==================================================
key                        content
=========================  ==================================================
``format``                 ``"posetransfer-checkpoint"``
``version``                ``"MAJOR.MINOR"``; readers accept any matching MAJOR
``level`` / ``width``      generator resolution level and channel scale
``seed``                   generator init seed (used again when growing)
``step``                   completed iterations within ``level``
``generator``              generator ``state_dict`` (parameters + BN statistics)
``generator_optimizer``    Adam moments keyed by parameter name
``discriminator``          optional, ``{"crop_side", "groups", "state"}``
``discriminator_optimizer``  optional, moments keyed by parameter name
``extra``                  free-form metadata (config, global step, RNG state)
=========================  ==================================================

Moments are stored per parameter name as ``{"step", "exp_avg",
"exp_avg_sq"}`` so they survive the parameter list changing under growth.
"""

from __future__ import annotations

import os
import pickle
import zipfile
from pathlib import Path

import torch

from .errors import CheckpointError
from .network import ProgressiveAutoencoder

FORMAT = "posetransfer-checkpoint"
VERSION = "1.0"


def optimizer_moments(optimizer: torch.optim.Optimizer, module: torch.nn.Module) -> dict[str, dict]:
    """Name-keyed copy of the per-parameter optimizer state."""
    out = {}
    for name, p in module.named_parameters():
        state = optimizer.state.get(p)
        if state:
            out[name] = {k: (v.detach().clone() if torch.is_tensor(v) else v) for k, v in state.items()}
    return out


def make_adam(module: torch.nn.Module, lr: float, weight_decay: float, betas, moments: dict | None = None):
    params = [p for p in module.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=lr, betas=tuple(betas), weight_decay=weight_decay)
    if moments:
        named = dict(module.named_parameters())
        for name, state in moments.items():
            p = named.get(name)
            if p is None or state["exp_avg"].shape != p.shape:
                continue
            opt.state[p] = {k: (v.clone().to(p.device) if torch.is_tensor(v) else v) for k, v in state.items()}
    return opt


def save_checkpoint(
    model: ProgressiveAutoencoder,
    optimizer_state: dict | None,
    step: int,
    path: str | Path,
    *,
    discriminator=None,
    discriminator_optimizer_state: dict | None = None,
    extra: dict | None = None,
) -> Path:
    """Write atomically (temp file + rename) so a crash never leaves half a file."""
    path = Path(path)
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "level": model.level,
        "width": model.width,
        "seed": model.seed,
        "step": int(step),
        "generator": model.state_dict(),
        "generator_optimizer": optimizer_state or {},
        "extra": extra or {},
    }
    if discriminator is not None:
        payload["discriminator"] = {
            "crop_side": discriminator.members[0].crop_side,
            "groups": discriminator.groups,
            "state": discriminator.state_dict(),
        }
        payload["discriminator_optimizer"] = discriminator_optimizer_state or {}
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def read_checkpoint(path: str | Path) -> dict:
    """Load and validate the raw container."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (RuntimeError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile, ValueError, OSError) as exc:
        raise CheckpointError(f"{path}: unreadable or truncated checkpoint ({exc})") from None
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    version = str(payload.get("version", ""))
    if version.split(".")[0] != VERSION.split(".")[0]:
        raise CheckpointError(f"{path}: checkpoint version {version!r} is incompatible with reader {VERSION}")
    for key in ("level", "width", "seed", "step", "generator"):
        if key not in payload:
            raise CheckpointError(f"{path}: missing field {key!r}")
    return payload


def restore_generator(payload: dict) -> ProgressiveAutoencoder:
    model = ProgressiveAutoencoder(payload["level"], width=payload["width"], seed=payload["seed"])
    try:
        model.load_state_dict(payload["generator"])
    except RuntimeError as exc:
        raise CheckpointError(f"generator parameters do not match level {payload['level']}: {exc}") from None
    return model


def load_checkpoint(path: str | Path, expected_level: int | None = None):
    """Returns ``(model, optimizer_state, step)``."""
    payload = read_checkpoint(path)
    if expected_level is not None and payload["level"] != expected_level:
        raise CheckpointError(f"{path}: checkpoint is at level {payload['level']}, expected {expected_level}")
    return restore_generator(payload), payload.get("generator_optimizer", {}), payload["step"]
