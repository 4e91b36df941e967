"""Progressive training, evaluation and inference."""

from __future__ import annotations

import functools
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import (
    make_adam,
    optimizer_moments,
    read_checkpoint,
    restore_generator,
    save_checkpoint,
)
from .config import TrainConfig
from .data import (
    DatasetManifest,
    FrameRecord,
    ImageBuffer,
    PairingPolicy,
    check_level,
    load_frame,
    load_manifest,
    pair_records,
)
from .descriptors import DescriptorLayout, build_descriptors, crop_tensor
from .discriminator import RegionDiscriminators, bce
from .errors import CheckpointError, ConfigError, LevelError, ShapeError, TrainingDiverged
from .heatmaps import DEFAULT_SIGMA, render_heatmaps
from .keypoints import KeypointSet, scale_keypoints
from .losses import CriterionSchedule, FeatureExtractor, criterion, global_perceptual, local_perceptual
from .metrics import MS_MIN_SIDE, MetricsReport, local_ssim, ms_ssim, perceptual_distance, ssim
from .network import (
    BOTTLENECK_SIZE,
    ProgressiveAutoencoder,
    build_autoencoder,
    forward,
    grow,
    image_to_tensor,
    tensor_to_image,
)

log = logging.getLogger(__name__)

LOG_FILE = "train_log.jsonl"


@functools.lru_cache(maxsize=512)
def _cached_frame(record: FrameRecord, level: int) -> tuple[ImageBuffer, KeypointSet]:
    return load_frame(record, level)


def pose_tensor(kp: KeypointSet, sigma: float = DEFAULT_SIGMA) -> torch.Tensor:
    """Render ``kp`` at the bottleneck grid as an (18, 32, 32) tensor."""
    grid = (BOTTLENECK_SIZE, BOTTLENECK_SIZE)
    return torch.from_numpy(render_heatmaps(scale_keypoints(kp, grid), grid, sigma).chw())


@dataclass
class Batch:
    reference: torch.Tensor
    target: torch.Tensor
    pose: torch.Tensor
    keypoints: list[KeypointSet]
    subjects: list[str]


def pair_index(cfg: TrainConfig, manifest: DatasetManifest, level: int, sample: int) -> tuple[int, int]:
    """(permutation seed, index) of the ``sample``-th draw at ``level``.

    Each epoch reshuffles with a new seed; the mapping depends only on its
    inputs, so any step can be reproduced without replaying earlier ones.
    """
    epoch, index = divmod(sample, manifest.epoch_size)
    return cfg.seed * 1_000_003 + level * 10_007 + epoch, index


def load_batch(cfg: TrainConfig, manifest: DatasetManifest, level: int, step: int, batch_size: int) -> Batch:
    refs, tgts, poses, kps, subjects = [], [], [], [], []
    for b in range(batch_size):
        seed, index = pair_index(cfg, manifest, level, step * batch_size + b)
        ref_rec, tgt_rec = pair_records(manifest, seed, index)
        ref, _ = _cached_frame(ref_rec, level)
        tgt, kp = _cached_frame(tgt_rec, level)
        refs.append(image_to_tensor(ref)[0])
        tgts.append(image_to_tensor(tgt)[0])
        poses.append(pose_tensor(kp, cfg.sigma))
        kps.append(kp)
        subjects.append(tgt_rec.subject_id)
    return Batch(torch.stack(refs), torch.stack(tgts), torch.stack(poses), kps, subjects)


def build_extractor(cfg: TrainConfig) -> FeatureExtractor:
    return FeatureExtractor(cfg.loss.taps, cfg.loss.extractor_weights, cfg.loss.extractor_seed)


def _local_term(tgt, out, sets, fx, crit):
    keep = [i for i, s in enumerate(sets) if len(s)]
    if not keep:
        return out.new_zeros(())
    if len(keep) == len(sets):
        return local_perceptual(tgt, out, sets, fx, crit)
    idx = torch.tensor(keep)
    return local_perceptual(tgt[idx], out[idx], [sets[i] for i in keep], fx, crit) * (len(keep) / len(sets))


class Trainer:
    """Owns the model, discriminators, optimizers and the step counters."""

    def __init__(self, cfg: TrainConfig, manifest: DatasetManifest | None = None, extractor=None):
        self.cfg = cfg
        if manifest is None:
            if cfg.manifest is None:
                raise ConfigError("config has no data.manifest")
            manifest = load_manifest(cfg.manifest, PairingPolicy(cfg.pairing))
        self.manifest = manifest
        self.fx = extractor if extractor is not None else build_extractor(cfg)
        self.out_dir = Path(cfg.output_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.model: ProgressiveAutoencoder = build_autoencoder(cfg.ladder[0], seed=cfg.seed, width=cfg.width)
        self.opt = self._adam(self.model)
        self.disc: RegionDiscriminators | None = None
        self.disc_opt = None
        self.level_index = 0
        self.step = 0  # completed iterations within the current level
        self.global_step = 0
        self.grow_calls = 0
        self.checkpoints: list[Path] = []

    @property
    def level(self) -> int:
        return self.cfg.ladder[self.level_index]

    def _adam(self, module, moments=None):
        o = self.cfg.optimizer
        return make_adam(module, o.lr, o.weight_decay, o.betas, moments)

    # -- state ------------------------------------------------------------

    def save(self, path: Path) -> Path:
        extra = {
            "config": self.cfg.to_dict(),
            "level_index": self.level_index,
            "global_step": self.global_step,
            "torch_rng": torch.get_rng_state(),
        }
        save_checkpoint(
            self.model,
            optimizer_moments(self.opt, self.model),
            self.step,
            path,
            discriminator=self.disc,
            discriminator_optimizer_state=optimizer_moments(self.disc_opt, self.disc) if self.disc else None,
            extra=extra,
        )
        self.checkpoints.append(Path(path))
        log.info("checkpoint written: %s", path)
        return Path(path)

    def resume(self, path: str | Path) -> None:
        payload = read_checkpoint(path)
        extra = payload.get("extra", {})
        if payload["level"] not in self.cfg.ladder:
            raise CheckpointError(f"checkpoint level {payload['level']} is not on the ladder {list(self.cfg.ladder)}")
        if payload["width"] != self.cfg.width:
            raise CheckpointError(f"checkpoint width {payload['width']} differs from config width {self.cfg.width}")
        self.model = restore_generator(payload)
        self.opt = self._adam(self.model, payload.get("generator_optimizer"))
        self.level_index = self.cfg.ladder.index(payload["level"])
        self.step = payload["step"]
        self.global_step = int(extra.get("global_step", 0))
        if "torch_rng" in extra:
            torch.set_rng_state(extra["torch_rng"])
        self.disc, self.disc_opt = None, None
        if "discriminator" in payload:
            d = payload["discriminator"]
            self.disc = RegionDiscriminators(d["crop_side"], self.cfg.seed, d["groups"], self.cfg.adversarial.crop_sides)
            self.disc.load_state_dict(d["state"])
            self.disc_opt = self._adam(self.disc, payload.get("discriminator_optimizer"))

    # -- growth -----------------------------------------------------------

    def grow(self) -> None:
        old = dict(self.model.named_parameters())
        moments = optimizer_moments(self.opt, self.model)
        grow(self.model, self.cfg.seed)
        self.grow_calls += 1
        # moments follow only the tensors that survived growth
        kept = {n: m for n, m in moments.items() if dict(self.model.named_parameters()).get(n) is old.get(n)}
        self.opt = self._adam(self.model, kept)

    def _ensure_discriminator(self) -> None:
        if self.disc is None:
            adv = self.cfg.adversarial
            self.disc = RegionDiscriminators(self.level // 8, self.cfg.seed, adv.groups, adv.crop_sides)
            self.disc_opt = self._adam(self.disc)

    # -- training ---------------------------------------------------------

    def train_step(self, crit: str, batch: Batch, adversarial: bool) -> dict:
        cfg = self.cfg
        self.model.train()
        layout: DescriptorLayout = cfg.descriptors
        sets = [build_descriptors(kp, self.level, layout) for kp in batch.keypoints]
        out = self.model(batch.reference, batch.pose)
        loss_global = global_perceptual(batch.target, out, self.fx, crit)
        record = {"loss_global": loss_global.item(), "loss_local": None, "loss_adv": None, "loss_d": None}
        if adversarial:
            rects = [s.rects for s in sets]
            if not any(rects):
                raise ShapeError("no descriptor windows in this batch")
            ref_c, _ = crop_tensor(batch.reference, rects)
            tgt_c, _ = crop_tensor(batch.target, rects)
            out_c, _ = crop_tensor(out, rects)
            region = torch.tensor([d for r in rects for d in range(len(r))])
            self.disc.train()
            p_real = self.disc.score(ref_c, tgt_c, region)
            p_fake = self.disc.score(ref_c, out_c.detach(), region)
            loss_d = 0.5 * (bce(p_real, 1.0) + bce(p_fake, 0.0))
            self._check_finite(loss_d, "discriminator")
            self.disc_opt.zero_grad(set_to_none=True)
            loss_d.backward()
            self.disc_opt.step()
            loss_adv = bce(self.disc.score(ref_c, out_c, region), 1.0)
            loss = cfg.loss.global_weight * loss_global + cfg.adversarial.lambda_adv * loss_adv
            record.update(loss_adv=loss_adv.item(), loss_d=loss_d.item())
        else:
            loss_local = _local_term(batch.target, out, sets, self.fx, crit)
            loss = cfg.loss.global_weight * loss_global + cfg.loss.local_weight * loss_local
            record["loss_local"] = loss_local.item()
        self._check_finite(loss, "generator")
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        self.opt.step()
        if self.disc is not None:
            # the generator pass also deposited gradients on the discriminator
            self.disc.zero_grad(set_to_none=True)
        record["loss"] = loss.item()
        return record

    def _check_finite(self, loss: torch.Tensor, what: str) -> None:
        if not torch.isfinite(loss):
            snap = self.save(self.out_dir / f"diverged_level{self.level}_step{self.step:07d}.pt")
            raise TrainingDiverged(
                f"non-finite {what} loss at level {self.level}, step {self.step}; snapshot written to {snap}"
            )

    def run(self, max_steps: int | None = None) -> Path:
        """Train to the end of the ladder (or for ``max_steps`` iterations).

        Returns the path of the last checkpoint written.
        """
        cfg = self.cfg
        log_path = self.out_dir / LOG_FILE
        done = 0
        last = None
        with log_path.open("a") as log_file:
            while True:
                level = self.level
                total = cfg.iterations_per_level[level]
                if self.model.level < level:
                    self.grow()
                adversarial = cfg.adversarial_at(level)
                if adversarial:
                    self._ensure_discriminator()
                schedule = CriterionSchedule(total)
                batch_size = cfg.batch_size[level]
                while self.step < total:
                    if max_steps is not None and done >= max_steps:
                        return self.save(self._ckpt_name(level, self.step))
                    crit = criterion(self.step, schedule)
                    if self.step == schedule.switch_point and self.step > 0:
                        log.info("level %d: criterion switches to %s at step %d", level, crit, self.step)
                    t0 = time.perf_counter()
                    batch = load_batch(cfg, self.manifest, level, self.step, batch_size)
                    rec = self.train_step(crit, batch, adversarial)
                    self.step += 1
                    self.global_step += 1
                    done += 1
                    if self.step % cfg.log_every == 0 or self.step in (1, total, schedule.switch_point + 1):
                        rec.update(
                            step=self.global_step,
                            level=level,
                            level_step=self.step - 1,
                            criterion=crit,
                            lr=self.opt.param_groups[0]["lr"],
                            seconds=round(time.perf_counter() - t0, 4),
                        )
                        log_file.write(json.dumps(rec) + "\n")
                        log_file.flush()
                    if self.step % cfg.checkpoint_every == 0 and self.step < total:
                        last = self.save(self._ckpt_name(level, self.step))
                last = self.save(self.out_dir / f"level{level}_final.pt")
                if self.level_index == len(cfg.ladder) - 1:
                    return last
                self.level_index += 1
                self.step = 0

    def _ckpt_name(self, level: int, step: int) -> Path:
        return self.out_dir / f"level{level}_step{step:07d}.pt"


def train(cfg: TrainConfig, resume: str | Path | None = None, manifest: DatasetManifest | None = None,
          extractor=None) -> Path:
    """Run the configured ladder; returns the final checkpoint path."""
    trainer = Trainer(cfg, manifest, extractor)
    if resume is not None:
        trainer.resume(resume)
    return trainer.run()


def read_log(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# -- inference ----------------------------------------------------------------


def _model(checkpoint) -> ProgressiveAutoencoder:
    if isinstance(checkpoint, ProgressiveAutoencoder):
        return checkpoint
    return restore_generator(read_checkpoint(checkpoint))


def infer(checkpoint, reference_image: ImageBuffer, target_keypoints: KeypointSet, sigma: float = DEFAULT_SIGMA) -> ImageBuffer:
    """One forward pass: ``reference_image`` re-posed to ``target_keypoints``.

    ``checkpoint`` is a path or an already loaded model. Keypoints may be at
    any resolution; they are rescaled to the pose grid.
    """
    model = _model(checkpoint)
    if reference_image.resolution != (model.level, model.level):
        raise ShapeError(f"reference image is {reference_image.resolution}, checkpoint level is {model.level}")
    grid = (BOTTLENECK_SIZE, BOTTLENECK_SIZE)
    pose = render_heatmaps(scale_keypoints(target_keypoints, grid), grid, sigma)
    return forward(model, reference_image, pose)


def infer_sequence(checkpoint, reference_image: ImageBuffer, keypoint_sequence, sigma: float = DEFAULT_SIGMA):
    """Frame-by-frame generation; frames are independent of each other."""
    model = _model(checkpoint)
    return [infer(model, reference_image, kp, sigma) for kp in keypoint_sequence]


# -- evaluation ---------------------------------------------------------------


def _resize(img: ImageBuffer, level: int) -> ImageBuffer:
    if img.resolution == (level, level):
        return img
    t = F.interpolate(image_to_tensor(img), size=(level, level), mode="area")
    return tensor_to_image(t)


def evaluate(
    checkpoint,
    manifest: DatasetManifest,
    level: int,
    fx=None,
    real_data: bool = False,
    layout: DescriptorLayout | None = None,
    sigma: float = DEFAULT_SIGMA,
) -> tuple[MetricsReport, list[dict]]:
    """Metrics over every admissible pair of ``manifest``.

    Outputs are produced at the checkpoint's level and area-downsampled when
    a lower ``level`` is requested. ``real_data=True`` scores each target
    against itself (no checkpoint needed). Local-SSIM uses the densest
    descriptor layout. Returns the aggregate report and per-pair rows.
    """
    level = check_level(level)
    layout = layout or DescriptorLayout()
    model = None
    if not real_data:
        model = _model(checkpoint)
        if model.level < level:
            raise LevelError(f"checkpoint level {model.level} is below the requested level {level}")
    work_level = model.level if model is not None else level
    fx = fx if fx is not None else FeatureExtractor()
    rows = []
    for ref_i, tgt_i in manifest.pairs():
        ref_rec, tgt_rec = manifest.records[ref_i], manifest.records[tgt_i]
        ref, _ = _cached_frame(ref_rec, work_level)
        tgt, tgt_kp = _cached_frame(tgt_rec, work_level)
        out = tgt if real_data else infer(model, ref, tgt_kp, sigma)
        out, gt = _resize(out, level), _resize(tgt, level)
        kp = scale_keypoints(tgt_kp, (level, level))
        ds = build_descriptors(kp, level, layout, count=max(layout.counts))
        rows.append(
            {
                "subject_id": tgt_rec.subject_id,
                "reference_frame": ref_rec.frame_id,
                "target_frame": tgt_rec.frame_id,
                "ssim": ssim(out, gt),
                "ms_ssim": ms_ssim(out, gt) if level >= MS_MIN_SIDE else None,
                "local_ssim": local_ssim(out, gt, ds) if len(ds) else None,
                "perceptual_distance": perceptual_distance(out, gt, fx),
            }
        )

    def mean(key):
        vals = [r[key] for r in rows if r[key] is not None]
        return float(np.mean(vals)) if vals else None

    report = MetricsReport(
        ssim=mean("ssim"),
        ms_ssim=mean("ms_ssim"),
        local_ssim=mean("local_ssim"),
        perceptual_distance=mean("perceptual_distance"),
        n_pairs=len(rows),
    )
    return report, rows
