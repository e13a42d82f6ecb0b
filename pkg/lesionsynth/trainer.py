import hashlib
import json
import logging
import os
import random
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

import config
from lesionsynth.checkpoint import (Checkpoint, checkpoint_name, load_checkpoint, load_module_arrays,
                                    load_optimizer_arrays, module_arrays, optimizer_arrays, save_checkpoint)
from lesionsynth.errors import ConfigMismatchError, InvalidArgumentError, TrainingDivergedError
from lesionsynth.mapkit import (NUM_LABELS, boundary_map, map_paths, one_hot, read_instance_png, read_rgb,
                                read_semantic_png)
from lesionsynth.objectives import LossReport, LossWeights, total_losses
from lesionsynth.synthnet import (DiscriminatorConfig, GeneratorConfig, build_discriminator, build_generator,
                                  discriminator_forward, generator_forward)

KIND = "pix2pixhd"

# Fields that only affect where/how fast things run, not what is learned
OPERATIONAL_FIELDS = ("checkpoint_dir", "checkpoint_every", "loader_workers", "metrics_path")


@dataclass
class TrainingConfig:
    epochs: int = config.EPOCHS
    decay_start_epoch: int = config.DECAY_START_EPOCH
    learning_rate: float = config.LEARNING_RATE
    adam_beta1: float = config.ADAM_BETA1
    adam_beta2: float = config.ADAM_BETA2
    batch_size: int = config.BATCH_SIZE
    seed: int = config.SEED
    width: int = config.MAP_WIDTH
    height: int = config.MAP_HEIGHT
    use_boundary: bool = config.USE_BOUNDARY
    checkpoint_dir: str = config.CHECKPOINT_DIR
    checkpoint_every: int = config.CHECKPOINT_EVERY
    loader_workers: int = config.LOADER_WORKERS
    deterministic: bool = config.DETERMINISTIC
    init_std: float = config.WEIGHT_INIT_STD
    metrics_path: str = ""  # empty: <checkpoint_dir>/metrics.jsonl

    def validate(self):
        positive = ("epochs", "learning_rate", "batch_size", "width", "height", "checkpoint_every", "init_std")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}", field=name)
        if not 0 <= self.decay_start_epoch <= self.epochs:
            raise InvalidArgumentError(f"decay_start_epoch must lie in [0, epochs], got {self.decay_start_epoch}",
                                       field="decay_start_epoch")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must lie in [0, 1), got {getattr(self, name)}", field=name)
        if self.loader_workers < 0:
            raise InvalidArgumentError(f"loader_workers must be >= 0, got {self.loader_workers}", field="loader_workers")

    @property
    def input_channels(self):
        return NUM_LABELS + int(self.use_boundary)

    def model_fields(self):
        return {k: v for k, v in asdict(self).items() if k not in OPERATIONAL_FIELDS}


def seed_everything(seed, deterministic=True):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic, warn_only=True)


def learning_rate_at(epoch, cfg: TrainingConfig):
    """Constant until decay_start_epoch, then linear decay towards zero at cfg.epochs."""
    if epoch < cfg.decay_start_epoch or cfg.epochs <= cfg.decay_start_epoch:
        return cfg.learning_rate
    return cfg.learning_rate * (cfg.epochs - epoch) / (cfg.epochs - cfg.decay_start_epoch)


def to_uint8(image):
    """Maps a 3 x H x W tensor in [-1, 1] to an H x W x 3 uint8 array (-1 -> 0, +1 -> 255)."""
    scaled = ((image.detach().float().clamp(-1, 1) + 1) * 127.5).round()
    return scaled.to(torch.uint8).permute(1, 2, 0).cpu().numpy()


def _set_requires_grad(net, flag):
    for param in net.parameters():
        param.requires_grad_(flag)


class MetricsLog:
    """Append-only newline-delimited JSON log on its own logger."""

    def __init__(self, path):
        folder = os.path.dirname(path)
        if folder:
            os.makedirs(folder, exist_ok=True)
        self.path = path
        self.logger = logging.getLogger(f"Metrics.{os.path.abspath(path)}")
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False
        self._attach()

    def _attach(self):
        if not self.logger.handlers:
            handler = logging.FileHandler(self.path, mode="a")
            handler.setFormatter(logging.Formatter("%(message)s"))
            self.logger.addHandler(handler)

    def reset(self, through_epoch=None):
        """Drops earlier records: all of them, or those after `through_epoch` when resuming."""
        self.close()
        kept = []
        if through_epoch is not None and os.path.isfile(self.path):
            with open(self.path, encoding="utf-8") as fh:
                kept = [line for line in fh if line.strip() and json.loads(line).get("epoch", 0) <= through_epoch]
        with open(self.path, "w", encoding="utf-8") as fh:
            fh.writelines(kept)
        self._attach()

    def write(self, record):
        self.logger.info(json.dumps(record, sort_keys=True))

    def close(self):
        for handler in list(self.logger.handlers):
            handler.close()
            self.logger.removeHandler(handler)


class PreparedMapDataset(Dataset):
    """Reads the maps written by prepare-maps; yields (conditioning, target) tensors."""

    def __init__(self, image_ids, maps_folder, use_boundary=True, id_weights=(1, 256, 65536)):
        self.image_ids = list(image_ids)
        self.maps_folder = maps_folder
        self.use_boundary = use_boundary
        self.id_weights = tuple(id_weights)

    def __len__(self):
        return len(self.image_ids)

    def __getitem__(self, idx):
        paths = map_paths(self.maps_folder, self.image_ids[idx])
        semantic = read_semantic_png(paths["semantic"])
        boundary = boundary_map(read_instance_png(paths["instance"], self.id_weights)) if self.use_boundary else None
        cond = torch.from_numpy(one_hot(semantic, NUM_LABELS, boundary))
        target = torch.from_numpy(read_rgb(paths["image"])).permute(2, 0, 1).float() / 127.5 - 1.0
        return cond, target


class Pix2PixHDTrainer:
    """Owns the generator, the multi-scale discriminator and their optimizers."""

    def __init__(self, cfg: TrainingConfig, gen_cfg=None, disc_cfg=None, weights=None, device="cpu"):
        cfg.validate()
        self.cfg = cfg
        in_channels = cfg.input_channels
        self.gen_cfg = gen_cfg or GeneratorConfig(input_channels=in_channels)
        if self.gen_cfg.input_channels != in_channels:
            raise InvalidArgumentError(
                f"use_boundary={cfg.use_boundary} needs {in_channels} generator input channels, "
                f"config has {self.gen_cfg.input_channels}")
        self.disc_cfg = disc_cfg or DiscriminatorConfig(input_channels=in_channels + self.gen_cfg.output_channels)
        if self.disc_cfg.input_channels != in_channels + self.gen_cfg.output_channels:
            raise InvalidArgumentError(f"Discriminator must take {in_channels + self.gen_cfg.output_channels} channels")
        divisor = self.gen_cfg.divisor
        if cfg.width % divisor or cfg.height % divisor:
            raise InvalidArgumentError(f"Resolution {cfg.width}x{cfg.height} is not divisible by {divisor}")
        self.weights = weights or LossWeights()
        self.device = torch.device(device)

        seed_everything(cfg.seed, cfg.deterministic)
        self.generator = build_generator(self.gen_cfg, cfg.init_std).to(self.device)
        self.discriminator = build_discriminator(self.disc_cfg, cfg.init_std).to(self.device)
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=cfg.learning_rate, betas=betas)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=cfg.learning_rate, betas=betas)

        self.epoch = 0  # next epoch to run
        self.global_step = 0
        metrics_path = cfg.metrics_path or os.path.join(cfg.checkpoint_dir, "metrics.jsonl")
        self.metrics = MetricsLog(metrics_path)

    def fingerprint(self):
        payload = {
            "training": self.cfg.model_fields(),
            "generator": asdict(self.gen_cfg),
            "discriminator": asdict(self.disc_cfg),
            "weights": asdict(self.weights),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    def close(self):
        self.metrics.close()

    # --- single update -----------------------------------------------------

    def _check_finite(self, value, what):
        if not torch.isfinite(value).all():
            raise TrainingDivergedError(f"Non-finite {what} loss at step {self.global_step} (epoch {self.epoch})")

    def train_step(self, cond, target):
        """
        One discriminator update followed by one generator update.

        Args:
            cond (torch.Tensor): N x C x H x W one-hot conditioning batch.
            target (torch.Tensor): N x 3 x H x W real images in [-1, 1].

        Returns:
            LossReport: Loss components of this step.
        """
        if cond.dim() != 4 or target.dim() != 4:
            raise InvalidArgumentError("train_step expects N x C x H x W tensors")
        if target.shape[1] != self.gen_cfg.output_channels:
            raise InvalidArgumentError(f"Targets must have {self.gen_cfg.output_channels} channels, got {target.shape[1]}")
        if cond.shape[0] != target.shape[0] or cond.shape[2:] != target.shape[2:]:
            raise InvalidArgumentError(f"Conditioning {tuple(cond.shape)} and target {tuple(target.shape)} disagree")
        cond = cond.to(self.device, torch.float32)
        target = target.to(self.device, torch.float32)
        self.generator.train()
        self.discriminator.train()

        fake = generator_forward(self.generator, cond)

        # Discriminator update
        _set_requires_grad(self.discriminator, True)
        real_pyramid = discriminator_forward(self.discriminator, cond, target)
        fake_pyramid = discriminator_forward(self.discriminator, cond, fake.detach())
        d_terms = total_losses(real_pyramid, fake_pyramid, self.weights)
        self._check_finite(d_terms.d_total, "discriminator")
        self.opt_d.zero_grad(set_to_none=True)
        d_terms.d_total.backward()
        self.opt_d.step()

        # Generator update against the refreshed discriminator
        _set_requires_grad(self.discriminator, False)
        with torch.no_grad():
            real_pyramid = discriminator_forward(self.discriminator, cond, target)
        fake_pyramid = discriminator_forward(self.discriminator, cond, fake)
        g_terms = total_losses(real_pyramid, fake_pyramid, self.weights)
        self._check_finite(g_terms.g_total, "generator")
        self.opt_g.zero_grad(set_to_none=True)
        g_terms.g_total.backward()
        self.opt_g.step()
        _set_requires_grad(self.discriminator, True)

        g_report, d_report = g_terms.report(), d_terms.report()
        report = LossReport(g_gan=g_report.g_gan, g_fm=g_report.g_fm, d_real=d_report.d_real,
                            d_fake=d_report.d_fake)
        if not report.is_finite():
            raise TrainingDivergedError(f"Non-finite loss report at step {self.global_step}: {report}")
        self.global_step += 1
        self.metrics.write({"kind": "step", "step": self.global_step, "epoch": self.epoch, **report.as_record()})
        return report

    # --- checkpoints ---------------------------------------------------------

    def to_checkpoint(self, epoch):
        tensors = {}
        tensors.update(module_arrays("generator", self.generator))
        tensors.update(module_arrays("discriminator", self.discriminator))
        g_arrays, g_meta = optimizer_arrays("opt_g", self.opt_g)
        d_arrays, d_meta = optimizer_arrays("opt_d", self.opt_d)
        tensors.update(g_arrays)
        tensors.update(d_arrays)
        return Checkpoint(
            kind=KIND,
            epoch=epoch,
            fingerprint=self.fingerprint(),
            config={
                "training": asdict(self.cfg),
                "generator": asdict(self.gen_cfg),
                "discriminator": asdict(self.disc_cfg),
                "weights": asdict(self.weights),
            },
            tensors=tensors,
            meta={"opt_g": g_meta, "opt_d": d_meta, "global_step": self.global_step},
        )

    def restore(self, ckpt: Checkpoint):
        if ckpt.kind != KIND:
            raise ConfigMismatchError(f"Checkpoint kind '{ckpt.kind}' is not '{KIND}'")
        if ckpt.fingerprint != self.fingerprint():
            raise ConfigMismatchError("Checkpoint was written with a different configuration; refusing to resume")
        load_module_arrays("generator", self.generator, ckpt.tensors)
        load_module_arrays("discriminator", self.discriminator, ckpt.tensors)
        load_optimizer_arrays("opt_g", self.opt_g, ckpt.tensors, ckpt.meta["opt_g"])
        load_optimizer_arrays("opt_d", self.opt_d, ckpt.tensors, ckpt.meta["opt_d"])
        self.epoch = ckpt.epoch + 1
        self.global_step = ckpt.meta.get("global_step", 0)
        logging.info(f"Resumed from epoch {ckpt.epoch}; continuing at epoch {self.epoch}")

    # --- full run ------------------------------------------------------------

    def fit(self, dataset, resume=None):
        """
        Runs the remaining epochs, checkpointing every cfg.checkpoint_every epochs and at the end.

        Returns:
            Checkpoint: The final checkpoint.
        """
        if len(dataset) == 0:
            raise InvalidArgumentError("Training dataset is empty")
        final = None
        if resume is not None:
            final = load_checkpoint(resume) if isinstance(resume, (str, os.PathLike)) else resume
            self.restore(final)
        self.metrics.reset(final.epoch if final is not None else None)

        cfg = self.cfg
        for epoch in range(self.epoch, cfg.epochs):
            self.epoch = epoch
            lr = learning_rate_at(epoch, cfg)
            for optimizer in (self.opt_g, self.opt_d):
                for group in optimizer.param_groups:
                    group["lr"] = lr
            loader = DataLoader(dataset, batch_size=cfg.batch_size, shuffle=True, num_workers=cfg.loader_workers,
                                generator=torch.Generator().manual_seed(cfg.seed + epoch))
            totals = np.zeros(4)
            batches = 0
            for cond, target in loader:
                report = self.train_step(cond, target)
                totals += [report.g_gan, report.g_fm, report.d_real, report.d_fake]
                batches += 1
            means = totals / max(batches, 1)
            self.metrics.write({"kind": "epoch", "epoch": epoch, "lr": lr, "g_gan": means[0], "g_fm": means[1],
                                "d_real": means[2], "d_fake": means[3]})
            logging.info(f"Epoch {epoch + 1}/{cfg.epochs} lr={lr:.2e} g_gan={means[0]:.4f} g_fm={means[1]:.4f} "
                         f"d_real={means[2]:.4f} d_fake={means[3]:.4f}")

            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1:
                final = self.to_checkpoint(epoch)
                save_checkpoint(final, os.path.join(cfg.checkpoint_dir, checkpoint_name(epoch)))
            self.epoch = epoch + 1
        if final is None:
            final = self.to_checkpoint(self.epoch - 1)
        return final


def train(cfg: TrainingConfig, dataset, gen_cfg=None, disc_cfg=None, weights=None, resume=None):
    trainer = Pix2PixHDTrainer(cfg, gen_cfg, disc_cfg, weights)
    try:
        return trainer.fit(dataset, resume)
    finally:
        trainer.close()


def generator_from_checkpoint(ckpt: Checkpoint):
    if ckpt.kind != KIND:
        raise InvalidArgumentError(f"Expected a {KIND} checkpoint, got '{ckpt.kind}'")
    gen_cfg = GeneratorConfig(**ckpt.config["generator"])
    generator = build_generator(gen_cfg)
    load_module_arrays("generator", generator, ckpt.tensors)
    generator.eval()
    return generator


def iter_synthesize(ckpt: Checkpoint, maps):
    """Lazily yields one H x W x 3 uint8 image per (semantic, instance) pair; the generator is loaded once."""
    training = ckpt.config["training"]
    width, height, use_boundary = training["width"], training["height"], training["use_boundary"]
    generator = generator_from_checkpoint(ckpt)
    with torch.no_grad():
        for semantic, instance in maps:
            semantic = np.asarray(semantic)
            if semantic.shape != (height, width):
                raise InvalidArgumentError(f"Map size {semantic.shape[::-1]} differs from trained {width}x{height}")
            boundary = None
            if use_boundary:
                if instance is None:
                    raise InvalidArgumentError("This generator was trained with instance maps; none given")
                instance = np.asarray(instance)
                if instance.shape != semantic.shape:
                    raise InvalidArgumentError(f"Instance map {instance.shape} does not match {semantic.shape}")
                boundary = boundary_map(instance)
            cond = torch.from_numpy(one_hot(semantic, NUM_LABELS, boundary)).unsqueeze(0)
            yield to_uint8(generator_forward(generator, cond)[0])


def synthesize(ckpt: Checkpoint, maps):
    """
    Translates label maps into RGB lesion images with a trained generator.

    Args:
        ckpt (Checkpoint): pix2pixHD checkpoint.
        maps (list[tuple[np.ndarray, np.ndarray | None]]): (semantic, instance) pairs at the trained resolution.

    Returns:
        list[np.ndarray]: One H x W x 3 uint8 image per map.
    """
    images = list(iter_synthesize(ckpt, maps))
    logging.info(f"Synthesized {len(images)} images")
    return images
