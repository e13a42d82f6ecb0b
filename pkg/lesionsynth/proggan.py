"""
Conditional progressive-growing GAN: noise plus a benign/melanoma label to a lesion image.

Training starts at 4x4 and doubles the resolution stage by stage. Each new
block is faded in with weight alpha while the previous path is upsampled
(generator) or downsampled (discriminator) and blended with 1 - alpha. The
two one-hot label entries are appended as constant planes to the input of
every layer except the last one of each network.
"""
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from enum import IntEnum

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image
from torch.utils.data import DataLoader, Dataset

import config
from lesionsynth.checkpoint import Checkpoint, checkpoint_name, load_module_arrays, module_arrays, save_checkpoint
from lesionsynth.errors import InvalidArgumentError, TrainingDivergedError
from lesionsynth.trainer import MetricsLog, seed_everything, to_uint8

KIND = "pgan"
NUM_CLASSES = 2
OPERATIONAL_FIELDS = ("checkpoint_dir", "loader_workers", "metrics_path")


class ConditionLabel(IntEnum):
    BENIGN = 1 - config.MELANOMA_INDEX
    MELANOMA = config.MELANOMA_INDEX

    def one_hot(self):
        vector = np.zeros(NUM_CLASSES, dtype=np.float32)
        vector[int(self)] = 1.0
        return vector

    @classmethod
    def parse(cls, value):
        """Accepts 'benign'/'melanoma' (any case), 0/1 or an existing label."""
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        if text in ("benign", "melanoma"):
            return cls[text.upper()]
        if text in ("0", "1"):
            return cls(int(text))
        raise InvalidArgumentError(f"Unknown diagnosis label '{value}'")


@dataclass
class ResolutionSchedule:
    start_res: int = config.PGAN_START_RES
    target_res: int = config.PGAN_TARGET_RES
    fade_epochs: int = config.PGAN_FADE_EPOCHS
    stable_epochs: int = config.PGAN_STABLE_EPOCHS
    initial_stable_epochs: int = config.PGAN_INITIAL_STABLE_EPOCHS

    def validate(self):
        for name in ("start_res", "target_res"):
            res = getattr(self, name)
            if res < 4 or res & (res - 1):
                raise InvalidArgumentError(f"{name} must be a power of two >= 4, got {res}", field=name)
        if self.target_res < self.start_res:
            raise InvalidArgumentError(f"target_res {self.target_res} is below start_res {self.start_res}",
                                       field="target_res")
        if self.target_res > 256:
            raise InvalidArgumentError(f"Resolutions above 256 are not supported, got {self.target_res}",
                                       field="target_res")
        for name in ("fade_epochs", "stable_epochs"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0, got {getattr(self, name)}", field=name)
        if self.initial_stable_epochs < 1:
            raise InvalidArgumentError(f"initial_stable_epochs must be >= 1, got {self.initial_stable_epochs}",
                                       field="initial_stable_epochs")
        if self.fade_epochs + self.stable_epochs < 1 and self.target_res > self.start_res:
            raise InvalidArgumentError("Growing stages need at least one epoch", field="fade_epochs")

    def resolutions(self):
        res, out = self.start_res, []
        while res <= self.target_res:
            out.append(res)
            res *= 2
        return out

    def epochs_in_stage(self, stage):
        return self.initial_stable_epochs if stage == 0 else self.fade_epochs + self.stable_epochs

    @property
    def total_epochs(self):
        return sum(self.epochs_in_stage(i) for i in range(len(self.resolutions())))


@dataclass
class FadeState:
    stage: int
    alpha: float


def fade_alpha(epoch_in_stage, schedule: ResolutionSchedule):
    """Weight of the newly added block: (e+1)/fade during the fade, 1.0 while stabilizing."""
    span = schedule.fade_epochs + schedule.stable_epochs
    if not 0 <= epoch_in_stage < span:
        raise InvalidArgumentError(f"epoch_in_stage must lie in [0, {span}), got {epoch_in_stage}")
    if schedule.fade_epochs == 0:
        return 1.0
    return min(1.0, (epoch_in_stage + 1) / schedule.fade_epochs)


@dataclass
class PGANConfig:
    latent_dim: int = config.PGAN_LATENT_DIM
    fmap_base: int = config.PGAN_FMAP_BASE
    fmap_max: int = config.PGAN_FMAP_MAX
    start_res: int = config.PGAN_START_RES
    target_res: int = config.PGAN_TARGET_RES
    fade_epochs: int = config.PGAN_FADE_EPOCHS
    stable_epochs: int = config.PGAN_STABLE_EPOCHS
    initial_stable_epochs: int = config.PGAN_INITIAL_STABLE_EPOCHS
    learning_rate: float = config.PGAN_LEARNING_RATE
    beta1: float = config.PGAN_BETA1
    beta2: float = config.PGAN_BETA2
    gp_weight: float = config.PGAN_GP_WEIGHT
    drift: float = config.PGAN_DRIFT
    batch_size: int = config.PGAN_BATCH_SIZE
    seed: int = config.SEED
    deterministic: bool = config.DETERMINISTIC
    checkpoint_dir: str = config.CHECKPOINT_DIR
    loader_workers: int = config.LOADER_WORKERS
    metrics_path: str = ""

    def schedule(self):
        return ResolutionSchedule(self.start_res, self.target_res, self.fade_epochs, self.stable_epochs,
                                  self.initial_stable_epochs)

    def validate(self):
        self.schedule().validate()
        for name in ("latent_dim", "fmap_base", "fmap_max", "learning_rate", "batch_size"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}", field=name)
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must lie in [0, 1), got {getattr(self, name)}", field=name)
        for name in ("gp_weight", "drift"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0, got {getattr(self, name)}", field=name)

    def channels_at(self, res):
        return int(min(self.fmap_base / 2 ** (int(math.log2(res)) - 1), self.fmap_max))

    def model_fields(self):
        return {k: v for k, v in asdict(self).items() if k not in OPERATIONAL_FIELDS}


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def _label_rows(label, n, like):
    """N x 2 one-hot rows from a single label, an N vector of labels or N x 2 one-hot rows."""
    if torch.is_tensor(label):
        if label.dim() == 2 and label.shape[1] == NUM_CLASSES:
            rows = label.to(like.device, like.dtype)
        elif label.dim() <= 1:
            idx = label.reshape(-1).long()
            if ((idx < 0) | (idx >= NUM_CLASSES)).any():
                raise InvalidArgumentError(f"Labels must lie in [0, {NUM_CLASSES})")
            rows = F.one_hot(idx, NUM_CLASSES).to(like.device, like.dtype)
            if rows.shape[0] == 1 and n > 1:
                rows = rows.expand(n, NUM_CLASSES)
        else:
            raise InvalidArgumentError(f"Unsupported label tensor shape {tuple(label.shape)}")
    else:
        rows = torch.from_numpy(ConditionLabel.parse(label).one_hot()).to(like.device, like.dtype)
        rows = rows.unsqueeze(0).expand(n, NUM_CLASSES)
    if rows.shape[0] != n:
        raise InvalidArgumentError(f"{rows.shape[0]} labels for a batch of {n}")
    return rows


def condition_concat(features, label):
    """
    Appends the label's one-hot entries as constant channels.

    Args:
        features (torch.Tensor): C x H x W, N x C x H x W or N x C.
        label: ConditionLabel, class index, N labels or N x 2 one-hot rows.

    Returns:
        torch.Tensor: Same layout with C + 2 channels.
    """
    if features.dim() == 3:
        rows = _label_rows(label, 1, features)
        planes = rows[0][:, None, None].expand(NUM_CLASSES, *features.shape[1:])
        return torch.cat([features, planes], dim=0)
    if features.dim() == 4:
        rows = _label_rows(label, features.shape[0], features)
        planes = rows[:, :, None, None].expand(-1, -1, *features.shape[2:])
        return torch.cat([features, planes], dim=1)
    if features.dim() == 2:
        return torch.cat([features, _label_rows(label, features.shape[0], features)], dim=1)
    raise InvalidArgumentError(f"Unsupported feature shape {tuple(features.shape)}")


class EqualizedConv2d(nn.Module):
    """Convolution with unit-variance weights rescaled at runtime by the He constant."""

    def __init__(self, in_channels, out_channels, kernel_size, padding=0, gain=math.sqrt(2)):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.scale = gain / math.sqrt(in_channels * kernel_size * kernel_size)
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias, padding=self.padding)


class EqualizedLinear(nn.Module):
    def __init__(self, in_features, out_features, gain=math.sqrt(2)):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.scale = gain / math.sqrt(in_features)

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


class PixelNorm(nn.Module):
    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(dim=1, keepdim=True) + 1e-8)


class MinibatchStdDev(nn.Module):
    """Appends one constant channel holding the mean per-feature standard deviation across the batch."""

    def forward(self, x):
        std = torch.sqrt(x.var(dim=0, unbiased=False) + 1e-8).mean()
        return torch.cat([x, std.expand(x.shape[0], 1, *x.shape[2:])], dim=1)


class ConditionalStack(nn.Module):
    """Runs layers in order, appending label planes to each layer's input except the last one's."""

    def __init__(self, layers, condition_last=False):
        super().__init__()
        self.layers = nn.ModuleList(layers)
        self.condition_last = condition_last

    @property
    def concat_sites(self):
        return len(self.layers) - (0 if self.condition_last else 1)

    def forward(self, x, label):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if i < last or self.condition_last:
                x = condition_concat(x, label)
            x = layer(x)
        return x


def count_concat_sites(module):
    return sum(m.concat_sites for m in module.modules() if isinstance(m, ConditionalStack))


def _conv_unit(in_channels, out_channels, kernel_size=3, pixel_norm=True):
    layers = [EqualizedConv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2), nn.LeakyReLU(0.2)]
    if pixel_norm:
        layers.append(PixelNorm())
    return nn.Sequential(*layers)


class LatentProjection(nn.Module):
    """Latent vector to a 4x4 feature map."""

    def __init__(self, in_features, channels):
        super().__init__()
        self.channels = channels
        self.linear = EqualizedLinear(in_features, channels * 16, gain=math.sqrt(2) / 4)
        self.norm = PixelNorm()

    def forward(self, z):
        x = self.linear(z).view(-1, self.channels, 4, 4)
        return self.norm(F.leaky_relu(x, 0.2))


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

class ProgressiveGenerator(nn.Module):
    """All stages are built up front; `stage` selects how many blocks are active."""

    def __init__(self, cfg: PGANConfig):
        super().__init__()
        self.cfg = cfg
        resolutions = cfg.schedule().resolutions()
        c0 = cfg.channels_at(resolutions[0])
        self.initial = ConditionalStack(
            [LatentProjection(cfg.latent_dim + NUM_CLASSES, c0), _conv_unit(c0 + NUM_CLASSES, c0)],
            condition_last=True)
        self.blocks = nn.ModuleList()
        for prev_res, res in zip(resolutions, resolutions[1:]):
            c_in, c_out = cfg.channels_at(prev_res), cfg.channels_at(res)
            self.blocks.append(ConditionalStack(
                [_conv_unit(c_in + NUM_CLASSES, c_out), _conv_unit(c_out + NUM_CLASSES, c_out)],
                condition_last=True))
        self.to_rgb = nn.ModuleList([EqualizedConv2d(cfg.channels_at(r), 3, 1, gain=1.0) for r in resolutions])

    @property
    def num_stages(self):
        return len(self.to_rgb)

    def forward(self, z, label, stage, alpha=1.0):
        if not 0 <= stage < self.num_stages:
            raise InvalidArgumentError(f"stage must lie in [0, {self.num_stages}), got {stage}")
        x = self.initial(PixelNorm()(z), label)
        prev = x
        for block in self.blocks[:stage]:
            prev = x
            x = block(F.interpolate(x, scale_factor=2, mode="nearest"), label)
        new = self.to_rgb[stage](x)
        if stage == 0 or alpha >= 1.0:
            return new
        old = F.interpolate(self.to_rgb[stage - 1](prev), scale_factor=2, mode="nearest")
        return alpha * new + (1.0 - alpha) * old


class ProgressiveDiscriminator(nn.Module):
    def __init__(self, cfg: PGANConfig):
        super().__init__()
        self.cfg = cfg
        resolutions = cfg.schedule().resolutions()
        self.from_rgb = nn.ModuleList([
            ConditionalStack([_conv_unit(3 + NUM_CLASSES, cfg.channels_at(r), 1, pixel_norm=False)],
                             condition_last=True)
            for r in resolutions])
        self.blocks = nn.ModuleList()
        for prev_res, res in zip(resolutions, resolutions[1:]):
            c_in, c_out = cfg.channels_at(res), cfg.channels_at(prev_res)
            self.blocks.append(ConditionalStack(
                [_conv_unit(c_in + NUM_CLASSES, c_in, pixel_norm=False),
                 _conv_unit(c_in + NUM_CLASSES, c_out, pixel_norm=False)],
                condition_last=True))
        c0 = cfg.channels_at(resolutions[0])
        self.minibatch_std = MinibatchStdDev()
        self.final = ConditionalStack([
            _conv_unit(c0 + 1 + NUM_CLASSES, c0, pixel_norm=False),
            nn.Sequential(EqualizedConv2d(c0 + NUM_CLASSES, c0, 4), nn.LeakyReLU(0.2), nn.Flatten()),
            EqualizedLinear(c0, 1, gain=1.0),
        ])

    def forward(self, x, label, stage, alpha=1.0):
        if not 0 <= stage < len(self.from_rgb):
            raise InvalidArgumentError(f"stage must lie in [0, {len(self.from_rgb)}), got {stage}")
        h = self.from_rgb[stage](x, label)
        if stage > 0:
            h = F.avg_pool2d(self.blocks[stage - 1](h, label), 2)
            if alpha < 1.0:
                old = self.from_rgb[stage - 1](F.avg_pool2d(x, 2), label)
                h = alpha * h + (1.0 - alpha) * old
            for block in reversed(self.blocks[:stage - 1]):
                h = F.avg_pool2d(block(h, label), 2)
        return self.final(self.minibatch_std(h), label).view(-1)


# ---------------------------------------------------------------------------
# WGAN-GP objective
# ---------------------------------------------------------------------------

def gradient_penalty(discriminator, real, fake, label, stage, alpha):
    eps = torch.rand(real.shape[0], 1, 1, 1, device=real.device)
    mixed = (eps * real + (1 - eps) * fake.detach()).requires_grad_(True)
    scores = discriminator(mixed, label, stage, alpha)
    (grad,) = torch.autograd.grad(scores.sum(), mixed, create_graph=True)
    return ((grad.flatten(1).norm(dim=1) - 1) ** 2).mean()


def wgan_gp_d_loss(real_scores, fake_scores, penalty, gp_weight, drift):
    return fake_scores.mean() - real_scores.mean() + gp_weight * penalty + drift * (real_scores ** 2).mean()


def wgan_g_loss(fake_scores):
    return -fake_scores.mean()


def real_at_stage(images, resolution, alpha):
    """Downsamples full-resolution reals to `resolution`, blending with the coarser level during a fade."""
    factor = images.shape[-1] // resolution
    real = F.avg_pool2d(images, factor) if factor > 1 else images
    if alpha >= 1.0:
        return real
    coarse = F.interpolate(F.avg_pool2d(real, 2), scale_factor=2, mode="nearest")
    return alpha * real + (1.0 - alpha) * coarse


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def read_label_file(path):
    """Reads a CSV with columns image_id, diagnosis into {image_id: ConditionLabel}."""
    frame = pd.read_csv(path, dtype=str)
    missing = {"image_id", "diagnosis"} - set(frame.columns)
    if missing:
        raise InvalidArgumentError(f"Label file {path} lacks columns {sorted(missing)}")
    labels = {}
    for image_id, diagnosis in zip(frame["image_id"], frame["diagnosis"]):
        if pd.isna(diagnosis):
            raise InvalidArgumentError(f"Image '{image_id}' has no diagnosis in {path}")
        labels[str(image_id)] = ConditionLabel.parse(diagnosis)
    return labels


def label_counts(n, melanoma_ratio):
    """Splits a sample budget n into per-label counts keeping the given melanoma ratio."""
    if n < 0 or not 0 <= melanoma_ratio <= 1:
        raise InvalidArgumentError(f"Need n >= 0 and ratio in [0, 1], got n={n}, ratio={melanoma_ratio}")
    melanoma = int(math.floor(n * melanoma_ratio + 0.5))
    return {ConditionLabel.BENIGN: n - melanoma, ConditionLabel.MELANOMA: melanoma}


class LabeledImageDataset(Dataset):
    """Square RGB images resized to the target resolution, scaled to [-1, 1], with their class index."""

    def __init__(self, paths, labels, resolution):
        if len(paths) != len(labels):
            raise InvalidArgumentError(f"{len(paths)} images but {len(labels)} labels")
        for path, label in zip(paths, labels):
            if label is None:
                raise InvalidArgumentError(f"Image {path} has no benign/melanoma label")
        self.paths = list(paths)
        self.labels = [int(ConditionLabel.parse(label)) for label in labels]
        self.resolution = resolution

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, idx):
        with Image.open(self.paths[idx]) as img:
            img = img.convert("RGB").resize((self.resolution, self.resolution), Image.BILINEAR)
            pixels = np.asarray(img, dtype=np.float32)
        tensor = torch.from_numpy(pixels).permute(2, 0, 1) / 127.5 - 1.0
        return tensor, self.labels[idx]


def _dataset_labels(dataset):
    if hasattr(dataset, "labels"):
        return list(dataset.labels)
    return [dataset[i][1] for i in range(len(dataset))]


# ---------------------------------------------------------------------------
# Training and sampling
# ---------------------------------------------------------------------------

class ProgressiveTrainer:
    def __init__(self, cfg: PGANConfig, device="cpu"):
        cfg.validate()
        self.cfg = cfg
        self.schedule = cfg.schedule()
        self.device = torch.device(device)
        seed_everything(cfg.seed, cfg.deterministic)
        self.generator = ProgressiveGenerator(cfg).to(self.device)
        self.discriminator = ProgressiveDiscriminator(cfg).to(self.device)
        logging.info(f"Label planes feed {count_concat_sites(self.generator)} generator and "
                     f"{count_concat_sites(self.discriminator)} discriminator layer inputs")
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=cfg.learning_rate, betas=betas)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=cfg.learning_rate, betas=betas)
        self.global_step = 0
        metrics_path = cfg.metrics_path or os.path.join(cfg.checkpoint_dir, "pgan_metrics.jsonl")
        self.metrics = MetricsLog(metrics_path)

    def fingerprint(self):
        payload = json.dumps(self.cfg.model_fields(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def close(self):
        self.metrics.close()

    def train_step(self, images, labels, fade: FadeState):
        resolution = self.schedule.resolutions()[fade.stage]
        images = images.to(self.device, torch.float32)
        labels = torch.as_tensor(labels, device=self.device).long()
        real = real_at_stage(images, resolution, fade.alpha)
        n = real.shape[0]

        for param in self.discriminator.parameters():
            param.requires_grad_(True)
        z = torch.randn(n, self.cfg.latent_dim, device=self.device)
        fake = self.generator(z, labels, fade.stage, fade.alpha).detach()
        real_scores = self.discriminator(real, labels, fade.stage, fade.alpha)
        fake_scores = self.discriminator(fake, labels, fade.stage, fade.alpha)
        penalty = gradient_penalty(self.discriminator, real, fake, labels, fade.stage, fade.alpha)
        d_loss = wgan_gp_d_loss(real_scores, fake_scores, penalty, self.cfg.gp_weight, self.cfg.drift)
        self.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        self.opt_d.step()

        for param in self.discriminator.parameters():
            param.requires_grad_(False)
        z = torch.randn(n, self.cfg.latent_dim, device=self.device)
        g_loss = wgan_g_loss(self.discriminator(self.generator(z, labels, fade.stage, fade.alpha), labels,
                                                fade.stage, fade.alpha))
        self.opt_g.zero_grad(set_to_none=True)
        g_loss.backward()
        self.opt_g.step()
        for param in self.discriminator.parameters():
            param.requires_grad_(True)

        record = {"d_loss": float(d_loss.detach()), "g_loss": float(g_loss.detach()), "gp": float(penalty.detach())}
        if not all(math.isfinite(v) for v in record.values()):
            raise TrainingDivergedError(f"Non-finite PGAN loss at step {self.global_step}: {record}")
        self.global_step += 1
        self.metrics.write({"kind": "step", "step": self.global_step, "stage": fade.stage, "alpha": fade.alpha,
                            **record})
        return record

    def to_checkpoint(self, epoch, stage):
        tensors = {}
        tensors.update(module_arrays("generator", self.generator))
        tensors.update(module_arrays("discriminator", self.discriminator))
        return Checkpoint(
            kind=KIND,
            epoch=epoch,
            fingerprint=self.fingerprint(),
            config={"pgan": asdict(self.cfg)},
            tensors=tensors,
            meta={"stage": stage, "resolution": self.schedule.resolutions()[stage], "global_step": self.global_step},
        )

    def fit(self, dataset):
        if len(dataset) == 0:
            raise InvalidArgumentError("PGAN training dataset is empty")
        for i, label in enumerate(_dataset_labels(dataset)):
            if label is None or int(label) not in (0, 1):
                raise InvalidArgumentError(f"Training image {i} has no benign/melanoma label")
        self.metrics.reset()

        epoch = 0
        ckpt = None
        for stage, resolution in enumerate(self.schedule.resolutions()):
            logging.info(f"PGAN stage {stage}: {resolution}x{resolution}")
            for epoch_in_stage in range(self.schedule.epochs_in_stage(stage)):
                alpha = 1.0 if stage == 0 else fade_alpha(epoch_in_stage, self.schedule)
                fade = FadeState(stage=stage, alpha=alpha)
                loader = DataLoader(dataset, batch_size=self.cfg.batch_size, shuffle=True,
                                    num_workers=self.cfg.loader_workers,
                                    generator=torch.Generator().manual_seed(self.cfg.seed + epoch))
                for images, labels in loader:
                    record = self.train_step(images, labels, fade)
                self.metrics.write({"kind": "epoch", "epoch": epoch, "stage": stage, "alpha": alpha, **record})
                epoch += 1
            ckpt = self.to_checkpoint(epoch - 1, stage)
            save_checkpoint(ckpt, os.path.join(self.cfg.checkpoint_dir, f"pgan_{checkpoint_name(epoch - 1)}"))
        return ckpt


def train_pgan(cfg: PGANConfig, dataset):
    """
    Runs the full progressive schedule.

    Args:
        cfg (PGANConfig): Architecture, schedule and optimizer settings.
        dataset: Items of (3 x target_res x target_res tensor in [-1, 1], class index).

    Returns:
        Checkpoint: Checkpoint at the target resolution.
    """
    trainer = ProgressiveTrainer(cfg)
    try:
        return trainer.fit(dataset)
    finally:
        trainer.close()


def generator_from_checkpoint(ckpt: Checkpoint):
    if ckpt.kind != KIND:
        raise InvalidArgumentError(f"Expected a {KIND} checkpoint, got '{ckpt.kind}'")
    generator = ProgressiveGenerator(PGANConfig(**ckpt.config["pgan"]))
    load_module_arrays("generator", generator, ckpt.tensors)
    generator.eval()
    return generator


def sample_pgan(ckpt: Checkpoint, label, n, seed, batch_size=64):
    """n images of the given label at the checkpoint's resolution; identical for identical seeds."""
    if n < 0:
        raise InvalidArgumentError(f"n must be >= 0, got {n}")
    if n == 0:
        return []
    label = ConditionLabel.parse(label)
    generator = generator_from_checkpoint(ckpt)
    stage = ckpt.meta["stage"]
    rng = torch.Generator().manual_seed(seed)
    z = torch.randn(n, generator.cfg.latent_dim, generator=rng)
    images = []
    with torch.no_grad():
        for start in range(0, n, batch_size):
            chunk = z[start:start + batch_size]
            out = generator(chunk, int(label), stage, 1.0)
            images.extend(to_uint8(image) for image in out)
    return images
