import math
from dataclasses import asdict, dataclass

import torch

import config
from lesionsynth.errors import InvalidArgumentError


@dataclass
class LossWeights:
    lambda_fm: float = config.LAMBDA_FM

    def __post_init__(self):
        if not math.isfinite(self.lambda_fm) or self.lambda_fm < 0:
            raise InvalidArgumentError(f"lambda_fm must be finite and >= 0, got {self.lambda_fm}", field="lambda_fm")


@dataclass
class LossReport:
    g_gan: float
    g_fm: float
    d_real: float
    d_fake: float

    def is_finite(self):
        return all(math.isfinite(v) for v in asdict(self).values())

    def as_record(self):
        return asdict(self)


@dataclass
class LossTerms:
    """Tensor-valued loss components; totals keep the autograd graph."""
    g_gan: torch.Tensor
    g_fm: torch.Tensor
    d_real: torch.Tensor
    d_fake: torch.Tensor
    g_total: torch.Tensor
    d_total: torch.Tensor

    def report(self):
        return LossReport(
            g_gan=float(self.g_gan.detach()),
            g_fm=float(self.g_fm.detach()),
            d_real=float(self.d_real.detach()),
            d_fake=float(self.d_fake.detach()),
        )


def _logits_of(pyramid):
    return [scale.logits if hasattr(scale, "logits") else scale for scale in pyramid]


def _features_of(pyramid):
    return [scale.features if hasattr(scale, "features") else scale for scale in pyramid]


def lsgan_d_terms(real_logits, fake_logits):
    """Returns (real term, fake term) of the least-squares discriminator loss, each summed over scales."""
    real_logits, fake_logits = _logits_of(real_logits), _logits_of(fake_logits)
    if len(real_logits) != len(fake_logits):
        raise InvalidArgumentError(f"Scale count mismatch: {len(real_logits)} real vs {len(fake_logits)} fake")
    d_real = sum(0.5 * ((r - 1) ** 2).mean() for r in real_logits)
    d_fake = sum(0.5 * (f ** 2).mean() for f in fake_logits)
    return d_real, d_fake


def lsgan_d_loss(real_logits, fake_logits):
    """0.5*mean((real-1)^2) + 0.5*mean(fake^2), summed over scales."""
    d_real, d_fake = lsgan_d_terms(real_logits, fake_logits)
    return d_real + d_fake


def lsgan_g_loss(fake_logits):
    """mean((fake-1)^2), summed over scales."""
    return sum(((f - 1) ** 2).mean() for f in _logits_of(fake_logits))


def feature_matching(real_feats, fake_feats):
    """
    L1 feature-matching loss between discriminator activations.

    Per layer the mean absolute difference is taken, layers of a scale are
    averaged and scales are summed. Real features are treated as constants.

    Args:
        real_feats: Feature pyramid of the real pair (ScaleOutputs or lists of tensors).
        fake_feats: Feature pyramid of the synthetic pair, same structure.

    Returns:
        torch.Tensor: Scalar loss.
    """
    real_feats, fake_feats = _features_of(real_feats), _features_of(fake_feats)
    if len(real_feats) != len(fake_feats):
        raise InvalidArgumentError(f"Scale count mismatch: {len(real_feats)} vs {len(fake_feats)}")
    total = 0.0
    for scale, (real_layers, fake_layers) in enumerate(zip(real_feats, fake_feats)):
        if len(real_layers) != len(fake_layers):
            raise InvalidArgumentError(f"Scale {scale}: {len(real_layers)} vs {len(fake_layers)} feature layers")
        if not real_layers:
            continue
        scale_loss = 0.0
        for real, fake in zip(real_layers, fake_layers):
            if real.shape != fake.shape:
                raise InvalidArgumentError(f"Scale {scale}: feature shapes {tuple(real.shape)} vs {tuple(fake.shape)}")
            scale_loss = scale_loss + (real.detach() - fake).abs().mean()
        total = total + scale_loss / len(real_layers)
    if not torch.is_tensor(total):
        total = torch.tensor(0.0)
    return total


def total_losses(real_feats, fake_feats, weights: LossWeights):
    """
    Combines adversarial and feature-matching terms for one (real, fake) pyramid pair.

    g_total = g_gan + lambda_fm * g_fm; d_total = d_real + d_fake.
    """
    d_real, d_fake = lsgan_d_terms(real_feats, fake_feats)
    g_gan = lsgan_g_loss(fake_feats)
    g_fm = feature_matching(real_feats, fake_feats)
    return LossTerms(
        g_gan=g_gan,
        g_fm=g_fm,
        d_real=d_real,
        d_fake=d_fake,
        g_total=g_gan + weights.lambda_fm * g_fm,
        d_total=d_real + d_fake,
    )
