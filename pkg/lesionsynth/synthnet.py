import logging
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from lesionsynth.errors import InvalidArgumentError


@dataclass(frozen=True)
class LayerSpec:
    """One convolution: kernel size k, output channels n, stride s."""
    k: int
    n: int
    s: int

    def __post_init__(self):
        if self.k < 1 or self.n < 1 or self.s < 1:
            raise InvalidArgumentError(f"LayerSpec fields must be >= 1, got {self}")


@dataclass
class GeneratorConfig:
    input_channels: int = 9
    output_channels: int = 3
    base_channels: int = 64
    num_downsamples: int = 4
    num_residual_blocks: int = 9

    def validate(self):
        if self.input_channels < 1 or self.output_channels < 1 or self.base_channels < 1:
            raise InvalidArgumentError(f"Generator channel counts must be >= 1: {self}")
        if self.num_downsamples < 0 or self.num_residual_blocks < 0:
            raise InvalidArgumentError(f"Generator depth counts must be >= 0: {self}")

    @property
    def divisor(self):
        return 2 ** self.num_downsamples

    def layer_specs(self):
        """Ordered convolution specs: input conv, downsamples, residual convs, upsamples, output conv."""
        specs = [LayerSpec(7, self.base_channels, 1)]
        channels = self.base_channels
        for _ in range(self.num_downsamples):
            channels *= 2
            specs.append(LayerSpec(3, channels, 2))
        for _ in range(self.num_residual_blocks):
            specs += [LayerSpec(3, channels, 1), LayerSpec(3, channels, 1)]
        for _ in range(self.num_downsamples):
            channels //= 2
            specs.append(LayerSpec(3, channels, 2))
        specs.append(LayerSpec(7, self.output_channels, 1))
        return specs


@dataclass
class DiscriminatorConfig:
    input_channels: int = 12
    base_channels: int = 64
    num_layers: int = 3
    num_scales: int = 3

    def validate(self):
        if self.input_channels < 1 or self.base_channels < 1:
            raise InvalidArgumentError(f"Discriminator channel counts must be >= 1: {self}")
        if self.num_layers < 1 or self.num_scales < 1:
            raise InvalidArgumentError(f"Discriminator needs num_layers >= 1 and num_scales >= 1: {self}")

    def layer_specs(self):
        """Per-scale patch discriminator: num_layers stride-2 convs, one stride-1 conv, one logit conv."""
        specs = []
        channels = self.base_channels
        for i in range(self.num_layers):
            specs.append(LayerSpec(4, channels, 2))
            channels = min(channels * 2, self.base_channels * 8)
        specs.append(LayerSpec(4, channels, 1))
        specs.append(LayerSpec(4, 1, 1))
        return specs


@dataclass
class ScaleOutput:
    """Intermediate features and patch logits of one discriminator scale."""
    features: list = field(default_factory=list)
    logits: torch.Tensor = None


# FeaturePyramid: list[ScaleOutput], finest scale first


def init_weights(net, std=0.02):
    """Zero-mean Gaussian init for convolution weights, zero biases."""
    def init_func(m):
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    net.apply(init_func)
    return net


class ResnetBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3, bias=False),
            nn.InstanceNorm2d(channels),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3, bias=False),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class GlobalGenerator(nn.Module):
    """Coarse-to-fine global generator: encoder, residual bottleneck, decoder, tanh output."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        specs = iter(cfg.layer_specs())

        first = next(specs)
        layers = [nn.ReflectionPad2d(first.k // 2),
                  nn.Conv2d(cfg.input_channels, first.n, kernel_size=first.k, bias=False),
                  nn.InstanceNorm2d(first.n),
                  nn.ReLU(True)]
        channels = first.n
        for _ in range(cfg.num_downsamples):
            spec = next(specs)
            layers += [nn.Conv2d(channels, spec.n, kernel_size=spec.k, stride=spec.s, padding=1, bias=False),
                       nn.InstanceNorm2d(spec.n),
                       nn.ReLU(True)]
            channels = spec.n
        for _ in range(cfg.num_residual_blocks):
            next(specs)
            next(specs)
            layers.append(ResnetBlock(channels))
        for _ in range(cfg.num_downsamples):
            spec = next(specs)
            layers += [nn.ConvTranspose2d(channels, spec.n, kernel_size=spec.k, stride=spec.s,
                                          padding=1, output_padding=1, bias=False),
                       nn.InstanceNorm2d(spec.n),
                       nn.ReLU(True)]
            channels = spec.n
        last = next(specs)
        layers += [nn.ReflectionPad2d(last.k // 2),
                   nn.Conv2d(channels, last.n, kernel_size=last.k),
                   nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class PatchDiscriminator(nn.Module):
    """Fully convolutional discriminator returning every block's activation plus patch logits."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        specs = cfg.layer_specs()
        padding = 2
        blocks = []
        channels = cfg.input_channels
        for i, spec in enumerate(specs[:-1]):
            conv = nn.Conv2d(channels, spec.n, kernel_size=spec.k, stride=spec.s, padding=padding, bias=(i == 0))
            if i == 0:
                blocks.append(nn.Sequential(conv, nn.LeakyReLU(0.2, True)))
            else:
                blocks.append(nn.Sequential(conv, nn.InstanceNorm2d(spec.n), nn.LeakyReLU(0.2, True)))
            channels = spec.n
        last = specs[-1]
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(channels, last.n, kernel_size=last.k, stride=last.s, padding=padding)

    def forward(self, x):
        features = []
        for block in self.blocks:
            x = block(x)
            features.append(x)
        return ScaleOutput(features=features, logits=self.head(x))


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        self.scales = nn.ModuleList([PatchDiscriminator(cfg) for _ in range(cfg.num_scales)])

    def forward(self, x):
        pyramid = downsample_pyramid(x, levels=len(self.scales))
        return [scale(level) for scale, level in zip(self.scales, pyramid)]


def build_generator(cfg: GeneratorConfig, init_std=0.02):
    cfg.validate()
    net = init_weights(GlobalGenerator(cfg), init_std)
    n_convs = sum(1 for m in net.modules() if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)))
    logging.debug(f"Built global generator with {n_convs} convolutional layers")
    return net


def build_discriminator(cfg: DiscriminatorConfig, init_std=0.02):
    cfg.validate()
    return init_weights(MultiScaleDiscriminator(cfg), init_std)


def generator_forward(g: GlobalGenerator, x):
    """
    Runs the generator after checking the input layout.

    Args:
        g (GlobalGenerator): Generator network.
        x (torch.Tensor): N x C x H x W conditioning batch, H and W divisible by 2**num_downsamples.

    Returns:
        torch.Tensor: N x 3 x H x W images in [-1, 1].
    """
    if x.dim() != 4:
        raise InvalidArgumentError(f"Expected an N x C x H x W batch, got shape {tuple(x.shape)}")
    if x.shape[1] != g.cfg.input_channels:
        raise InvalidArgumentError(f"Generator expects {g.cfg.input_channels} input channels, got {x.shape[1]}")
    divisor = g.cfg.divisor
    if x.shape[2] % divisor or x.shape[3] % divisor:
        raise InvalidArgumentError(f"Spatial size {tuple(x.shape[2:])} is not divisible by {divisor}")
    return g(x)


def _avg_pool_reflect(x):
    return F.avg_pool2d(F.pad(x, (1, 1, 1, 1), mode="reflect"), kernel_size=3, stride=2)


def downsample_pyramid(x, levels=3):
    """
    Returns [x, x/2, x/4, ...] using 3x3 average pooling with stride 2 and reflect padding.

    Accepts C x H x W or N x C x H x W tensors.
    """
    divisor = 2 ** (levels - 1)
    if x.shape[-2] % divisor or x.shape[-1] % divisor:
        raise InvalidArgumentError(f"Spatial size {tuple(x.shape[-2:])} is not divisible by {divisor}")
    unbatched = x.dim() == 3
    current = x.unsqueeze(0) if unbatched else x
    pyramid = [current]
    for _ in range(levels - 1):
        current = _avg_pool_reflect(current)
        pyramid.append(current)
    return [level.squeeze(0) for level in pyramid] if unbatched else pyramid


def discriminator_forward(d: MultiScaleDiscriminator, cond, img):
    """
    Scores a (conditioning, image) pair at every scale.

    Returns:
        list[ScaleOutput]: Finest scale first.
    """
    if cond.dim() != 4 or img.dim() != 4:
        raise InvalidArgumentError("Discriminator inputs must be N x C x H x W batches")
    if cond.shape[0] != img.shape[0] or cond.shape[2:] != img.shape[2:]:
        raise InvalidArgumentError(f"Conditioning {tuple(cond.shape)} and image {tuple(img.shape)} are not aligned")
    x = torch.cat([cond, img], dim=1)
    if x.shape[1] != d.cfg.input_channels:
        raise InvalidArgumentError(f"Discriminator expects {d.cfg.input_channels} channels, got {x.shape[1]}")
    return d(x)
