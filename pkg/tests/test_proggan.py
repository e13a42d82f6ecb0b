import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image
from torch.utils.data import TensorDataset

from lesionsynth import proggan
from lesionsynth.errors import InvalidArgumentError
from lesionsynth.proggan import ConditionLabel, ResolutionSchedule


def _small_config(tmp_path, **overrides):
    values = dict(latent_dim=8, fmap_base=64, fmap_max=16, start_res=4, target_res=8, fade_epochs=2,
                  stable_epochs=0, initial_stable_epochs=1, batch_size=4, seed=5,
                  checkpoint_dir=str(tmp_path / "pgan"))
    values.update(overrides)
    return proggan.PGANConfig(**values)


# --- schedule ----------------------------------------------------------------

def test_fade_alpha_ramps_over_the_fade_epochs():
    schedule = ResolutionSchedule()
    assert proggan.fade_alpha(0, schedule) == pytest.approx(1 / 30)
    assert proggan.fade_alpha(29, schedule) == 1.0
    assert proggan.fade_alpha(45, schedule) == 1.0


def test_fade_alpha_rejects_epochs_outside_the_stage():
    with pytest.raises(InvalidArgumentError):
        proggan.fade_alpha(60, ResolutionSchedule())


def test_default_schedule_grows_from_4_to_256():
    schedule = ResolutionSchedule()
    assert schedule.resolutions() == [4, 8, 16, 32, 64, 128, 256]
    assert schedule.total_epochs == 30 + 6 * 60


@pytest.mark.parametrize("target_res", [6, 512])
def test_schedule_rejects_bad_target(target_res):
    with pytest.raises(InvalidArgumentError) as excinfo:
        ResolutionSchedule(target_res=target_res).validate()
    assert excinfo.value.field == "target_res"


def test_channels_shrink_with_resolution():
    cfg = proggan.PGANConfig()
    assert cfg.channels_at(4) == 512
    assert cfg.channels_at(64) == 256
    assert cfg.channels_at(256) == 64


# --- labels ----------------------------------------------------------------

@pytest.mark.parametrize("value,expected", [("melanoma", ConditionLabel.MELANOMA), ("Benign", ConditionLabel.BENIGN),
                                            (1, ConditionLabel.MELANOMA), ("0", ConditionLabel.BENIGN)])
def test_parse_label(value, expected):
    assert ConditionLabel.parse(value) is expected


def test_parse_rejects_unknown_label():
    with pytest.raises(InvalidArgumentError):
        ConditionLabel.parse("nevus")


def test_label_counts_keep_ratio():
    assert proggan.label_counts(10, 0.25) == {ConditionLabel.BENIGN: 7, ConditionLabel.MELANOMA: 3}
    assert proggan.label_counts(0, 0.5) == {ConditionLabel.BENIGN: 0, ConditionLabel.MELANOMA: 0}


def test_read_label_file(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("image_id,diagnosis\nISIC_0000001,melanoma\nISIC_0000002,benign\n")
    assert proggan.read_label_file(str(path)) == {"ISIC_0000001": ConditionLabel.MELANOMA,
                                                  "ISIC_0000002": ConditionLabel.BENIGN}


def test_labeled_dataset_requires_every_label(tmp_path):
    with pytest.raises(InvalidArgumentError):
        proggan.LabeledImageDataset(["a.png", "b.png"], ["melanoma", None], 8)


def test_labeled_dataset_scales_images(tmp_path):
    path = tmp_path / "x.png"
    Image.fromarray(np.full((20, 20, 3), 255, dtype=np.uint8)).save(path)
    image, label = proggan.LabeledImageDataset([str(path)], ["melanoma"], 8)[0]
    assert image.shape == (3, 8, 8)
    assert torch.allclose(image, torch.ones_like(image))
    assert label == 1


# --- conditioning ------------------------------------------------------------

def test_condition_concat_adds_two_constant_planes():
    features = torch.zeros(2, 5, 4, 4)
    out = proggan.condition_concat(features, ConditionLabel.MELANOMA)

    assert out.shape == (2, 7, 4, 4)
    assert torch.all(out[:, 5] == 0)
    assert torch.all(out[:, 6] == 1)


def test_condition_concat_accepts_per_sample_labels():
    out = proggan.condition_concat(torch.zeros(2, 3), torch.tensor([0, 1]))
    assert out[:, 3:].tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_conditional_stack_skips_the_last_layer():
    stack = proggan.ConditionalStack([nn.Identity() for _ in range(5)])
    out = stack(torch.zeros(1, 3, 2, 2), ConditionLabel.BENIGN)

    assert stack.concat_sites == 4
    assert out.shape[1] == 3 + 4 * proggan.NUM_CLASSES


def test_last_discriminator_layer_is_unconditioned(tmp_path):
    d = proggan.ProgressiveDiscriminator(_small_config(tmp_path))
    assert d.final.concat_sites == len(d.final.layers) - 1
    assert isinstance(d.final.layers[-1], proggan.EqualizedLinear)
    assert proggan.count_concat_sites(d) > 0


# --- networks ----------------------------------------------------------------

def test_generator_output_resolution_per_stage(tmp_path):
    torch.manual_seed(0)
    g = proggan.ProgressiveGenerator(_small_config(tmp_path))
    z = torch.randn(3, 8)
    assert g(z, ConditionLabel.BENIGN, 0).shape == (3, 3, 4, 4)
    assert g(z, ConditionLabel.BENIGN, 1).shape == (3, 3, 8, 8)


def test_generator_blend_endpoints(tmp_path):
    torch.manual_seed(0)
    g = proggan.ProgressiveGenerator(_small_config(tmp_path))
    z = torch.randn(2, 8)
    with torch.no_grad():
        coarse = F.interpolate(g(z, ConditionLabel.MELANOMA, 0), scale_factor=2, mode="nearest")
        at_zero = g(z, ConditionLabel.MELANOMA, 1, alpha=0.0)
        at_one = g(z, ConditionLabel.MELANOMA, 1, alpha=1.0)
        nearly_one = g(z, ConditionLabel.MELANOMA, 1, alpha=1.0 - 1e-7)

    assert torch.allclose(at_zero, coarse, atol=1e-6)
    assert torch.allclose(nearly_one, at_one, atol=1e-6)


def test_discriminator_scores_each_image(tmp_path):
    torch.manual_seed(0)
    d = proggan.ProgressiveDiscriminator(_small_config(tmp_path))
    labels = torch.tensor([0, 1, 1])
    assert d(torch.randn(3, 3, 4, 4), labels, 0).shape == (3,)
    assert d(torch.randn(3, 3, 8, 8), labels, 1, alpha=0.5).shape == (3,)


def test_stage_out_of_range_is_rejected(tmp_path):
    g = proggan.ProgressiveGenerator(_small_config(tmp_path))
    with pytest.raises(InvalidArgumentError):
        g(torch.randn(1, 8), 0, 2)


def test_real_at_stage_downsamples_to_the_active_resolution():
    images = torch.arange(64, dtype=torch.float32).view(1, 1, 8, 8).expand(1, 3, 8, 8)
    real = proggan.real_at_stage(images, 4, 1.0)
    assert real.shape == (1, 3, 4, 4)
    assert torch.allclose(real, F.avg_pool2d(images, 2))


def test_gradient_penalty_is_finite(tmp_path):
    torch.manual_seed(0)
    d = proggan.ProgressiveDiscriminator(_small_config(tmp_path))
    real, fake = torch.randn(2, 3, 4, 4), torch.randn(2, 3, 4, 4)
    penalty = proggan.gradient_penalty(d, real, fake, torch.tensor([0, 1]), 0, 1.0)
    assert torch.isfinite(penalty)
    assert float(penalty) >= 0


# --- training and sampling ---------------------------------------------------

def _toy_images(n=8, res=8):
    torch.manual_seed(1)
    images = torch.rand(n, 3, res, res) * 2 - 1
    labels = torch.tensor([i % 2 for i in range(n)])
    return TensorDataset(images, labels)


def test_train_pgan_runs_every_stage(tmp_path):
    cfg = _small_config(tmp_path)
    ckpt = proggan.train_pgan(cfg, _toy_images())

    assert ckpt.kind == proggan.KIND
    assert ckpt.meta["stage"] == 1
    assert ckpt.meta["resolution"] == 8
    assert ckpt.epoch == 2
    assert (tmp_path / "pgan" / "pgan_epoch_0000.ckpt").exists()
    assert (tmp_path / "pgan" / "pgan_epoch_0002.ckpt").exists()
    assert (tmp_path / "pgan" / "pgan_metrics.jsonl").exists()


def test_sampling_is_reproducible(tmp_path):
    ckpt = proggan.train_pgan(_small_config(tmp_path), _toy_images())

    first = proggan.sample_pgan(ckpt, "melanoma", 3, seed=11)
    second = proggan.sample_pgan(ckpt, ConditionLabel.MELANOMA, 3, seed=11)

    assert len(first) == 3
    assert first[0].shape == (8, 8, 3)
    assert first[0].dtype == np.uint8
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)
    assert proggan.sample_pgan(ckpt, "benign", 0, seed=11) == []
