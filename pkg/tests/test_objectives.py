import pytest
import torch

from lesionsynth.errors import InvalidArgumentError
from lesionsynth.objectives import (LossWeights, feature_matching, lsgan_d_loss, lsgan_d_terms, lsgan_g_loss,
                                    total_losses)
from lesionsynth.synthnet import ScaleOutput


def _pyramid(value, scales=3, layers=2, shape=(1, 2, 4, 4)):
    return [ScaleOutput(features=[torch.full(shape, float(value)) for _ in range(layers)],
                        logits=torch.full((1, 1, 3, 3), float(value)))
            for _ in range(scales)]


def test_discriminator_loss_is_zero_for_perfect_scores():
    assert float(lsgan_d_loss(_pyramid(1), _pyramid(0))) == 0.0


def test_discriminator_terms_sum_over_scales():
    d_real, d_fake = lsgan_d_terms(_pyramid(0), _pyramid(1))
    assert float(d_real) == pytest.approx(3 * 0.5)
    assert float(d_fake) == pytest.approx(3 * 0.5)


def test_generator_loss_counts_each_scale():
    assert float(lsgan_g_loss(_pyramid(1))) == 0.0
    assert float(lsgan_g_loss(_pyramid(0))) == pytest.approx(3.0)


def test_feature_matching_averages_layers_and_sums_scales():
    assert float(feature_matching(_pyramid(0), _pyramid(1))) == pytest.approx(3.0)
    assert float(feature_matching(_pyramid(0.5, layers=4), _pyramid(0.5, layers=4))) == 0.0


def test_feature_matching_treats_real_features_as_constants():
    real = [[torch.randn(1, 2, 4, 4, requires_grad=True)]]
    fake = [[torch.randn(1, 2, 4, 4, requires_grad=True)]]
    feature_matching(real, fake).backward()
    assert real[0][0].grad is None
    assert fake[0][0].grad is not None


def test_generator_total_has_no_gradient_through_real_features():
    real_feature = torch.randn(1, 2, 4, 4, requires_grad=True)
    fake_feature = torch.randn(1, 2, 4, 4, requires_grad=True)
    real = [ScaleOutput(features=[real_feature], logits=torch.zeros(1, 1, 3, 3))]
    fake = [ScaleOutput(features=[fake_feature], logits=torch.zeros(1, 1, 3, 3))]

    terms = total_losses(real, fake, LossWeights(lambda_fm=10.0))
    real_grad, fake_grad = torch.autograd.grad(terms.g_total, (real_feature, fake_feature), allow_unused=True)

    assert real_grad is None
    assert fake_grad is not None and float(fake_grad.abs().sum()) > 0


def test_feature_matching_rejects_scale_mismatch():
    with pytest.raises(InvalidArgumentError):
        feature_matching(_pyramid(0, scales=2), _pyramid(0, scales=3))


def test_total_losses_weights_feature_matching():
    terms = total_losses(_pyramid(0), _pyramid(1), LossWeights(lambda_fm=10.0))
    report = terms.report()

    assert report.g_gan == 0.0
    assert report.g_fm == pytest.approx(3.0)
    assert float(terms.g_total) == pytest.approx(30.0)
    assert float(terms.d_total) == pytest.approx(report.d_real + report.d_fake)
    assert report.is_finite()


def test_loss_weights_reject_negative_lambda():
    with pytest.raises(InvalidArgumentError) as excinfo:
        LossWeights(lambda_fm=-1.0)
    assert excinfo.value.field == "lambda_fm"


def test_losses_have_analytic_gradients():
    torch.manual_seed(0)
    real = torch.randn(1, 4, 4, dtype=torch.float64)
    fake = torch.randn(1, 4, 4, dtype=torch.float64, requires_grad=True)
    real_logits = torch.randn(1, 4, 4, dtype=torch.float64)

    assert torch.autograd.gradcheck(lambda f: feature_matching([[real]], [[f]]), (fake,),
                                    eps=1e-6, atol=1e-8, rtol=1e-4)
    assert torch.autograd.gradcheck(lambda f: lsgan_g_loss([f]), (fake,), eps=1e-6, atol=1e-8, rtol=1e-4)
    assert torch.autograd.gradcheck(lambda f: lsgan_d_loss([real_logits], [f]), (fake,),
                                    eps=1e-6, atol=1e-8, rtol=1e-4)
