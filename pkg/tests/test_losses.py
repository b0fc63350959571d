"""Loss closed forms, elementwise oracles, finite-difference gradient checks,
and the spectral discriminator."""

import numpy as np
import pytest
import torch

from usrcodec.errors import ConfigError, ShapeError
from usrcodec.losses import (
    DiscriminatorConfig,
    LossBreakdown,
    LossWeights,
    SpectralDiscriminator,
    adversarial_losses,
    compose_objective,
    feature_matching_loss,
    full_recon_loss,
    subband_recon_loss,
)
from usrcodec.quantize import commitment_loss


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.alpha_low, w.alpha_high) == (2.0, 1.0)
        assert (w.lambda_sr, w.lambda_disc, w.lambda_adv, w.lambda_fm, w.lambda_cm) == (
            15.0, 1.0, 1.0, 1.0, 1.0,
        )

    def test_validation(self):
        with pytest.raises(ConfigError):
            LossWeights(alpha_low=-1.0)
        with pytest.raises(ConfigError):
            LossWeights(alpha_low=0.0, alpha_high=0.0)

    def test_dict_roundtrip(self):
        w = LossWeights(alpha_low=3.0, lambda_sr=10.0)
        assert LossWeights.from_dict(w.to_dict()) == w


class TestSubbandLoss:
    def test_closed_form(self):
        x = torch.zeros(4, 2, dtype=torch.float64)
        x_hat = torch.zeros(4, 2, dtype=torch.float64)
        x_hat[:2] = 0.3
        x_hat[2:] = 0.6
        val = float(subband_recon_loss(x, x_hat))
        assert abs(val - (2 * 0.3 + 1 * 0.6) / 3) < 1e-15

    def test_elementwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m, t = 2 * rng.integers(1, 9), rng.integers(1, 9)
            a = rng.standard_normal((m, t))
            b = rng.standard_normal((m, t))
            w = LossWeights(alpha_low=float(rng.uniform(0.1, 5)),
                            alpha_high=float(rng.uniform(0.1, 5)))
            half = m // 2
            low = np.abs(a[:half] - b[:half]).mean()
            high = np.abs(a[half:] - b[half:]).mean()
            expected = (w.alpha_low * low + w.alpha_high * high) / (w.alpha_low + w.alpha_high)
            got = float(subband_recon_loss(torch.from_numpy(a), torch.from_numpy(b), w))
            assert abs(got - expected) < 1e-12

    def test_batched_axis_is_second_to_last(self):
        rng = np.random.default_rng(1)
        a = torch.from_numpy(rng.standard_normal((2, 1, 6, 4)))
        b = torch.from_numpy(rng.standard_normal((2, 1, 6, 4)))
        got = float(subband_recon_loss(a, b))
        low = (a - b).abs()[:, :, :3, :].mean()
        high = (a - b).abs()[:, :, 3:, :].mean()
        assert abs(got - float((2 * low + high) / 3)) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = torch.from_numpy(rng.standard_normal((8, 5)))
        b = torch.from_numpy(rng.standard_normal((8, 5)))
        assert float(subband_recon_loss(a, b)) == float(subband_recon_loss(b, a))

    def test_equal_alphas_collapse_to_full_mae(self):
        rng = np.random.default_rng(3)
        a = torch.from_numpy(rng.standard_normal((10, 7)))
        b = torch.from_numpy(rng.standard_normal((10, 7)))
        w = LossWeights(alpha_low=1.0, alpha_high=1.0)
        assert abs(
            float(subband_recon_loss(a, b, w)) - float(full_recon_loss(a, b))
        ) < 1e-12

    def test_identical_grids_zero(self):
        a = torch.randn(6, 4, dtype=torch.float64)
        assert float(subband_recon_loss(a, a.clone())) == 0.0

    def test_errors(self):
        with pytest.raises(ConfigError):
            subband_recon_loss(torch.zeros(5, 4), torch.zeros(5, 4))
        with pytest.raises(ShapeError):
            subband_recon_loss(torch.zeros(4, 4), torch.zeros(4, 5))
        with pytest.raises(ShapeError):
            subband_recon_loss("grid", torch.zeros(4, 4))


class TestAdversarialAndFeatureLosses:
    def test_lsgan_closed_form(self):
        real = torch.full((3, 3), 0.5, dtype=torch.float64)
        fake = torch.full((3, 3), 0.5, dtype=torch.float64)
        l_disc, l_adv = adversarial_losses(real, fake)
        assert abs(float(l_disc) - 0.5) < 1e-15
        assert abs(float(l_adv) - 0.25) < 1e-15

    def test_perfect_discriminator(self):
        l_disc, l_adv = adversarial_losses(torch.ones(4), torch.zeros(4))
        assert float(l_disc) == 0.0
        assert float(l_adv) == 1.0

    def test_elementwise_oracle(self):
        rng = np.random.default_rng(4)
        real = rng.standard_normal((2, 1, 5, 5))
        fake = rng.standard_normal((2, 1, 5, 5))
        l_disc, l_adv = adversarial_losses(torch.from_numpy(real), torch.from_numpy(fake))
        assert abs(float(l_disc) - (((real - 1) ** 2).mean() + (fake**2).mean())) < 1e-12
        assert abs(float(l_adv) - ((fake - 1) ** 2).mean()) < 1e-12

    def test_feature_matching_closed_form(self):
        real = [torch.zeros(1, 2, 4, 4, dtype=torch.float64),
                torch.zeros(1, 4, 2, 2, dtype=torch.float64)]
        fake = [torch.full_like(real[0], 0.1), torch.full_like(real[1], 0.3)]
        got = float(feature_matching_loss(real, fake))
        assert abs(got - (0.1 + 0.3) / 2) < 1e-15

    def test_feature_matching_detaches_real(self):
        real = [torch.randn(1, 2, 3, 3, dtype=torch.float64, requires_grad=True)]
        fake = [torch.randn(1, 2, 3, 3, dtype=torch.float64, requires_grad=True)]
        feature_matching_loss(real, fake).backward()
        assert real[0].grad is None
        assert fake[0].grad is not None

    def test_feature_matching_errors(self):
        a = [torch.zeros(1, 2, 3, 3)]
        with pytest.raises(ShapeError):
            feature_matching_loss(a, [])
        with pytest.raises(ShapeError):
            feature_matching_loss([], [])
        with pytest.raises(ShapeError):
            feature_matching_loss(a, [torch.zeros(1, 2, 3, 4)])


class TestCompose:
    def test_all_ones(self):
        out = compose_objective(1.0, 1.0, 1.0, 1.0, 1.0)
        assert out.total == 19.0

    def test_mixed_closed_form(self):
        out = compose_objective(0.4, 0.5, 0.25, 0.3, 0.1)
        assert abs(out.total - (15 * 0.4 + 0.5 + 0.25 + 0.3 + 0.1)) < 1e-15

    def test_random_tuples_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            parts = rng.uniform(0, 10, size=5)
            w = LossWeights()
            out = compose_objective(*parts, weights=w)
            expected = (
                w.lambda_sr * parts[0] + w.lambda_disc * parts[1]
                + w.lambda_adv * parts[2] + w.lambda_fm * parts[3]
                + w.lambda_cm * parts[4]
            )
            assert out.total == expected

    def test_is_finite(self):
        assert compose_objective(1, 1, 1, 1, 1).is_finite()
        assert not compose_objective(float("nan"), 0, 0, 0, 0).is_finite()
        assert not compose_objective(float("inf"), 0, 0, 0, 0).is_finite()

    def test_breakdown_dict(self):
        d = compose_objective(1.0, 2.0, 3.0, 4.0, 5.0).to_dict()
        assert set(d) == {"l_sr", "l_disc", "l_adv", "l_fm", "l_cm", "total"}


def fd_gradient(f, x0: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    base = x0.copy().reshape(-1)
    for i in range(base.size):
        up = base.copy()
        up[i] += eps
        down = base.copy()
        down[i] -= eps
        flat[i] = (f(up.reshape(x0.shape)) - f(down.reshape(x0.shape))) / (2 * eps)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


class TestGradientChecks:
    """Analytic (autograd) vs central finite differences, double precision."""

    def test_subband_grad(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((6, 5))
        x_hat0 = rng.standard_normal((6, 5))
        t = torch.from_numpy(x_hat0.copy()).requires_grad_(True)
        subband_recon_loss(torch.from_numpy(x), t).backward()

        def f(v):
            return float(subband_recon_loss(torch.from_numpy(x), torch.from_numpy(v)))

        assert rel_err(t.grad.numpy(), fd_gradient(f, x_hat0)) < 1e-4

    def test_adv_grad_through_discriminator(self):
        torch.manual_seed(0)
        cfg = DiscriminatorConfig(stages=((4, 3, 2), (8, 3, 2)))
        disc = SpectralDiscriminator(cfg).double()
        rng = np.random.default_rng(11)
        x0 = rng.standard_normal((1, 1, 8, 8))

        t = torch.from_numpy(x0.copy()).requires_grad_(True)
        _, l_adv = adversarial_losses(torch.zeros(1, dtype=torch.float64), disc(t)[0])
        l_adv.backward()

        def f(v):
            with torch.no_grad():
                logits, _ = disc(torch.from_numpy(v))
            return float(((logits - 1.0) ** 2).mean())

        assert rel_err(t.grad.numpy(), fd_gradient(f, x0)) < 1e-4

    def test_fm_grad_through_discriminator(self):
        torch.manual_seed(1)
        cfg = DiscriminatorConfig(stages=((4, 3, 2), (8, 3, 2)))
        disc = SpectralDiscriminator(cfg).double()
        rng = np.random.default_rng(12)
        x_real = torch.from_numpy(rng.standard_normal((1, 1, 8, 8)))
        x0 = rng.standard_normal((1, 1, 8, 8))
        _, real_feats = disc(x_real)

        t = torch.from_numpy(x0.copy()).requires_grad_(True)
        feature_matching_loss(real_feats, disc(t)[1]).backward()

        def f(v):
            _, fake_feats = disc(torch.from_numpy(v))
            return float(feature_matching_loss(real_feats, fake_feats).detach())

        assert rel_err(t.grad.numpy(), fd_gradient(f, x0)) < 1e-4

    def test_commitment_grads_respect_stopgrad(self):
        rng = np.random.default_rng(13)
        z0 = rng.standard_normal((7, 4))
        q0 = rng.standard_normal((7, 4))
        z = torch.from_numpy(z0.copy()).requires_grad_(True)
        q = torch.from_numpy(q0.copy()).requires_grad_(True)
        commitment_loss(z, q).backward()

        # Only the encoder-side term sees z; the code-side term's z is a
        # pinned constant, so the finite-difference target for z varies the
        # encoder term alone (and symmetrically for q).
        def f_z(v):
            return float((((torch.from_numpy(v) - torch.from_numpy(q0)) ** 2)
                          .sum(dim=-1).mean()))

        def f_q(v):
            return float((((torch.from_numpy(z0) - torch.from_numpy(v)) ** 2)
                          .sum(dim=-1).mean()))

        assert rel_err(z.grad.numpy(), fd_gradient(f_z, z0)) < 1e-4
        assert rel_err(q.grad.numpy(), fd_gradient(f_q, q0)) < 1e-4


class TestDiscriminator:
    def test_feature_pyramid_shapes(self):
        torch.manual_seed(0)
        disc = SpectralDiscriminator()
        logits, feats = disc(torch.randn(1, 1, 128, 128))
        assert [tuple(f.shape) for f in feats] == [
            (1, 32, 64, 64), (1, 64, 32, 32), (1, 128, 16, 16), (1, 256, 8, 8),
        ]
        assert tuple(logits.shape) == (1, 1, 8, 8)

    def test_rejects_bad_input(self):
        disc = SpectralDiscriminator()
        with pytest.raises(ShapeError):
            disc(torch.randn(1, 2, 16, 16))
        with pytest.raises(ShapeError):
            disc(torch.randn(1, 16, 16))

    def test_zero_weights_zero_everything(self):
        torch.manual_seed(0)
        disc = SpectralDiscriminator()
        with torch.no_grad():
            for module in list(disc.convs) + [disc.head]:
                # weight_norm stores magnitude in original0; zeroing it (and
                # the bias) zeroes the effective kernel without 0/0 issues.
                module.parametrizations.weight.original0.zero_()
                module.bias.zero_()
        with torch.no_grad():
            logits, feats = disc(torch.randn(2, 1, 32, 32))
        assert float(logits.abs().max()) == 0.0
        assert all(float(f.abs().max()) == 0.0 for f in feats)

    def test_single_stage_hand_oracle(self):
        torch.manual_seed(2)
        cfg = DiscriminatorConfig(stages=((3, 3, 2),))
        disc = SpectralDiscriminator(cfg)
        x_val = 0.37
        x = torch.full((1, 1, 1, 1), x_val)
        logits, feats = disc(x)
        # stride-2 pad-1 conv on one pixel: only the center tap fires
        w1 = disc.convs[0].weight.detach().numpy()[:, 0, 1, 1]
        b1 = disc.convs[0].bias.detach().numpy()
        pre = w1 * x_val + b1
        act = np.where(pre >= 0, pre, cfg.leaky_slope * pre)
        np.testing.assert_allclose(feats[0].detach().numpy().reshape(3), act, atol=1e-6)
        w2 = disc.head.weight.detach().numpy()[0, :, 1, 1]
        b2 = disc.head.bias.detach().item()
        np.testing.assert_allclose(
            logits.detach().item(), float(w2 @ act + b2), atol=1e-6
        )

    def test_config_validation_and_roundtrip(self):
        with pytest.raises(ConfigError):
            DiscriminatorConfig(stages=())
        with pytest.raises(ConfigError):
            DiscriminatorConfig(stages=((0, 3, 2),))
        cfg = DiscriminatorConfig(stages=((8, 3, 2), (16, 5, 1)))
        assert DiscriminatorConfig.from_dict(cfg.to_dict()) == cfg
