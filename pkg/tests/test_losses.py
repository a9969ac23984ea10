import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ganlab import autodiff as ad
from ganlab.autodiff import Tensor
from ganlab.losses import (
    CROSS_ENTROPY,
    LEAST_SQUARES,
    ConfigError,
    DistanceKind,
    DObjective,
    Family,
    GLossSpec,
    LabelConvention,
    Sided,
    Target,
    check_pairing,
    d_objective,
    distance,
    g_loss,
    gradient_penalty,
    labels_for,
    penalty_at,
    wgan_gp,
)
from ganlab.nets import MlpParams, MlpSpec, build_mlp

CE_LABELS = labels_for(CROSS_ENTROPY)
positive = st.floats(1e-3, 10.0)
column = arrays(np.float64, (6, 1), elements=st.floats(0.01, 0.99))


def col(*values):
    return Tensor(np.array(values, dtype=np.float64).reshape(-1, 1))


def linear_critic(w) -> tuple[MlpParams, MlpSpec]:
    """Piecewise-linear MLP that computes x @ w exactly (identity hidden layers, positive region)."""
    spec = MlpSpec(2, (2, 2, 2), 1, leaky_slope=1.0)
    eye = np.eye(2)
    return MlpParams([eye, eye, eye, np.asarray(w, dtype=np.float64).reshape(2, 1)], [np.zeros((1, n)) for n in (2, 2, 2, 1)]), spec


class TestDObjective:
    def test_cross_entropy_equilibrium(self):
        half = col(0.5, 0.5, 0.5)
        assert d_objective(CROSS_ENTROPY, half, half).item() == pytest.approx(-math.log(4), abs=1e-15)

    def test_least_squares_perfect(self):
        assert d_objective(LEAST_SQUARES, col(1.0, 1.0), col(0.0, 0.0)).item() == 0.0

    def test_wasserstein_equal(self):
        x = col(0.3, -2.0, 5.0)
        assert d_objective(wgan_gp(), x, x).item() == 0.0

    def test_cross_entropy_domain(self):
        with pytest.raises(ad.DomainError):
            d_objective(CROSS_ENTROPY, col(0.0), col(0.5))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            DObjective("Hinge")
        with pytest.raises(ConfigError):
            wgan_gp(0.0)
        with pytest.raises(ConfigError):
            DObjective("WassersteinGP", 10.0, "ThreeSided")

    def test_dict_round_trip(self):
        for obj in (CROSS_ENTROPY, LEAST_SQUARES, wgan_gp(5.0, Sided.TWO)):
            assert DObjective.from_dict(obj.to_dict()) == obj
        assert wgan_gp(10.0, "OneSided").label() == "WassersteinGP(10,OneSided)"


class TestPenalty:
    x_hat = np.random.default_rng(0).uniform(0.5, 2.0, size=(6, 2))  # positive: the critic stays linear

    @pytest.mark.parametrize("sided", list(Sided))
    def test_unit_norm_gives_zero(self, sided):
        params, spec = linear_critic([0.6, 0.8])
        assert penalty_at(params, spec, self.x_hat, 10.0, sided).item() == pytest.approx(0.0, abs=1e-24)

    def test_half_norm(self):
        params, spec = linear_critic([0.3, 0.4])
        assert penalty_at(params, spec, self.x_hat, 10.0, Sided.TWO).item() == pytest.approx(2.5, abs=1e-12)
        assert penalty_at(params, spec, self.x_hat, 10.0, Sided.ONE).item() == 0.0

    def test_double_norm(self):
        params, spec = linear_critic([1.2, 1.6])
        for sided in Sided:
            assert penalty_at(params, spec, self.x_hat, 10.0, sided).item() == pytest.approx(10.0, abs=1e-12)

    def test_zero_gradient_two_sided(self):
        params, spec = linear_critic([0.0, 0.0])
        assert penalty_at(params, spec, self.x_hat, 3.0, Sided.TWO).item() == 3.0

    def test_interpolation_shape_check(self):
        params, spec = linear_critic([1.0, 0.0])
        with pytest.raises(ad.ShapeError):
            gradient_penalty(params, spec, np.ones((3, 2)), np.ones((4, 2)), np.random.default_rng(0), 10.0, Sided.ONE)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_one_sided_below_two_sided(self, seed):
        rng = np.random.default_rng(seed)
        spec = MlpSpec(2, (6, 6, 6), 1)
        params = build_mlp(spec, rng)
        params = MlpParams([w * rng.uniform(0.5, 4.0) for w in params.weights], params.biases)
        x_hat = rng.normal(size=(8, 2))
        one = penalty_at(params, spec, x_hat, 10.0, Sided.ONE).item()
        two = penalty_at(params, spec, x_hat, 10.0, Sided.TWO).item()
        assert 0.0 <= one <= two

    def test_penalty_gradient_against_finite_differences(self):
        rng = np.random.default_rng(2)
        spec = MlpSpec(2, (5, 5, 5), 1)
        params = build_mlp(spec, rng)
        params = MlpParams([w * 2.5 for w in params.weights], [rng.normal(0, 0.1, b.shape) for b in params.biases])
        x_hat = rng.normal(size=(8, 2))
        for i in range(0, 8, 2):  # weights only: biases do not reach a piecewise-linear input gradient
            def f(t, i=i):
                flat = params.arrays()
                flat[i] = t
                return penalty_at(MlpParams.from_flat(flat), spec, x_hat, 10.0, Sided.TWO)

            assert ad.finite_difference_check(f, params.arrays()[i]) < 1e-3


class TestDistance:
    def test_examples(self):
        assert distance(DistanceKind.PSEUDO_HUBER, col(3.0), 3.0).item() == 0.0
        assert distance(DistanceKind.SQUARE, col(0.8), 0.2).item() == pytest.approx(0.36, abs=1e-15)
        assert distance(DistanceKind.ABS_LOG, col(math.e), 1.0).item() == pytest.approx(1.0, abs=1e-15)
        assert distance(DistanceKind.SQ_LOG, col(math.e), 1.0).item() == pytest.approx(1.0, abs=1e-15)
        assert distance(DistanceKind.ABS, col(-1.0), 2.0).item() == 3.0
        assert distance(DistanceKind.PSEUDO_HUBER, col(4.0), 0.0).item() == pytest.approx(math.sqrt(17) - 1, abs=1e-15)

    @pytest.mark.parametrize("kind", [DistanceKind.ABS_LOG, DistanceKind.SQ_LOG])
    def test_log_domain(self, kind):
        with pytest.raises(ad.DomainError):
            distance(kind, col(0.0), 1.0)

    @pytest.mark.parametrize("kind", list(DistanceKind))
    @given(x=positive, y=positive)
    @settings(max_examples=200, deadline=None)
    def test_positive_definite_and_symmetric(self, kind, x, y):
        dxy = distance(kind, col(x), y).item()
        dyx = distance(kind, col(y), x).item()
        assert dxy == dyx
        assert distance(kind, col(x), x).item() == 0.0
        if x != y:
            assert dxy > 0.0

    @pytest.mark.parametrize("kind", list(DistanceKind))
    def test_thousand_random_pairs(self, kind):
        rng = np.random.default_rng(42)
        x = rng.uniform(0.01, 5.0, size=(1000, 1))
        y = rng.uniform(0.01, 5.0, size=(1000, 1))
        assert np.all(distance(kind, Tensor(x), Tensor(y)).data > 0.0)
        assert np.all(distance(kind, Tensor(x), Tensor(x)).data == 0.0)


class TestGLoss:
    def test_lm_real_target_reached(self):
        spec = GLossSpec(Family.LM, DistanceKind.SQUARE, Target.REAL)
        assert g_loss(spec, CE_LABELS, col(1.0, 1.0)).item() == 0.0

    def test_dm_index_paired(self):
        spec = GLossSpec(Family.DM, DistanceKind.SQUARE)
        assert g_loss(spec, CE_LABELS, col(0.2, 0.6), col(0.8, 0.6)).item() == pytest.approx(0.18, abs=1e-15)

    def test_edm(self):
        spec = GLossSpec(Family.EDM, DistanceKind.ABS)
        assert g_loss(spec, CE_LABELS, col(0.3, 0.5), col(0.6, 0.8)).item() == pytest.approx(0.3, abs=1e-15)

    def test_elm(self):
        spec = GLossSpec(Family.ELM, DistanceKind.ABS, Target.MID)
        assert g_loss(spec, CE_LABELS, col(0.9, 0.7)).item() == pytest.approx(0.3, abs=1e-15)

    def test_real_target_is_not_zero_at_equilibrium(self):
        half = col(0.5, 0.5, 0.5, 0.5)
        real = GLossSpec(Family.LM, DistanceKind.SQUARE, Target.REAL)
        mid = GLossSpec(Family.LM, DistanceKind.SQUARE, Target.MID)
        assert g_loss(real, CE_LABELS, half).item() == 0.25
        assert g_loss(mid, CE_LABELS, half).item() == 0.0

    def test_classic_losses(self):
        d = col(0.25, 0.5)
        assert g_loss(GLossSpec(Family.SATURATING), CE_LABELS, d).item() == pytest.approx((math.log(0.75) + math.log(0.5)) / 2)
        assert g_loss(GLossSpec(Family.NON_SATURATING), CE_LABELS, d).item() == pytest.approx(-(math.log(0.25) + math.log(0.5)) / 2)
        assert g_loss(GLossSpec(Family.LSGAN), CE_LABELS, d).item() == pytest.approx((0.5625 + 0.25) / 2)
        assert g_loss(GLossSpec(Family.WGAN), labels_for(wgan_gp()), col(3.0, -1.0)).item() == -1.0

    def test_d_real_presence(self):
        with pytest.raises(ConfigError):
            g_loss(GLossSpec(Family.DM, DistanceKind.ABS), CE_LABELS, col(0.5))
        with pytest.raises(ConfigError):
            g_loss(GLossSpec(Family.LM, DistanceKind.ABS, Target.MID), CE_LABELS, col(0.5), col(0.5))

    @pytest.mark.parametrize("family", [Family.DM, Family.LM, Family.EDM, Family.ELM])
    @pytest.mark.parametrize("kind", list(DistanceKind))
    @given(d_fake=column, d_real=column, target=st.sampled_from(list(Target)))
    @settings(max_examples=20, deadline=None)
    def test_non_negative(self, family, kind, d_fake, d_real, target):
        spec = GLossSpec(family, kind, target if family.uses_target else None)
        value = g_loss(spec, CE_LABELS, Tensor(d_fake), Tensor(d_real) if family.uses_real else None).item()
        assert value >= 0.0


class TestLabels:
    def test_sigmoid_and_least_squares(self):
        assert labels_for(CROSS_ENTROPY) == LabelConvention(1.0, 0.0, 0.5)
        assert labels_for(LEAST_SQUARES) == LabelConvention(1.0, 0.0, 0.5)

    def test_wasserstein_has_no_labels(self):
        labels = labels_for(wgan_gp())
        assert labels.y_mid is None and labels.y_real is None
        for target in Target:
            with pytest.raises(ConfigError):
                labels.target(target)


class TestPairing:
    @pytest.mark.parametrize("family", [Family.LM, Family.ELM])
    @pytest.mark.parametrize("target", list(Target))
    def test_label_losses_rejected_under_wasserstein(self, family, target):
        with pytest.raises(ConfigError):
            check_pairing(wgan_gp(), GLossSpec(family, DistanceKind.ABS, target))

    def test_log_distance_needs_sigmoid(self):
        with pytest.raises(ConfigError):
            check_pairing(LEAST_SQUARES, GLossSpec(Family.DM, DistanceKind.ABS_LOG))
        check_pairing(CROSS_ENTROPY, GLossSpec(Family.DM, DistanceKind.ABS_LOG))

    def test_classic_log_losses_need_sigmoid(self):
        with pytest.raises(ConfigError):
            check_pairing(wgan_gp(), GLossSpec(Family.NON_SATURATING))

    def test_matching_losses_allowed_under_wasserstein(self):
        for family in (Family.DM, Family.EDM):
            check_pairing(wgan_gp(), GLossSpec(family, DistanceKind.ABS))

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            GLossSpec(Family.LM, DistanceKind.ABS)
        with pytest.raises(ConfigError):
            GLossSpec(Family.DM)
        with pytest.raises(ConfigError):
            GLossSpec(Family.WGAN, DistanceKind.ABS)
        with pytest.raises(ConfigError):
            GLossSpec.from_dict({"family": "DM", "distance": "Abs", "colour": "red"})
        spec = GLossSpec(Family.ELM, DistanceKind.PSEUDO_HUBER, Target.REAL)
        assert GLossSpec.from_dict(spec.to_dict()) == spec
        assert spec.label() == "ELM/PseudoHuber/Real"
