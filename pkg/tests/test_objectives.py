import math

import numpy as np
import pytest

from fedsim.model import ModelSpec, ParamVector, backward, forward, init_model
from fedsim.objectives import (
    Coefficients,
    LossBreakdown,
    composite_loss,
    cross_entropy,
    hyperspherical_energy,
    proximal_term,
    variance_regularizer,
    variance_threshold,
)
from fedsim.rng import RngStream

from helpers import central_diff, grad_error


class TestVarianceThreshold:
    @pytest.mark.parametrize("d,expected", [(2, 0.25), (10, 0.09), (1, 0.0)])
    def test_hand_values(self, d, expected):
        assert variance_threshold(d).c == pytest.approx(expected, abs=1e-15)

    def test_matches_closed_form(self):
        for d in range(1, 513):
            assert abs(variance_threshold(d).c - (d - 1) / d**2) < 1e-12

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            variance_threshold(0)


class TestVarianceRegularizer:
    def test_one_hot_batch_sits_at_floor(self):
        floor = variance_threshold(2)
        loss, grad = variance_regularizer(np.array([[1.0, 0.0], [0.0, 1.0]]), floor)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_collapsed_batch_pays_full_floor(self):
        floor = variance_threshold(2)
        loss, grad = variance_regularizer(np.full((2, 2), 0.5), floor)
        assert loss == pytest.approx(0.25, abs=1e-15)
        assert np.all(grad == 0.0)  # plateau: deviations from the mean are zero

    def test_partial_variance(self):
        floor = variance_threshold(2)
        p = np.array([[0.9, 0.1], [0.1, 0.9]])
        loss, grad = variance_regularizer(p, floor)
        assert loss == pytest.approx(0.09, abs=1e-12)
        assert np.any(grad != 0.0)

    def test_gradient_matches_finite_differences(self):
        floor = variance_threshold(3)
        p = np.array([[0.5, 0.3, 0.2], [0.25, 0.5, 0.25], [0.4, 0.15, 0.45],
                      [0.3, 0.4, 0.3], [0.2, 0.5, 0.3]])
        _, grad = variance_regularizer(p, floor)
        numeric = central_diff(lambda q: variance_regularizer(q, floor)[0], p.copy())
        assert grad_error(grad, numeric) < 1e-5

    def test_loss_bounded_by_floor(self):
        rng = np.random.default_rng(0)
        floor = variance_threshold(4)
        for _ in range(50):
            p = rng.dirichlet(np.ones(4), size=6)
            loss, _ = variance_regularizer(p, floor)
            assert 0.0 <= loss <= floor.c + 1e-15

    def test_zero_iff_all_columns_above_floor(self):
        floor = variance_threshold(2)
        hot = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        assert variance_regularizer(hot, floor)[0] == 0.0
        tepid = np.array([[0.6, 0.4], [0.4, 0.6]])
        loss, _ = variance_regularizer(tepid, floor)
        assert loss > 0.0


class TestHypersphericalEnergy:
    def test_antipodal_pair(self):
        z = np.array([[1.0, 0.0], [-1.0, 0.0]])
        loss, _ = hyperspherical_energy(z, 1e-4)
        assert loss == pytest.approx(2.0 / (4.0 * (2.0 + 1e-4)), abs=1e-15)

    def test_orthogonal_pair(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, _ = hyperspherical_energy(z, 1e-4)
        assert loss == pytest.approx(2.0 / (4.0 * (1.0 + 1e-4)), abs=1e-15)

    def test_coincident_pair_blows_up(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0]])
        loss, _ = hyperspherical_energy(z, 1e-4)
        assert loss == pytest.approx(5000.0, rel=1e-12)

    def test_energy_decreases_as_pair_separates(self):
        prev = None
        for angle in np.linspace(0.05, np.pi, 40):
            z = np.array([[1.0, 0.0], [math.cos(angle), math.sin(angle)]])
            loss, _ = hyperspherical_energy(z, 1e-4)
            if prev is not None:
                assert loss < prev
            prev = loss

    def test_rejects_non_unit_rows(self):
        with pytest.raises(ValueError, match="unit-norm"):
            hyperspherical_energy(np.array([[2.0, 0.0], [0.0, 1.0]]))

    def test_rejects_single_row(self):
        with pytest.raises(ValueError, match="two rows"):
            hyperspherical_energy(np.array([[1.0, 0.0]]))

    def test_gradient_matches_finite_differences_through_normalization(self):
        # the caller always chains the feature gradient through row
        # normalization, so that composition is what gets checked
        f = RngStream(31).normal((6, 5))

        def scalar(raw):
            z = raw / np.linalg.norm(raw, axis=1, keepdims=True)
            return hyperspherical_energy(z, 1e-3)[0]

        z = f / np.linalg.norm(f, axis=1, keepdims=True)
        _, g_z = hyperspherical_energy(z, 1e-3)
        radial = np.sum(g_z * z, axis=1, keepdims=True)
        chained = (g_z - radial * z) / np.linalg.norm(f, axis=1, keepdims=True)
        numeric = central_diff(scalar, f.copy())
        assert grad_error(chained, numeric) < 1e-5


class TestCrossEntropy:
    def test_uniform_prediction(self):
        p = np.full((3, 4), 0.25)
        loss, _ = cross_entropy(p, np.array([0, 1, 3]))
        assert loss == pytest.approx(math.log(4.0), abs=1e-12)

    def test_perfect_prediction(self):
        p = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, grad = cross_entropy(p, np.array([0, 1]))
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_hand_computed_single_sample(self):
        loss, grad = cross_entropy(np.array([[0.8, 0.2]]), np.array([0]))
        assert loss == pytest.approx(-math.log(0.8), abs=1e-12)
        assert np.allclose(grad, [[-0.2, 0.2]], atol=1e-12)

    def test_logits_path_agrees_with_log_p(self):
        logits = RngStream(7).normal((6, 5))
        from fedsim.numeric import softmax

        p = softmax(logits)
        y = np.array([0, 1, 2, 3, 4, 0])
        direct, _ = cross_entropy(p, y)
        via_logits, _ = cross_entropy(p, y, logits=logits)
        assert direct == pytest.approx(via_logits, abs=1e-12)

    def test_rejects_out_of_range_label(self):
        with pytest.raises(ValueError, match="out of range"):
            cross_entropy(np.full((2, 3), 1 / 3), np.array([0, 3]))


class TestProximal:
    def test_coincident_parameters(self):
        a = _vec([1.0, 2.0])
        loss, grad = proximal_term(a, a.copy(), 0.5)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_hand_computed(self):
        loss, grad = proximal_term(_vec([1.0, 0.0]), _vec([0.0, 0.0]), 2.0)
        assert loss == pytest.approx(1.0, abs=0)
        assert np.allclose(grad, [2.0, 0.0], atol=0)

    def test_disabled_when_mu_zero(self):
        loss, grad = proximal_term(_vec([5.0, -3.0]), _vec([0.0, 0.0]), 0.0)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_skips_masked_entries(self):
        a = _vec([1.0, 1.0], mask=[True, False])
        b = _vec([0.0, 0.0], mask=[True, False])
        loss, grad = proximal_term(a, b, 2.0)
        assert loss == pytest.approx(1.0)
        assert grad[0] == 0.0

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            proximal_term(_vec([1.0]), _vec([1.0, 2.0]), 1.0)


def _vec(vals, mask=None):
    vals = np.asarray(vals, dtype=np.float64)
    m = np.zeros(vals.size, dtype=bool) if mask is None else np.asarray(mask)
    return ParamVector(vals, [("w", (vals.size,))], m)


class TestComposite:
    SPEC = ModelSpec(input_dim=3, encoder=(4,), projector=4, feature_dim=4, classes=2)

    def _setup(self, seed=40, n=5):
        params = init_model(self.SPEC, RngStream(seed))
        x = RngStream(seed + 1).normal((n, 3))
        y = np.array([i % 2 for i in range(n)])
        trace = forward(params, x, "train")
        return params, x, y, trace

    def test_zero_coefficients_reduce_to_cross_entropy(self):
        params, _, y, trace = self._setup()
        floor = variance_threshold(2)
        coeffs = Coefficients(mu=0.0, lam=0.0, mu_prox=0.0)
        bd, d_logits, d_feat, d_pre, d_theta = composite_loss(
            trace, y, coeffs, floor, params, params.copy())
        ce, g_ce = cross_entropy(trace.p, y, logits=trace.logits)
        assert bd.total == bd.ce == ce
        assert bd.he == bd.var == bd.prox == 0.0
        assert np.array_equal(d_logits, g_ce)
        assert np.all(d_feat == 0.0)
        assert d_pre is None
        assert np.all(d_theta == 0.0)

    def test_total_recomposes_from_parts(self):
        params, _, y, trace = self._setup()
        floor = variance_threshold(2)
        coeffs = Coefficients(mu=0.5, lam=0.5, mu_prox=0.01)
        other = params.copy()
        other.values += 0.1
        bd, *_ = composite_loss(trace, y, coeffs, floor, params, other)
        ce, _ = cross_entropy(trace.p, y, logits=trace.logits)
        he, _ = hyperspherical_energy(trace.z, coeffs.he_eps)
        var, _ = variance_regularizer(trace.p, floor)
        prox, _ = proximal_term(params, other, 0.01)
        expected = ce + 0.5 * he + 0.5 * var + prox
        assert bd.total == pytest.approx(expected, abs=1e-12)
        assert (bd.ce, bd.he, bd.var, bd.prox) == (ce, he, var, prox)

    def test_linear_in_coefficients(self):
        params, _, y, trace = self._setup()
        floor = variance_threshold(2)
        base = composite_loss(trace, y, Coefficients(0.3, 0.2, 0.0), floor, params, params.copy())[0]
        double = composite_loss(trace, y, Coefficients(0.6, 0.2, 0.0), floor, params, params.copy())[0]
        assert (double.total - base.total) == pytest.approx(0.3 * base.he, abs=1e-12)

    @pytest.mark.parametrize("he_features", ["post_projector", "pre_projector"])
    def test_full_model_gradient_matches_finite_differences(self, he_features):
        params, x, y, trace = self._setup()
        floor = variance_threshold(2)
        coeffs = Coefficients(mu=0.5, lam=0.5, mu_prox=0.01, he_features=he_features)
        theta_global = params.copy()
        theta_global.values = theta_global.values + 0.05

        bd, d_logits, d_feat, d_pre, d_theta = composite_loss(
            trace, y, coeffs, floor, params, theta_global)
        analytic = backward(params, trace, d_logits, d_feat, d_pre) + d_theta

        def scalar(theta_flat):
            p = ParamVector(theta_flat, params.layout, params.mask, self.SPEC)
            t = forward(p, x, "train")
            return composite_loss(t, y, coeffs, floor, p, theta_global)[0].total

        numeric = central_diff(scalar, params.values.copy(), h=1e-5)
        assert grad_error(analytic, numeric) < 1e-5

    def test_pre_projector_energy_skips_directionless_rows(self):
        params = init_model(self.SPEC, RngStream(60))
        params.view("enc0.b")[...] = -5.0  # row of zeros goes dark in the encoder
        x = np.vstack([np.zeros((1, 3)), 3.0 * np.abs(RngStream(61).normal((4, 3)))])
        trace = forward(params, x, "train")
        assert np.linalg.norm(trace.enc_out[0]) == 0.0
        coeffs = Coefficients(mu=0.5, lam=0.0, mu_prox=0.0, he_features="pre_projector")
        floor = variance_threshold(2)
        y = np.array([0, 1, 0, 1, 0])
        bd, _, _, d_pre, _ = composite_loss(trace, y, coeffs, floor, params, params.copy())
        assert np.isfinite(bd.he) and bd.he > 0.0
        assert np.all(d_pre[0] == 0.0)
        assert np.any(d_pre[1:] != 0.0)

    def test_breakdown_total_invariant(self):
        params, _, y, trace = self._setup()
        floor = variance_threshold(2)
        coeffs = Coefficients(mu=0.7, lam=1.3, mu_prox=0.02)
        other = params.copy()
        other.values += 0.2
        bd, *_ = composite_loss(trace, y, coeffs, floor, params, other)
        assert bd.total == pytest.approx(
            bd.ce + coeffs.mu * bd.he + coeffs.lam * bd.var + bd.prox, abs=1e-12)
        for term in (bd.ce, bd.he, bd.var, bd.prox):
            assert term >= 0.0 and np.isfinite(term)
