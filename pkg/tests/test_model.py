"""Tests for the velocity-field network."""

import numpy as np
import pytest

from tsflow.exceptions import ConfigError, DataError
from tsflow.model import ModelConfig, VelocityModel
from tsflow.tensor import Tensor

from gradcheck import max_relative_error, numerical_gradient

TINY = ModelConfig(
    d_model=8, n_layers=1, n_heads=2, decomposition_window=3,
    kernel_sizes=(3,), time_embed_dim=8, seed=0,
)


def make_model(config=TINY, features=2):
    return VelocityModel(config, n_features=features)


class TestConfig:
    def test_heads_must_divide_d_model(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_model=10, n_heads=4)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(kernel_sizes=(3, 4))

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(decomposition_window=4)


class TestEmbed:
    def test_output_shape(self):
        model = make_model()
        out = model.embed(np.random.default_rng(0).random((3, 10, 2)), 0.5)
        assert out.shape == (3, 10, TINY.d_model)

    def test_distinct_times_embed_differently(self):
        model = make_model()
        rng = np.random.default_rng(1)
        gaps = []
        for _ in range(100):
            x = rng.random((1, 8, 2))
            a = model.embed(x, 0.3).data
            b = model.embed(x, 0.7).data
            gaps.append(np.abs(a - b).max())
        assert min(gaps) > 0.0

    def test_identical_windows_embed_identically(self):
        model = make_model()
        w = np.random.default_rng(2).random((1, 8, 2))
        batch = np.concatenate([w, w], axis=0)
        out = model.embed(batch, 0.4).data
        np.testing.assert_array_equal(out[0], out[1])

    def test_non_finite_input_rejected(self):
        model = make_model()
        bad = np.full((1, 8, 2), np.inf)
        with pytest.raises(DataError):
            model.embed(bad, 0.1)


class TestLayerIdentities:
    @pytest.mark.parametrize("trial", range(10))
    def test_decomposition_and_residual_identities(self, trial):
        model = make_model()
        rng = np.random.default_rng(trial)
        hidden = Tensor(rng.standard_normal((2, 9, TINY.d_model)))
        seasonal, trend, residual = model.vfe_layer(0, hidden)
        np.testing.assert_allclose(
            (residual + seasonal + trend).data, hidden.data, atol=1e-10, rtol=0
        )

    def test_constant_hidden_zero_init_gives_zero_components(self):
        # With an identity gate and the cross-attention output projection at
        # its zero initialization, a constant hidden state decomposes into
        # exactly zero seasonal and trend parts.
        config = ModelConfig(
            d_model=8, n_layers=1, n_heads=2, decomposition_window=3,
            kernel_sizes=(3,), time_embed_dim=8, gate_activation="identity", seed=3,
        )
        model = make_model(config)
        hidden = Tensor(np.full((2, 7, 8), 0.37))
        seasonal, trend, residual = model.vfe_layer(0, hidden)
        np.testing.assert_array_equal(seasonal.data, np.zeros_like(hidden.data))
        np.testing.assert_array_equal(trend.data, np.zeros_like(hidden.data))
        np.testing.assert_allclose(residual.data, hidden.data, atol=1e-12)


class TestForward:
    def test_output_shape_matches_input(self):
        model = make_model()
        x = np.random.default_rng(4).random((3, 12, 2))
        assert model.forward(x, 0.25).shape == x.shape

    @pytest.mark.parametrize("t", [0.0, 0.25, 0.5, 0.75, 1.0])
    def test_output_finite_on_grid_times(self, t):
        model = make_model()
        x = np.random.default_rng(5).random((2, 8, 2))
        assert np.isfinite(model.forward(x, t).data).all()

    def test_batch_permutation_equivariance(self):
        model = make_model()
        x = np.random.default_rng(6).random((4, 8, 2))
        perm = [2, 0, 3, 1]
        out = model.forward(x, 0.6).data
        out_perm = model.forward(x[perm], 0.6).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)

    def test_zero_initialized_projection_gives_zero_velocity(self):
        model = make_model()
        x = np.random.default_rng(7).random((2, 8, 2))
        np.testing.assert_array_equal(model.forward(x, 0.5).data, np.zeros_like(x))

    def test_per_element_times_accepted(self):
        model = make_model()
        x = np.random.default_rng(8).random((3, 8, 2))
        t = np.array([0.1, 0.5, 0.9])
        out = model.forward(x, t).data
        single = model.forward(x[1:2], 0.5).data
        np.testing.assert_allclose(out[1], single[0], atol=1e-12)


class TestDeterminismAndCounts:
    def test_same_seed_bit_identical_parameters(self):
        a, b = make_model(), make_model()
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_ablations_shrink_parameter_count(self):
        full = make_model(ModelConfig(seed=0)).param_count()
        no_ca = make_model(ModelConfig(use_cross_attention=False, seed=0)).param_count()
        no_enc = make_model(
            ModelConfig(use_self_attention_encoder=False, seed=0)
        ).param_count()
        assert no_ca < full
        assert no_enc < full

    def test_no_encoder_strips_attention_parameters(self):
        model = make_model(ModelConfig(use_self_attention_encoder=False, seed=0))
        assert not any(".enc." in name for name in model.params)

    def test_state_roundtrip(self):
        model = make_model()
        state = model.state_arrays()
        other = make_model(TINY)
        for p in other.params.values():
            p.data = p.data + 1.0
        other.load_state_arrays(state)
        for name in state:
            np.testing.assert_array_equal(other.params[name].data, state[name])


@pytest.mark.parametrize(
    "variant",
    [
        ModelConfig(d_model=8, n_layers=1, n_heads=2, decomposition_window=3,
                    kernel_sizes=(3,), time_embed_dim=8, seed=1),
        ModelConfig(d_model=8, n_layers=1, n_heads=2, decomposition_window=3,
                    kernel_sizes=(3,), time_embed_dim=8, seed=1,
                    use_cross_attention=False),
        ModelConfig(d_model=8, n_layers=1, n_heads=2, decomposition_window=3,
                    kernel_sizes=(3,), time_embed_dim=8, seed=1,
                    use_flow_decomposition=False),
        ModelConfig(d_model=8, n_layers=1, n_heads=2, decomposition_window=3,
                    kernel_sizes=(3,), time_embed_dim=8, seed=1,
                    use_self_attention_encoder=False),
    ],
    ids=["full", "no_ca", "no_fd", "no_encoder"],
)
def test_full_model_parameter_gradients_match_finite_differences(variant):
    """Mean-squared output gradient w.r.t. every parameter vs central FD."""
    model = VelocityModel(variant, n_features=2)
    rng = np.random.default_rng(9)
    # Zero-initialized projections would hide upstream errors; perturb all.
    for p in model.params.values():
        p.data = p.data + rng.normal(0.0, 0.05, size=p.data.shape)
    x = rng.random((1, 8, 2))
    t = 0.35

    def loss_value(model_):
        return float((model_.forward(x, t) ** 2).mean().data)

    model.zero_grad()
    (model.forward(x, t) ** 2).mean().backward()

    worst = 0.0
    for name, p in model.params.items():
        def f(values, _name=name):
            saved = model.params[_name].data
            model.params[_name].data = values[0]
            try:
                return loss_value(model)
            finally:
                model.params[_name].data = saved

        numeric = numerical_gradient(f, [p.data], wrt=0, h=1e-5)
        analytic = p.grad if p.grad is not None else np.zeros_like(numeric)
        worst = max(worst, max_relative_error(analytic, numeric))
    assert worst < 1e-3
