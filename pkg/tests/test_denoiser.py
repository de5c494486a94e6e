import math

import numpy as np
import pytest

from src.config import MODEL_PRESETS, VARIANTS, DenoiserConfig
from src.denoiser import (
    Denoiser,
    DenoiserWeights,
    block_forward,
    condition_inputs,
    embed_points,
    init_weights,
    predict_noise,
)
from src.encodings import encode_kappa, encode_time
from src.errors import CapacityError, ConfigError
from src.models import Condition
from src.objects import pad_batch
from src.tensor import Tape, Tensor, default_dtype, grad_check, grad_check_many, mul, parameter, sum_all

from .conftest import random_points

KAPPA = Condition(0.7, 14.0, -1.1, 4.2, 1.8, 1.5)


def randomize(weights: DenoiserWeights, rng: np.random.Generator, std: float = 0.3) -> None:
    for p in weights.params.values():
        p.data = rng.normal(0.0, std, size=p.shape).astype(p.dtype)


def tiny(variant: str, **kw) -> DenoiserConfig:
    base = dict(variant=variant, depth=1, heads=2, width=8, max_points=8, num_frequencies=4)
    base.update(kw)
    return DenoiserConfig(**base)


class TestWeights:
    def test_variant_parameters(self):
        dit = init_weights(tiny("dit3d_adaln_zero"))
        logen = init_weights(tiny("logen"))
        assert "blocks.0.ada.w" in dit and "cond.fc1.w" in dit
        assert "blocks.0.cross.q.w" in logen and "t_block.w" in logen
        assert "blocks.0.cross.q.w" not in dit

    def test_zero_initialized_modulation(self):
        dit = init_weights(tiny("dit3d_adaln_zero"))
        assert np.all(dit["blocks.0.ada.w"].data == 0.0)
        assert np.all(dit["null"].data == 0.0)

    def test_state_dict_round_trip(self):
        weights = init_weights(tiny("logen"), seed=3)
        clone = DenoiserWeights.from_state_dict(weights.config, weights.state_dict())
        for name, p in weights.params.items():
            np.testing.assert_array_equal(clone[name].data, p.data)

    def test_missing_weight(self):
        with pytest.raises(ConfigError):
            init_weights(tiny("logen"))["blocks.0.ada.w"]

    def test_init_deterministic(self):
        a = init_weights(tiny("pixart_adaln_single"), seed=5)
        b = init_weights(tiny("pixart_adaln_single"), seed=5)
        for name in a.params:
            np.testing.assert_array_equal(a[name].data, b[name].data)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_xs_parameter_count(self, variant):
        config = MODEL_PRESETS["xs"].model_copy(update={"variant": variant})
        count = init_weights(config).num_parameters()
        assert 0.85 * 7.5e6 <= count <= 1.15 * 7.5e6


class TestEmbedding:
    def test_zero_projection_gives_positions(self, rng):
        weights = init_weights(tiny("logen"))
        weights["embed.w"].data[:] = 0.0
        weights["embed.b"].data[:] = 0.0
        weights["pos"].data[:] = rng.normal(size=weights["pos"].shape)
        out = embed_points(Tensor(rng.normal(size=(5, 4)), dtype=np.float32), weights)
        np.testing.assert_array_equal(out.data, weights["pos"].data[:5])

    def test_single_point_shape(self):
        weights = init_weights(tiny("logen"))
        assert embed_points(Tensor(np.zeros((1, 4))), weights).shape == (1, 8)

    def test_capacity(self):
        weights = init_weights(tiny("logen"))
        with pytest.raises(CapacityError):
            embed_points(Tensor(np.zeros((9, 4))), weights)

    def test_projection_commutes_with_permutation(self, rng):
        with default_dtype(np.float64):
            weights = init_weights(tiny("logen"), seed=6, dtype=np.float64)
            randomize(weights, rng)
            x = rng.normal(size=(6, 4))
            perm = rng.permutation(6)
            pos = weights["pos"].data[:6]
            a = embed_points(Tensor(x), weights).data - pos
            b = embed_points(Tensor(x[perm]), weights).data - pos
        np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-12)

    def test_null_condition_uses_parameter(self):
        weights = init_weights(tiny("logen"))
        cond, _ = condition_inputs(Condition.null(), 3, weights)
        assert cond is weights["null"]


class TestBlocks:
    def test_adaln_zero_identity(self, rng):
        weights = init_weights(tiny("dit3d_adaln_zero", depth=2, width=16, heads=4))
        h = Tensor(rng.normal(size=(6, 16)))
        cond = encode_kappa(KAPPA, weights.encoder)
        time = encode_time(250, weights.encoder)
        for index in range(2):
            out = block_forward(h, cond, time, None, weights, index=index)
            assert np.max(np.abs(out.data - h.data)) == 0.0

    def test_logen_differs_from_pixart(self, rng):
        weights = init_weights(tiny("logen"), seed=1)
        randomize(weights, rng)
        h = Tensor(rng.normal(size=(5, 8)), dtype=weights.dtype)
        cond = encode_kappa(KAPPA, weights.encoder)
        time = encode_time(40, weights.encoder)
        logen = block_forward(h, cond, time, None, weights, variant="logen")
        pixart = block_forward(h, cond, time, None, weights, variant="pixart_adaln_single")
        assert np.max(np.abs(logen.data - pixart.data)) > 1e-6

    def test_unknown_variant(self, rng):
        weights = init_weights(tiny("logen"))
        h = Tensor(np.zeros((2, 8)))
        with pytest.raises(ConfigError):
            block_forward(h, np.zeros(48), np.zeros(8), None, weights, variant="unet")
        with pytest.raises(ConfigError):
            block_forward(h, np.zeros(48), np.zeros(8), None, weights, variant="dit3d_adaln_zero")

    def test_block_index_range(self):
        weights = init_weights(tiny("logen"))
        with pytest.raises(ConfigError):
            block_forward(Tensor(np.zeros((2, 8))), np.zeros(48), np.zeros(8), None, weights, index=1)


class TestGradients:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_all_parameters(self, variant):
        rng = np.random.default_rng(7)
        with default_dtype(np.float64):
            weights = init_weights(tiny(variant), seed=2, dtype=np.float64)
            randomize(weights, rng)
            x = parameter(rng.normal(size=(4, 4)), name="x_t")
            r = Tensor(rng.normal(size=(4, 4)))

            def loss():
                return sum_all(mul(predict_noise(x, 37, KAPPA, weights), r))

            errors = grad_check_many(loss, [x, *weights.params.values()], h=1e-5)
        worst = max(errors, key=errors.get)
        assert errors[worst] < 1e-3, worst

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_input_default_step(self, variant):
        rng = np.random.default_rng(9)
        with default_dtype(np.float64):
            weights = init_weights(tiny(variant), seed=3, dtype=np.float64)
            randomize(weights, rng)
            x = parameter(rng.normal(size=(4, 4)), name="x_t")
            r = Tensor(rng.normal(size=(4, 4)))
            error = grad_check(lambda v: sum_all(mul(predict_noise(v, 37, KAPPA, weights), r)), x)
        assert error < 1e-3

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_padded_inputs_get_no_gradient(self, variant):
        rng = np.random.default_rng(11)
        with default_dtype(np.float64):
            weights = init_weights(tiny(variant), dtype=np.float64)
            randomize(weights, rng)
            mask = np.array([True, True, True, False, False])
            x = parameter(rng.normal(size=(5, 4)))
            r = Tensor(rng.normal(size=(5, 4)) * mask[:, None])
            with Tape() as tape:
                loss = sum_all(mul(predict_noise(x, 10, KAPPA, weights, mask), r))
            tape.backward(loss)
        assert np.all(x.grad[~mask] == 0.0)
        assert np.any(x.grad[mask] != 0.0)


class TestPredictNoise:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_shape(self, variant, rng):
        weights = init_weights(tiny(variant))
        assert predict_noise(rng.normal(size=(6, 4)), 5, KAPPA, weights).shape == (6, 4)

    def test_phi_periodicity(self, rng):
        weights = init_weights(tiny("logen"), seed=4)
        randomize(weights, rng)
        x = rng.normal(size=(6, 4))
        a = predict_noise(x, 12, KAPPA, weights).data
        b = predict_noise(x, 12, KAPPA.replace(phi=KAPPA.phi + 2 * math.pi), weights).data
        np.testing.assert_array_equal(a, b)

    def test_padding_does_not_leak(self, rng):
        weights = init_weights(tiny("logen"), seed=4)
        randomize(weights, rng)
        mask = np.array([True, True, True, True, False, False])
        x = rng.normal(size=(6, 4))
        a = predict_noise(x, 12, KAPPA, weights, mask).data
        x[4:] = rng.normal(size=(2, 4)) * 100.0
        b = predict_noise(x, 12, KAPPA, weights, mask).data
        np.testing.assert_allclose(a[:4], b[:4], rtol=0, atol=1e-6)

    def test_denoiser_counts_calls(self, rng):
        model = Denoiser(init_weights(tiny("logen")))
        x = rng.normal(size=(3, 4))
        out = model(x, 3, KAPPA)
        model(x, 3, Condition.null())
        assert out.dtype == np.float64
        assert (model.calls, model.null_calls) == (2, 1)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_permutation_equivariant_without_positions(self, variant, rng):
        with default_dtype(np.float64):
            weights = init_weights(tiny(variant), seed=8, dtype=np.float64)
            randomize(weights, rng)
            weights["pos"].data[:] = 0.0
            x = rng.normal(size=(7, 4))
            perm = rng.permutation(7)
            a = predict_noise(x, 21, KAPPA, weights).data
            b = predict_noise(x[perm], 21, KAPPA, weights).data
        np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-9)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_single_object_matches_padded_batch_row(self, variant, rng):
        weights = init_weights(tiny(variant), seed=4)
        randomize(weights, rng)
        objects = [random_points(rng, n) for n in (3, 8, 5)]
        batch, mask = pad_batch(objects)
        for i, obj in enumerate(objects):
            alone = predict_noise(obj.points, 12, KAPPA, weights).data
            row = predict_noise(batch[i], 12, KAPPA, weights, mask[i]).data
            np.testing.assert_allclose(row[: obj.n], alone, rtol=0, atol=1e-5)
