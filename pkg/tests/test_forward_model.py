import numpy as np
import pytest
import torch

from ktrecon import (
    KTSequence,
    Masks,
    MaskSpec,
    add_noise,
    adjoint,
    fft2_centered,
    forward,
    inner_product,
    sample_masks,
    zero_filled,
)
from ktrecon.errors import ConfigError
from ktrecon.forward_model import _column_probabilities, acs_column_range

from helpers import random_complex, small_instance

from ktrecon import ImageSequence


def _rng(seed=0):
    return np.random.default_rng(seed)


class TestSampleMasks:
    def test_no_undersampling_gives_full_mask(self):
        spec = MaskSpec(acceleration=1.0, acs_lines=0)
        masks = sample_masks(spec, 3, 8, 8, _rng())
        assert masks.data.all()

    def test_expected_column_count(self):
        # oracle: the selection probabilities themselves fix the expectation;
        # a Monte-Carlo run over 1000 draws must land within +/- 1 of W/R = 32
        spec = MaskSpec(acceleration=8.0, acs_lines=8)
        probs = _column_probabilities(spec, 256)
        assert spec.acs_lines + probs.sum() == pytest.approx(32.0, abs=1e-6)
        counts = []
        for i in range(1000 // 12 + 1):
            masks = sample_masks(spec, 12, 4, 256, _rng(i))
            counts.extend(masks.column_counts())
        assert abs(np.mean(counts[:1000]) - 32.0) < 1.0

    def test_determinism(self):
        spec = MaskSpec(acceleration=4.0, acs_lines=4)
        a = sample_masks(spec, 4, 16, 16, _rng(7))
        b = sample_masks(spec, 4, 16, 16, _rng(7))
        assert torch.equal(a.data, b.data)

    def test_per_frame_iid_toggle(self):
        spec = MaskSpec(acceleration=2.0, acs_lines=2, per_frame_iid=False)
        masks = sample_masks(spec, 5, 8, 16, _rng(1))
        assert (masks.data == masks.data[:1]).all()
        spec = MaskSpec(acceleration=2.0, acs_lines=2, per_frame_iid=True)
        masks = sample_masks(spec, 32, 8, 16, _rng(1))
        assert not (masks.data == masks.data[:1]).all()

    def test_infeasible_acs_budget(self):
        spec = MaskSpec(acceleration=8.0, acs_lines=16)
        with pytest.raises(ConfigError):
            sample_masks(spec, 2, 8, 64, _rng())

    def test_acs_always_present(self):
        spec = MaskSpec(acceleration=8.0, acs_lines=8)
        for seed in range(5):
            masks = sample_masks(spec, 6, 8, 64, _rng(seed))
            lo, hi = acs_column_range(64, 8)
            assert masks.data[:, :, lo:hi].all()

    def test_column_structure_enforced(self):
        data = torch.zeros(2, 8, 8, dtype=torch.bool)
        data[0, 3, 1] = True  # partial column
        with pytest.raises(ValueError):
            Masks(data=data, spec=MaskSpec(acceleration=2.0, acs_lines=0))

    def test_uniform_scheme(self):
        spec = MaskSpec(acceleration=4.0, acs_lines=0, scheme="uniform_columns")
        probs = _column_probabilities(spec, 64)
        assert np.allclose(probs, probs[0])
        assert probs.sum() == pytest.approx(16.0)


class TestForwardAdjoint:
    def test_full_mask_forward_is_fft(self):
        x, _ = small_instance()
        full = sample_masks(MaskSpec(acceleration=1.0, acs_lines=0), *x.shape, _rng())
        y = forward(x, full)
        assert torch.allclose(y.data, fft2_centered(x.data), atol=1e-6)

    def test_zero_image_zero_measurements(self):
        _, masks = small_instance()
        x = ImageSequence(data=torch.zeros(4, 8, 8, dtype=torch.complex64))
        assert forward(x, masks).data.abs().max() == 0

    def test_support_confinement(self):
        x, masks = small_instance(seed=2)
        y = forward(x, masks)
        assert (y.data[~masks.data] == 0).all()

    def test_shape_mismatch(self):
        x, _ = small_instance()
        other = sample_masks(MaskSpec(acceleration=2.0, acs_lines=2), 4, 16, 16, _rng())
        with pytest.raises(ValueError):
            forward(x, other)

    def test_adjoint_identity(self):
        # <A x, y> == <x, A^H y> on random instances
        spec = MaskSpec(acceleration=2.0, acs_lines=2)
        worst = 0.0
        for seed in range(20):
            masks = sample_masks(spec, 3, 8, 8, _rng(seed))
            x = ImageSequence(data=random_complex((3, 8, 8), seed=seed))
            yd = random_complex((3, 8, 8), seed=seed + 1000) * masks.data
            y = KTSequence(data=yd, masks=masks)
            lhs = inner_product(forward(x, masks).data, y.data)
            rhs = inner_product(x.data, adjoint(y, masks).data)
            scale = np.linalg.norm(x.data.numpy()) * np.linalg.norm(y.data.numpy())
            worst = max(worst, abs(lhs - rhs) / scale)
        assert worst < 1e-4

    def test_full_mask_round_trip(self):
        x, _ = small_instance()
        full = sample_masks(MaskSpec(acceleration=1.0, acs_lines=0), *x.shape, _rng())
        back = adjoint(forward(x, full), full)
        assert (back.data - x.data).abs().max() < 1e-5

    def test_zero_measurements(self):
        _, masks = small_instance()
        y = KTSequence(data=torch.zeros(4, 8, 8, dtype=torch.complex64), masks=masks)
        assert adjoint(y).data.abs().max() == 0

    def test_idempotent_masking(self):
        x, masks = small_instance(seed=5)
        y = forward(x, masks)
        y2 = forward(adjoint(y), masks)
        assert (y2.data - y.data).abs().max() < 1e-5


class TestZeroFilled:
    def test_matches_adjoint(self):
        x, masks = small_instance(seed=9)
        y = forward(x, masks)
        assert torch.equal(zero_filled(y).data, adjoint(y).data)

    def test_full_mask_exact_recovery(self):
        x, _ = small_instance()
        full = sample_masks(MaskSpec(acceleration=1.0, acs_lines=0), *x.shape, _rng())
        rec = zero_filled(forward(x, full))
        assert (rec.data - x.data).abs().max() < 1e-5


class TestAddNoise:
    def test_sigma_zero_is_identity(self):
        x, masks = small_instance()
        y = forward(x, masks)
        assert add_noise(y, 0.0, _rng()) is y

    def test_negative_sigma_rejected(self):
        x, masks = small_instance()
        with pytest.raises(ValueError):
            add_noise(forward(x, masks), -1.0, _rng())

    def test_empirical_variance(self):
        spec = MaskSpec(acceleration=1.0, acs_lines=0)
        masks = sample_masks(spec, 16, 80, 80, _rng())  # 102400 sampled entries
        y = KTSequence(data=torch.zeros(16, 80, 80, dtype=torch.complex64), masks=masks)
        sigma = 0.7
        noisy = add_noise(y, sigma, _rng(42))
        var = (noisy.data.abs() ** 2).double()[masks.data].mean().item()
        assert abs(var - sigma**2) / sigma**2 < 0.02

    def test_unsampled_entries_stay_zero(self):
        x, masks = small_instance(seed=4)
        noisy = add_noise(forward(x, masks), 0.5, _rng(3))
        assert (noisy.data[~masks.data] == 0).all()
