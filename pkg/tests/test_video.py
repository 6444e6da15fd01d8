import numpy as np
import pytest
import torch

from ktrecon import ImageSequence, KTSequence, fft2_centered, ifft2_centered, inner_product
from ktrecon.errors import NumericError
from ktrecon.forward_model import Masks, MaskSpec

from helpers import oracle_fft2c, random_complex


def _impulse(h, w):
    x = torch.zeros(h, w, dtype=torch.complex64)
    x[h // 2, w // 2] = 1.0
    return x


class TestFft2Centered:
    def test_zeros_map_to_zeros(self):
        out = fft2_centered(torch.zeros(8, 8, dtype=torch.complex64))
        assert torch.equal(out, torch.zeros(8, 8, dtype=torch.complex64))

    def test_center_impulse_is_constant(self):
        # frozen from the brute-force DFT: impulse at (4, 4) of an 8x8 frame
        # transforms to the constant 1/8 with zero phase
        out = fft2_centered(_impulse(8, 8))
        expected = torch.full((8, 8), 1.0 / 8.0, dtype=torch.complex64)
        assert torch.allclose(out, expected, atol=1e-6)
        assert out.imag.abs().max() < 1e-6

    def test_matches_bruteforce_dft(self):
        x = random_complex((8, 8), seed=11)
        ours = fft2_centered(x).numpy().astype(np.complex128)
        ref = oracle_fft2c(x.numpy().astype(np.complex128))
        assert np.abs(ours - ref).max() < 1e-5

    def test_unitarity_norm_preserved(self):
        x = random_complex((16, 16), seed=3)
        nx = torch.linalg.vector_norm(x).item()
        nk = torch.linalg.vector_norm(fft2_centered(x)).item()
        assert abs(nx - nk) / nx < 1e-5

    def test_rejects_nonfinite(self):
        x = torch.zeros(8, 8, dtype=torch.complex64)
        x[0, 0] = float("nan")
        with pytest.raises(NumericError):
            fft2_centered(x)

    def test_rejects_odd_sizes(self):
        with pytest.raises(ValueError):
            fft2_centered(torch.zeros(7, 8, dtype=torch.complex64))


class TestIfft2Centered:
    def test_round_trip(self):
        x = random_complex((8, 8), seed=5)
        back = ifft2_centered(fft2_centered(x))
        assert (back - x).abs().max().item() < 1e-5

    def test_constant_maps_to_center_impulse(self):
        const = torch.full((8, 8), 1.0 / 8.0, dtype=torch.complex64)
        out = ifft2_centered(const)
        assert torch.allclose(out, _impulse(8, 8), atol=1e-6)

    def test_zeros(self):
        out = ifft2_centered(torch.zeros(8, 8, dtype=torch.complex64))
        assert torch.equal(out, torch.zeros(8, 8, dtype=torch.complex64))

    @pytest.mark.parametrize("size", [4, 8, 12, 16, 256])
    def test_round_trip_sizes(self, size):
        x = random_complex((size, size), seed=size)
        back = ifft2_centered(fft2_centered(x))
        rel = (back - x).abs().max().item() / x.abs().max().item()
        assert rel < 1e-5


class TestInnerProduct:
    def test_impulse_with_itself(self):
        a = _impulse(8, 8)
        assert inner_product(a, a) == pytest.approx(1.0 + 0.0j)

    def test_orthogonal_impulses(self):
        a = torch.zeros(8, 8, dtype=torch.complex64)
        b = torch.zeros(8, 8, dtype=torch.complex64)
        a[1, 1] = 1.0
        b[2, 5] = 1.0
        assert inner_product(a, b) == 0

    def test_unitarity_of_transform(self):
        a = random_complex((8, 8), seed=1)
        b = random_complex((8, 8), seed=2)
        lhs = inner_product(fft2_centered(a), fft2_centered(b))
        rhs = inner_product(a, b)
        assert abs(lhs - rhs) / abs(rhs) < 1e-5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            inner_product(torch.zeros(4, 4), torch.zeros(4, 6))


class TestImageSequence:
    def test_accepts_valid(self):
        x = ImageSequence(data=random_complex((3, 8, 8), seed=0))
        assert x.shape == (3, 8, 8)
        assert x.t_frames == 3

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            ImageSequence(data=random_complex((8, 8), seed=0))

    def test_rejects_odd_and_small_frames(self):
        with pytest.raises(ValueError):
            ImageSequence(data=random_complex((2, 7, 8), seed=0))
        with pytest.raises(ValueError):
            ImageSequence(data=random_complex((2, 2, 2), seed=0))

    def test_rejects_nonfinite(self):
        data = random_complex((2, 8, 8), seed=0)
        data[0, 0, 0] = complex(float("inf"), 0.0)
        with pytest.raises(NumericError):
            ImageSequence(data=data)


class TestKTSequence:
    def _masks(self):
        data = torch.zeros(2, 8, 8, dtype=torch.bool)
        data[:, :, 2] = True
        data[:, :, 5] = True
        return Masks(data=data, spec=MaskSpec(acceleration=4.0, acs_lines=0))

    def test_accepts_supported_data(self):
        masks = self._masks()
        data = random_complex((2, 8, 8), seed=1) * masks.data
        y = KTSequence(data=data, masks=masks)
        assert y.shape == (2, 8, 8)

    def test_rejects_off_support_values(self):
        masks = self._masks()
        data = random_complex((2, 8, 8), seed=1)  # dense: violates support
        with pytest.raises(ValueError):
            KTSequence(data=data, masks=masks)

    def test_rejects_mask_shape_mismatch(self):
        masks = self._masks()
        with pytest.raises(ValueError):
            KTSequence(data=torch.zeros(3, 8, 8, dtype=torch.complex64), masks=masks)
