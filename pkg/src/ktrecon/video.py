"""Complex video containers and the centered orthonormal 2D Fourier transform.

Image sequences are complex-valued [T, H, W] tensors. Frames use the MRI
convention of a centered k-space: the transform is wrapped in shifts so the
DC component sits at array index (H/2, W/2). Normalization is orthonormal in
both directions, which makes the operator unitary and its adjoint equal to
its inverse. Only even H, W are accepted so the center pixel is unambiguous.

Storage is complex64; reductions (inner products) accumulate in 64-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import torch

from .errors import NumericError

if TYPE_CHECKING:
    from .forward_model import Masks

MIN_FRAME_SIZE = 4


def _check_spatial_dims(h: int, w: int) -> None:
    if h < MIN_FRAME_SIZE or w < MIN_FRAME_SIZE:
        raise ValueError(f"frame size {h}x{w} below minimum {MIN_FRAME_SIZE}")
    if h % 2 or w % 2:
        raise ValueError(f"odd frame size {h}x{w}; centered transforms need even sizes")


def _as_complex64(data: torch.Tensor) -> torch.Tensor:
    if not torch.is_tensor(data):
        data = torch.as_tensor(data)
    if not data.is_complex():
        data = data.to(torch.complex64)
    elif data.dtype != torch.complex64:
        data = data.to(torch.complex64)
    return data


@dataclass(frozen=True)
class ImageSequence:
    """Complex-valued 2D+t video, shape [T, H, W].

    The tensor may carry autograd history; construction only validates, never
    mutates. Entries must be finite.
    """

    data: torch.Tensor

    def __post_init__(self):
        data = _as_complex64(self.data)
        if data.ndim != 3:
            raise ValueError(f"expected [T, H, W] array, got shape {tuple(data.shape)}")
        t, h, w = data.shape
        if t < 1:
            raise ValueError("need at least one frame")
        _check_spatial_dims(h, w)
        if not torch.isfinite(data.real).all() or not torch.isfinite(data.imag).all():
            raise NumericError("non-finite entries in image sequence")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def t_frames(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class KTSequence:
    """Undersampled k-t-space measurements on the same [T, H, W] grid.

    Entries at unsampled mask locations are exactly zero; ``masks`` records
    the sampling pattern that produced the data.
    """

    data: torch.Tensor
    masks: "Masks" = field(repr=False)

    def __post_init__(self):
        data = _as_complex64(self.data)
        if data.ndim != 3:
            raise ValueError(f"expected [T, H, W] array, got shape {tuple(data.shape)}")
        _check_spatial_dims(data.shape[1], data.shape[2])
        if tuple(data.shape) != tuple(self.masks.data.shape):
            raise ValueError(
                f"measurement shape {tuple(data.shape)} does not match "
                f"mask shape {tuple(self.masks.data.shape)}"
            )
        if not torch.isfinite(data.real).all() or not torch.isfinite(data.imag).all():
            raise NumericError("non-finite entries in k-t-space data")
        off_support = data.detach()[~self.masks.data]
        if off_support.numel() and not (off_support == 0).all():
            raise ValueError("nonzero k-space entries outside the mask support")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


def _fft2c(x: torch.Tensor) -> torch.Tensor:
    """Centered orthonormal FFT over the last two dims, no validation."""
    return torch.fft.fftshift(
        torch.fft.fft2(torch.fft.ifftshift(x, dim=(-2, -1)), dim=(-2, -1), norm="ortho"),
        dim=(-2, -1),
    )


def _ifft2c(k: torch.Tensor) -> torch.Tensor:
    """Exact inverse of :func:`_fft2c`."""
    return torch.fft.fftshift(
        torch.fft.ifft2(torch.fft.ifftshift(k, dim=(-2, -1)), dim=(-2, -1), norm="ortho"),
        dim=(-2, -1),
    )


def _validate_frame(frame: torch.Tensor) -> torch.Tensor:
    frame = _as_complex64(frame)
    if frame.ndim < 2:
        raise ValueError("expected at least a 2D frame")
    _check_spatial_dims(frame.shape[-2], frame.shape[-1])
    if not torch.isfinite(frame.real).all() or not torch.isfinite(frame.imag).all():
        raise NumericError("non-finite input to Fourier transform")
    return frame


def fft2_centered(frame: torch.Tensor) -> torch.Tensor:
    """Unitary 2D DFT of a complex frame with DC at the array center.

    Accepts [..., H, W]; the transform acts on the trailing two dims. Energy
    is preserved: ||F x|| = ||x||.
    """
    return _fft2c(_validate_frame(frame))


def ifft2_centered(frame: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`fft2_centered` (also its adjoint, by unitarity)."""
    return _ifft2c(_validate_frame(frame))


def inner_product(a: torch.Tensor, b: torch.Tensor) -> complex:
    """Complex inner product sum(conj(a) * b) with 64-bit accumulation."""
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    acc = (a.detach().to(torch.complex128).conj() * b.detach().to(torch.complex128)).sum()
    return complex(acc)
