"""Time-varying undersampled Fourier acquisition: masks, A, A^H, noise.

The acquisition of frame t is A_t = M_t F where F is the centered orthonormal
2D Fourier transform and M_t a binary Cartesian column mask. Because F is
unitary, the adjoint A^H = F^H M is also the zero-filled reconstruction.

Masks are column-structured (whole k-space lines). A Gaussian column density
concentrates sampling near DC; a central block of ACS columns is always
sampled. Sampling is probabilistic: the acceleration is met in expectation,
not exactly, and the realized fraction is logged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import torch

from .errors import ConfigError
from .video import ImageSequence, KTSequence, _check_spatial_dims, _fft2c, _ifft2c

logger = logging.getLogger(__name__)

# Width of the Gaussian column density, as a fraction of W.
GAUSSIAN_DENSITY_SCALE = 1.0 / 6.0


class MaskScheme(str, Enum):
    GAUSSIAN_COLUMNS = "gaussian_columns"
    UNIFORM_COLUMNS = "uniform_columns"


@dataclass(frozen=True)
class MaskSpec:
    """Description of the Cartesian undersampling distribution.

    acceleration R: expected ratio of total to sampled columns.
    acs_lines: count of always-sampled central columns.
    per_frame_iid: fresh column draw per frame when true, one shared draw
    otherwise. ``seed`` is the base seed recorded with the spec.
    """

    acceleration: float = 8.0
    acs_lines: int = 8
    scheme: MaskScheme = MaskScheme.GAUSSIAN_COLUMNS
    per_frame_iid: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.acceleration < 1:
            raise ConfigError(f"acceleration must be >= 1, got {self.acceleration}")
        if self.acs_lines < 0:
            raise ConfigError("acs_lines must be non-negative")
        object.__setattr__(self, "scheme", MaskScheme(self.scheme))

    def to_dict(self) -> dict:
        return {
            "acceleration": self.acceleration,
            "acs_lines": self.acs_lines,
            "scheme": self.scheme.value,
            "per_frame_iid": self.per_frame_iid,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaskSpec":
        unknown = set(d) - {"acceleration", "acs_lines", "scheme", "per_frame_iid", "seed"}
        if unknown:
            raise ConfigError(f"unknown mask spec keys: {sorted(unknown)}")
        return cls(**d)


def acs_column_range(w: int, acs_lines: int) -> tuple[int, int]:
    """Half-open [start, stop) index range of the central ACS columns."""
    start = w // 2 - acs_lines // 2
    return start, start + acs_lines


@dataclass(frozen=True)
class Masks:
    """Binary sampling pattern [T, H, W] together with its generating spec."""

    data: torch.Tensor
    spec: MaskSpec = field(repr=False)

    def __post_init__(self):
        data = torch.as_tensor(self.data)
        if data.dtype != torch.bool:
            data = data != 0
        if data.ndim != 3:
            raise ValueError(f"expected [T, H, W] mask, got shape {tuple(data.shape)}")
        _check_spatial_dims(data.shape[1], data.shape[2])
        if not (data == data[:, :1, :]).all():
            raise ValueError("mask is not column-structured")
        w = data.shape[2]
        if self.spec.acs_lines:
            lo, hi = acs_column_range(w, self.spec.acs_lines)
            if not data[:, :, lo:hi].all():
                raise ValueError("ACS columns missing from mask")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def column_counts(self) -> np.ndarray:
        """Sampled-column count per frame."""
        return self.data[:, 0, :].sum(dim=1).cpu().numpy()

    def without_acs(self) -> "Masks":
        """Same pattern, spec relabelled with acs_lines=0 (for split masks)."""
        return Masks(data=self.data, spec=replace(self.spec, acs_lines=0))


def _column_probabilities(spec: MaskSpec, w: int) -> np.ndarray:
    """Per-column selection probability for the non-ACS columns.

    Scaled so the expected total sampled count (ACS included) is w / R.
    Probabilities are clipped to 1; the tiny resulting bias toward fewer
    lines is accepted.
    """
    lo, hi = acs_column_range(w, spec.acs_lines)
    budget = w / spec.acceleration - spec.acs_lines
    if budget < 0:
        raise ConfigError(
            f"{spec.acs_lines} ACS columns already exceed the 1/{spec.acceleration:g} "
            f"sampling budget of {w / spec.acceleration:g} columns"
        )
    cols = np.arange(w)
    non_acs = (cols < lo) | (cols >= hi)
    if spec.scheme is MaskScheme.GAUSSIAN_COLUMNS:
        s = GAUSSIAN_DENSITY_SCALE * w
        weights = np.exp(-((cols - w / 2.0) ** 2) / (2.0 * s * s))
    else:
        weights = np.ones(w)
    weights = weights * non_acs
    # proportional scaling with water-filling: columns whose scaled density
    # exceeds 1 saturate, and the excess redistributes over the rest, so the
    # expected sampled count stays exactly at the budget
    probs = np.zeros(w)
    if budget > 0 and weights.sum() > 0:
        budget = min(budget, float(non_acs.sum()))
        free = weights > 0
        remaining = budget
        while remaining > 1e-12 and free.any():
            scale = remaining / weights[free].sum()
            scaled = weights * scale
            saturated = free & (scaled >= 1.0)
            if not saturated.any():
                probs[free] = scaled[free]
                break
            probs[saturated] = 1.0
            remaining -= saturated.sum()
            free = free & ~saturated
    return probs


def sample_masks(spec: MaskSpec, t: int, h: int, w: int, rng: np.random.Generator) -> Masks:
    """Draw a column mask stack [t, h, w] from the spec's distribution.

    Pure function of (spec, dims, rng state): the same seeded generator
    yields the same masks.
    """
    if t < 1:
        raise ValueError("need at least one frame")
    _check_spatial_dims(h, w)
    if spec.acs_lines >= w:
        raise ConfigError(f"acs_lines={spec.acs_lines} must be < W={w}")
    probs = _column_probabilities(spec, w)
    if spec.per_frame_iid:
        selected = rng.random((t, w)) < probs[None, :]
    else:
        selected = np.repeat(rng.random((1, w)) < probs[None, :], t, axis=0)
    lo, hi = acs_column_range(w, spec.acs_lines)
    selected[:, lo:hi] = True

    fractions = selected.mean(axis=1)
    low, high = 0.5 / spec.acceleration, 2.0 / spec.acceleration
    if ((fractions < low) | (fractions > high)).any():
        logger.warning(
            "mask frame fraction %s outside sanity band [%g, %g] for R=%g",
            np.round(fractions, 4).tolist(), low, high, spec.acceleration,
        )
    logger.debug("realized acceleration %.3g", 1.0 / max(fractions.mean(), 1e-12))

    data = torch.from_numpy(np.repeat(selected[:, None, :], h, axis=1))
    return Masks(data=data, spec=spec)


def forward(x: ImageSequence, masks: Masks) -> KTSequence:
    """Apply y_t = M_t F x_t per frame. Differentiable in x."""
    if x.shape != masks.shape:
        raise ValueError(f"image shape {x.shape} does not match mask shape {masks.shape}")
    k = _fft2c(x.data) * masks.data
    return KTSequence(data=k, masks=masks)


def adjoint(y: KTSequence, masks: Masks | None = None) -> ImageSequence:
    """Apply x_t = F^H (M_t y_t) per frame; the adjoint of :func:`forward`."""
    masks = y.masks if masks is None else masks
    if y.shape != masks.shape:
        raise ValueError(f"measurement shape {y.shape} does not match mask shape {masks.shape}")
    return ImageSequence(data=_ifft2c(y.data * masks.data))


def zero_filled(y: KTSequence, masks: Masks | None = None) -> ImageSequence:
    """Zero-filled reconstruction; identical to :func:`adjoint` by construction."""
    return adjoint(y, masks)


def add_noise(y: KTSequence, sigma: float, rng: np.random.Generator) -> KTSequence:
    """Add complex Gaussian noise of total variance sigma^2 at sampled entries.

    Real and imaginary parts each get std sigma/sqrt(2); unsampled entries
    stay exactly zero.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return y
    t, h, w = y.shape
    comp = rng.standard_normal((2, t, h, w)) * (sigma / np.sqrt(2.0))
    noise = torch.from_numpy((comp[0] + 1j * comp[1]).astype(np.complex64))
    noisy = y.data + noise * y.masks.data
    return KTSequence(data=noisy, masks=y.masks)
