"""Differentiable reconstructors f(y, A) with k-space data consistency.

Two small reference backbones operate on the 2-real-channel view of complex
frames and end in a data-consistency stage:

* ``crnn_unrolled`` - an unrolled convolutional recurrent network. Each
  unrolled iteration runs a bidirectional recurrence along the frame axis
  (one input conv, one hidden conv, both shared between directions and
  across iterations), projects back to 2 channels, adds the result as a
  residual and applies data consistency.
* ``artifact_cnn`` - a plain 3D-convolutional residual network over the
  whole sequence followed by a single data-consistency stage.

Data consistency is hard (sampled k-space entries replaced by the
measurements) or weighted, where a learnable positive weight lam blends
prediction and measurement as (k + lam*y) / (1 + lam). Weighted consistency
is the variant to use on noisy measurements, where exact replacement would
pin the noise into the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, NumericError
from .forward_model import Masks, zero_filled
from .video import ImageSequence, KTSequence, _fft2c, _ifft2c

# Untrained networks should be near-identity maps (residual updates start
# tiny), so reconstruction before any training matches zero-filled output.
OUTPUT_PROJECTION_GAIN = 0.01

INITIAL_DC_WEIGHT = 10.0


class BackboneKind(str, Enum):
    CRNN_UNROLLED = "crnn_unrolled"
    ARTIFACT_CNN = "artifact_cnn"


class DcMode(str, Enum):
    HARD = "hard"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class BackboneConfig:
    """Architecture description of the reconstructor.

    For ``artifact_cnn``, ``unroll_iters`` counts convolution layers; a
    single layer maps 2 -> 2 channels directly.
    """

    kind: BackboneKind = BackboneKind.CRNN_UNROLLED
    unroll_iters: int = 2
    hidden_channels: int = 8
    kernel_size: int = 3
    dc_mode: DcMode = DcMode.HARD

    def __post_init__(self):
        object.__setattr__(self, "kind", BackboneKind(self.kind))
        object.__setattr__(self, "dc_mode", DcMode(self.dc_mode))
        if self.unroll_iters < 1:
            raise ConfigError("unroll_iters must be >= 1")
        if self.hidden_channels < 1:
            raise ConfigError("hidden_channels must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be a positive odd integer")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "unroll_iters": self.unroll_iters,
            "hidden_channels": self.hidden_channels,
            "kernel_size": self.kernel_size,
            "dc_mode": self.dc_mode.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        known = {"kind", "unroll_iters", "hidden_channels", "kernel_size", "dc_mode"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown backbone config keys: {sorted(unknown)}")
        return cls(**d)


def _to_channels(x: torch.Tensor) -> torch.Tensor:
    """Complex [T, H, W] -> real [T, 2, H, W]."""
    return torch.stack([x.real, x.imag], dim=1)


def _to_complex(c: torch.Tensor) -> torch.Tensor:
    """Real [T, 2, H, W] -> complex [T, H, W]."""
    return torch.complex(c[:, 0], c[:, 1])


def _apply_dc(x: torch.Tensor, y: torch.Tensor, mask: torch.Tensor,
              lam: torch.Tensor | None) -> torch.Tensor:
    """Blend the k-space of x with the measurements at sampled locations."""
    k = _fft2c(x)
    if lam is None:
        k = torch.where(mask, y, k)
    else:
        k = torch.where(mask, (k + lam * y) / (1.0 + lam), k)
    return _ifft2c(k)


def data_consistency(x: ImageSequence, y: KTSequence, masks: Masks) -> ImageSequence:
    """Hard data consistency: sampled k-space entries of x replaced by y."""
    if x.shape != y.shape or x.shape != masks.shape:
        raise ValueError(
            f"shape mismatch: image {x.shape}, measurements {y.shape}, masks {masks.shape}"
        )
    return ImageSequence(data=_apply_dc(x.data, y.data, masks.data, None))


class _DcMixin(nn.Module):
    def _init_dc(self, config: BackboneConfig):
        self.config = config
        if config.dc_mode is DcMode.WEIGHTED:
            self.dc_log_weight = nn.Parameter(
                torch.tensor(math.log(INITIAL_DC_WEIGHT), dtype=torch.float32)
            )
        else:
            self.dc_log_weight = None

    def _dc(self, x: torch.Tensor, y: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        lam = None if self.dc_log_weight is None else torch.exp(self.dc_log_weight)
        return _apply_dc(x, y, mask, lam)

    def output_projection_parameters(self) -> set[str]:
        raise NotImplementedError


class CrnnUnrolled(_DcMixin):
    """Unrolled bidirectional convolutional recurrent reconstructor."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self._init_dc(config)
        c, k = config.hidden_channels, config.kernel_size
        pad = k // 2
        self.conv_in = nn.Conv2d(2, c, k, padding=pad)
        self.conv_hidden = nn.Conv2d(c, c, k, padding=pad)
        self.conv_out = nn.Conv2d(c, 2, k, padding=pad)

    def output_projection_parameters(self) -> set[str]:
        return {"conv_out.weight", "conv_out.bias"}

    def _recur(self, inp: torch.Tensor, reverse: bool) -> torch.Tensor:
        t = inp.shape[0]
        order = range(t - 1, -1, -1) if reverse else range(t)
        h = torch.zeros_like(inp[:1])
        out = [None] * t
        for i in order:
            h = F.relu(inp[i:i + 1] + self.conv_hidden(h))
            out[i] = h
        return torch.cat(out, dim=0)

    def forward(self, y: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = _ifft2c(y * mask)
        for _ in range(self.config.unroll_iters):
            feats = self.conv_in(_to_channels(x))
            h = self._recur(feats, reverse=False) + self._recur(feats, reverse=True)
            x = x + _to_complex(self.conv_out(h))
            x = self._dc(x, y, mask)
            if not torch.isfinite(x.real).all() or not torch.isfinite(x.imag).all():
                raise NumericError("non-finite activations in unrolled iteration")
        return x


class ArtifactCnn(_DcMixin):
    """Residual 3D-convolutional artifact-removal network."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self._init_dc(config)
        c, k, n = config.hidden_channels, config.kernel_size, config.unroll_iters
        pad = k // 2
        widths = [2] + [c] * (n - 1) + [2]
        self.layers = nn.ModuleList(
            nn.Conv3d(widths[i], widths[i + 1], k, padding=pad) for i in range(n)
        )

    def output_projection_parameters(self) -> set[str]:
        last = len(self.layers) - 1
        return {f"layers.{last}.weight", f"layers.{last}.bias"}

    def forward(self, y: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = _ifft2c(y * mask)
        # [T, 2, H, W] -> [1, 2, T, H, W] for 3D convolution over the sequence
        r = _to_channels(x).permute(1, 0, 2, 3).unsqueeze(0)
        for i, layer in enumerate(self.layers):
            r = layer(r)
            if i + 1 < len(self.layers):
                r = F.relu(r)
        r = r.squeeze(0).permute(1, 0, 2, 3)
        x = x + _to_complex(r)
        x = self._dc(x, y, mask)
        if not torch.isfinite(x.real).all() or not torch.isfinite(x.imag).all():
            raise NumericError("non-finite activations in artifact CNN")
        return x


def build_backbone(config: BackboneConfig) -> nn.Module:
    if config.kind is BackboneKind.CRNN_UNROLLED:
        return CrnnUnrolled(config)
    return ArtifactCnn(config)


def init_params(config: BackboneConfig, rng: torch.Generator) -> nn.Module:
    """Build a backbone with deterministic fan-in-scaled uniform weights.

    Biases start at zero. Output-projection weights get a reduced gain so the
    fresh network is a near-identity map. The weighted-DC log weight starts
    at log(INITIAL_DC_WEIGHT).
    """
    model = build_backbone(config)
    out_names = model.output_projection_parameters()
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name == "dc_log_weight":
                continue
            if name.endswith("bias"):
                p.zero_()
                continue
            fan_in = p.shape[1] * math.prod(p.shape[2:])
            bound = 1.0 / math.sqrt(fan_in)
            if name in out_names:
                bound *= OUTPUT_PROJECTION_GAIN
            p.copy_((torch.rand(p.shape, generator=rng) * 2.0 - 1.0) * bound)
    return model


def param_count(config: BackboneConfig) -> int:
    """Exact scalar parameter total of the configured backbone."""
    return sum(p.numel() for p in build_backbone(config).parameters())


def reconstruct(model: nn.Module, y: KTSequence, masks: Masks | None = None) -> ImageSequence:
    """Run the reconstructor on measurements; raises NumericError on NaN/Inf."""
    masks = y.masks if masks is None else masks
    if y.shape != masks.shape:
        raise ValueError(f"measurement shape {y.shape} does not match mask shape {masks.shape}")
    out = model(y.data, masks.data)
    if not torch.isfinite(out.real).all() or not torch.isfinite(out.imag).all():
        raise NumericError("reconstruction produced non-finite values")
    return ImageSequence(data=out)


def params_to_blob(model: nn.Module) -> bytes:
    """Serialize parameters as little-endian float32 in registration order."""
    chunks = []
    for _, p in model.named_parameters():
        arr = p.detach().cpu().to(torch.float32).numpy()
        chunks.append(arr.astype("<f4").tobytes())
    return b"".join(chunks)


def blob_to_params(model: nn.Module, blob: bytes) -> None:
    """Load a parameter blob written by :func:`params_to_blob` in place."""
    import numpy as np

    expected = sum(p.numel() for p in model.parameters()) * 4
    if len(blob) != expected:
        raise ValueError(f"parameter blob holds {len(blob)} bytes, expected {expected}")
    offset = 0
    with torch.no_grad():
        for _, p in model.named_parameters():
            n = p.numel() * 4
            arr = np.frombuffer(blob[offset:offset + n], dtype="<f4").reshape(tuple(p.shape))
            p.copy_(torch.from_numpy(arr.copy()))
            offset += n


def param_manifest(model: nn.Module) -> list[dict]:
    """Names and shapes in serialization order, for checkpoint headers."""
    return [{"name": n, "shape": list(p.shape)} for n, p in model.named_parameters()]
