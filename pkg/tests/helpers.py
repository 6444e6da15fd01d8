"""Shared test utilities: brute-force oracles, backbone shims, FD gradients."""

import numpy as np
import torch
from torch import nn

from ktrecon import ImageSequence, MaskSpec, PhantomConfig, generate_phantom, sample_masks, standardize
from ktrecon.video import _ifft2c


def oracle_fft2c(x: np.ndarray) -> np.ndarray:
    """Naive centered orthonormal 2D DFT, O(N^4), for small frames only."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=np.complex128)
    ch, cw = h // 2, w // 2
    for k in range(h):
        for l in range(w):
            acc = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    ang = -2j * np.pi * ((k - ch) * (m - ch) / h + (l - cw) * (n - cw) / w)
                    acc += x[m, n] * np.exp(ang)
            out[k, l] = acc / np.sqrt(h * w)
    return out


def random_complex(shape, seed) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    arr = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return torch.from_numpy(arr.astype(np.complex64))


def small_instance(t=4, h=8, w=8, acceleration=2.0, acs=2, seed=0, mask_seed=3):
    """Standardized tiny phantom with a feasible undersampling mask."""
    config = PhantomConfig(t=t, h=h, w=w, n_ellipses=2, seed=seed)
    x, _ = standardize(generate_phantom(config, np.random.default_rng(seed)))
    spec = MaskSpec(acceleration=acceleration, acs_lines=acs)
    masks = sample_masks(spec, t, h, w, np.random.default_rng(mask_seed))
    return x, masks


def smooth_sequence(t=12, h=64, w=64) -> ImageSequence:
    """Smooth two-blob test image repeated over t frames."""
    ys, xs = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    img = (np.exp(-((xs - 0.1) ** 2 + (ys + 0.2) ** 2) / 0.1)
           + 0.6 * np.exp(-((xs + 0.4) ** 2 + (ys - 0.3) ** 2) / 0.05))
    frame = torch.from_numpy(img.astype(np.float32))
    data = torch.complex(frame, torch.zeros_like(frame))
    return ImageSequence(data=data.unsqueeze(0).expand(t, h, w).contiguous())


class ZeroNet(nn.Module):
    """Reconstructor that always outputs zero (with one dummy parameter)."""

    def __init__(self):
        super().__init__()
        self.scale = nn.Parameter(torch.zeros(1))

    def forward(self, y, mask):
        zf = _ifft2c(y * mask)
        return zf * torch.complex(self.scale, torch.zeros_like(self.scale))


class ScaledZfNet(nn.Module):
    """Linear reconstructor c * A^H y; its measurement map is h(y) = c * y."""

    def __init__(self, c: float = 1.0):
        super().__init__()
        self.c = c

    def forward(self, y, mask):
        return _ifft2c(y * mask) * self.c


def fd_gradient_error(model: nn.Module, loss_fn, n_sample=10, eps=1e-3, seed=0) -> float:
    """Relative norm error between autograd and central finite differences.

    Samples up to n_sample coordinates per parameter tensor; the loss_fn
    must be deterministic (freeze any randomness inside it).
    """
    for p in model.parameters():
        p.grad = None
    loss_fn().backward()
    grads = {n: p.grad.clone() for n, p in model.named_parameters()}
    rng = np.random.default_rng(seed)
    analytic, numeric = [], []
    for name, p in model.named_parameters():
        flat = p.detach().view(-1)
        idxs = rng.choice(flat.numel(), size=min(n_sample, flat.numel()), replace=False)
        for i in idxs:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
            plus = loss_fn().item()
            with torch.no_grad():
                flat[i] = orig - eps
            minus = loss_fn().item()
            with torch.no_grad():
                flat[i] = orig
            numeric.append((plus - minus) / (2 * eps))
            analytic.append(grads[name].view(-1)[i].item())
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-30)
    return float(np.linalg.norm(analytic - numeric) / denom)
