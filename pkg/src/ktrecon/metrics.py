"""Image-quality metrics in the fastMRI convention, plus table aggregation.

PSNR and SSIM are computed on magnitude videos with the data range taken from
the ground-truth sequence maximum; NMSE is norm-based and computed on the
complex values directly. SSIM uses a uniform 7x7 window with sample-covariance
normalization, averaged over frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .video import ImageSequence

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _magnitude(x: ImageSequence) -> np.ndarray:
    return x.data.detach().cpu().numpy().astype(np.complex128).__abs__()


def _check_shapes(xhat: ImageSequence, gt: ImageSequence) -> None:
    if xhat.shape != gt.shape:
        raise ValueError(f"shape mismatch {xhat.shape} vs {gt.shape}")


def psnr(xhat: ImageSequence, gt: ImageSequence) -> float:
    """Peak signal-to-noise ratio in dB over all magnitude pixels, capped at 100."""
    _check_shapes(xhat, gt)
    mag_hat, mag_gt = _magnitude(xhat), _magnitude(gt)
    data_range = mag_gt.max()
    if data_range == 0:
        raise ValueError("ground truth is all zero")
    mse = np.mean((mag_hat - mag_gt) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return float(min(20 * np.log10(data_range) - 10 * np.log10(mse), PSNR_CAP_DB))


def _ssim_frame(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    win = SSIM_WINDOW
    np_pix = win * win
    cov_norm = np_pix / (np_pix - 1)
    ua = uniform_filter(a, win)
    ub = uniform_filter(b, win)
    uaa = uniform_filter(a * a, win)
    ubb = uniform_filter(b * b, win)
    uab = uniform_filter(a * b, win)
    va = cov_norm * (uaa - ua * ua)
    vb = cov_norm * (ubb - ub * ub)
    vab = cov_norm * (uab - ua * ub)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    s = ((2 * ua * ub + c1) * (2 * vab + c2)) / ((ua**2 + ub**2 + c1) * (va + vb + c2))
    pad = (win - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def ssim(xhat: ImageSequence, gt: ImageSequence, data_range: float | None = None) -> float:
    """Mean per-frame structural similarity of the magnitude videos.

    The data range defaults to the ground-truth magnitude maximum; pass it
    explicitly to make the metric symmetric in its arguments.
    """
    _check_shapes(xhat, gt)
    t, h, w = gt.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"frames {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    mag_hat, mag_gt = _magnitude(xhat), _magnitude(gt)
    if data_range is None:
        data_range = float(mag_gt.max())
    return float(np.mean([_ssim_frame(mag_hat[i], mag_gt[i], data_range) for i in range(t)]))


def nmse(xhat: ImageSequence, gt: ImageSequence) -> float:
    """Normalized mean squared error ||xhat - gt||^2 / ||gt||^2 on complex values."""
    _check_shapes(xhat, gt)
    a = xhat.data.detach().cpu().numpy().astype(np.complex128)
    b = gt.data.detach().cpu().numpy().astype(np.complex128)
    denom = np.sum(np.abs(b) ** 2)
    if denom == 0:
        raise ValueError("ground truth is all zero")
    return float(np.sum(np.abs(a - b) ** 2) / denom)


def aggregate(values: list[float]) -> tuple[float, float]:
    """Mean and (n-1)-normalized standard deviation; a single value has std 0."""
    if not values:
        raise ValueError("cannot aggregate an empty list")
    arr = np.asarray(values, dtype=np.float64)
    std = 0.0 if arr.size == 1 else float(arr.std(ddof=1))
    return float(arr.mean()), std


METRIC_NAMES = ("psnr", "ssim", "nmse")


@dataclass
class MetricsReport:
    """Per-sequence metric values plus mean/std aggregates."""

    per_sequence: dict[str, dict[str, float]]

    @property
    def count(self) -> int:
        return len(self.per_sequence)

    def aggregates(self) -> dict[str, dict[str, float]]:
        out = {}
        for name in METRIC_NAMES:
            mean, std = aggregate([v[name] for v in self.per_sequence.values()])
            out[name] = {"mean": mean, "std": std}
        return out

    def mean(self, name: str) -> float:
        return self.aggregates()[name]["mean"]

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "per_sequence": self.per_sequence,
            "aggregate": self.aggregates(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text_table(self) -> str:
        """Aligned table in column order PSNR, SSIM, NMSE."""
        agg = self.aggregates()
        lines = [f"{'id':<12}{'PSNR':>10}{'SSIM':>10}{'NMSE':>10}"]
        for sid, vals in self.per_sequence.items():
            lines.append(
                f"{sid:<12}{vals['psnr']:>10.2f}{vals['ssim']:>10.4f}{vals['nmse']:>10.4f}"
            )
        lines.append(
            f"{'mean+/-std':<12}"
            f"{agg['psnr']['mean']:>6.2f}+/-{agg['psnr']['std']:<4.2f}"
            f"{agg['ssim']['mean']:>6.3f}+/-{agg['ssim']['std']:<4.3f}"
            f"{agg['nmse']['mean']:>6.3f}+/-{agg['nmse']['std']:<4.3f}"
        )
        return "\n".join(lines)

    @classmethod
    def from_pairs(cls, pairs: dict[str, tuple[ImageSequence, ImageSequence]]) -> "MetricsReport":
        per = {
            sid: {"psnr": psnr(xhat, gt), "ssim": ssim(xhat, gt), "nmse": nmse(xhat, gt)}
            for sid, (xhat, gt) in pairs.items()
        }
        return cls(per_sequence=per)
