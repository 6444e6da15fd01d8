"""Training objectives: measurement consistency, equivariance, splitting, SURE.

All losses are functions of a reconstructor module and a measured sequence;
they return a scalar tensor that carries the autograd graph, so parameter
gradients come from ``backward()``. Reductions accumulate in float64.

The equivariance objective draws a random group element g, transforms the
first reconstruction, re-measures it through the same operator and penalizes
the discrepancy with the reconstruction of those synthetic measurements.
Gradients flow through both network applications and through the transform;
nothing is detached. Disabling group factors turns the loss into the plain
rotation-only (or temporal-only) equivariance ablations.

The SURE objective replaces the measurement-consistency residual with an
unbiased estimate of the measurement-domain MSE against the unknown clean
measurements, using a Monte-Carlo divergence probe with complex Rademacher
entries (unit variance per complex entry, so the 2 sigma^2 / m factor below
is exactly unbiased).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import torch
from torch import nn

from .backbone import reconstruct
from .errors import ConfigError
from .forward_model import Masks, acs_column_range, forward, sample_masks
from .groups import GroupConfig, act, sample_group
from .video import ImageSequence, KTSequence

GAUSSIAN_SPLIT_SCALE = 1.0 / 6.0


class LossKind(str, Enum):
    MC = "mc"
    DDEI = "ddei"
    SSDU = "ssdu"
    PHASE2PHASE = "phase2phase"
    SURE = "sure"
    DDEI_SURE = "ddei_sure"
    SUPERVISED = "supervised"


class Metric(str, Enum):
    L2 = "l2"
    L1 = "l1"


@dataclass(frozen=True)
class LossConfig:
    kind: LossKind = LossKind.DDEI
    alpha: float = 1.0
    metric: Metric = Metric.L2
    ssdu_input_fraction: float = 0.6
    sure_sigma: float = 0.0
    sure_probe_eps: float = 1e-3   # relative to the RMS of the sampled measurements
    redraw_mask: bool = False      # fresh mask for the second equivariance pass
    group: GroupConfig = field(default_factory=GroupConfig)

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        object.__setattr__(self, "metric", Metric(self.metric))
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if not 0 < self.ssdu_input_fraction < 1:
            raise ConfigError("ssdu_input_fraction must lie in (0, 1)")
        if self.sure_sigma < 0:
            raise ConfigError("sure_sigma must be non-negative")
        if self.sure_probe_eps <= 0:
            raise ConfigError("sure_probe_eps must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "alpha": self.alpha,
            "metric": self.metric.value,
            "ssdu_input_fraction": self.ssdu_input_fraction,
            "sure_sigma": self.sure_sigma,
            "sure_probe_eps": self.sure_probe_eps,
            "redraw_mask": self.redraw_mask,
            "group_config": self.group.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        known = {
            "kind", "alpha", "metric", "ssdu_input_fraction", "sure_sigma",
            "sure_probe_eps", "redraw_mask", "group_config",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown loss config keys: {sorted(unknown)}")
        d = dict(d)
        group = d.pop("group_config", None)
        if group is not None:
            d["group"] = GroupConfig.from_dict(group)
        return cls(**d)


# Substream labels: every stochastic loss consumes its generator exactly once
# and derives per-purpose streams from that single draw. This keeps the probe
# of the SURE term and the group element of the equivariance term independent
# of each other's presence (alpha = 0 reproduces the plain SURE value, and a
# vanishing noise level reproduces the plain equivariance value, for the same
# incoming generator state).
_STREAM_PROBE = 0
_STREAM_GROUP = 1
_STREAM_SPLIT = 2
_STREAM_MASK = 3


def _fork(rng: torch.Generator) -> "_Substreams":
    base = int(torch.randint(0, 2**62, (1,), generator=rng).item())
    return _Substreams(base)


class _Substreams:
    def __init__(self, base: int):
        self._base = base

    def get(self, label: int) -> torch.Generator:
        seed = int(np.random.SeedSequence((self._base, label)).generate_state(1, np.uint64)[0])
        gen = torch.Generator()
        gen.manual_seed(seed)
        return gen


def _reduce(diff: torch.Tensor, metric: Metric) -> torch.Tensor:
    """Mean L2 or L1 of a (possibly complex) residual, 64-bit accumulation."""
    if metric is Metric.L2:
        return (diff.real.to(torch.float64) ** 2 + diff.imag.to(torch.float64) ** 2).mean()
    return torch.sqrt(
        diff.real.to(torch.float64) ** 2 + diff.imag.to(torch.float64) ** 2
    ).mean()


def _measurement_residual(model: nn.Module, y: KTSequence, masks: Masks,
                          metric: Metric) -> torch.Tensor:
    xhat = reconstruct(model, y, masks)
    khat = forward(xhat, masks)
    return _reduce((khat.data - y.data)[masks.data], metric)


def loss_mc(model: nn.Module, y: KTSequence, masks: Masks | None = None,
            config: LossConfig | None = None) -> torch.Tensor:
    """Measurement consistency: residual of A f(y) against y at sampled entries."""
    masks = y.masks if masks is None else masks
    metric = (config or LossConfig(kind=LossKind.MC)).metric
    return _measurement_residual(model, y, masks, metric)


def _equivariance_term(model: nn.Module, x1: ImageSequence, masks: Masks,
                       config: LossConfig, streams: _Substreams) -> torch.Tensor:
    g = sample_group(config.group, x1.t_frames, streams.get(_STREAM_GROUP))
    x2 = act(g, x1)
    if config.redraw_mask:
        seed = int(torch.randint(0, 2**31 - 1, (1,), generator=streams.get(_STREAM_MASK)).item())
        masks = sample_masks(masks.spec, *x1.shape, np.random.default_rng(seed))
    y2 = forward(x2, masks)
    x2hat = reconstruct(model, y2, masks)
    return _reduce(x2.data - x2hat.data, config.metric)


def loss_ddei(model: nn.Module, y: KTSequence, masks: Masks | None,
              config: LossConfig, rng: torch.Generator) -> torch.Tensor:
    """Measurement consistency plus the transform-equivariance penalty."""
    masks = y.masks if masks is None else masks
    streams = _fork(rng)
    value = _measurement_residual(model, y, masks, config.metric)
    if config.alpha > 0:
        x1 = reconstruct(model, y, masks)
        value = value + config.alpha * _equivariance_term(model, x1, masks, config, streams)
    return value


def split_measurements(
    y: KTSequence, masks: Masks, fraction: float, rng: torch.Generator
) -> tuple[KTSequence, Masks, KTSequence, Masks]:
    """Partition sampled columns of each frame into input and loss sets.

    The input set keeps ``fraction`` of the sampled columns and always
    contains the ACS block; the loss set is drawn from the remaining columns
    with the same Gaussian column density used for mask generation. Raises
    when a frame has too few non-ACS columns to leave a nonempty loss set.
    """
    if not 0 < fraction < 1:
        raise ConfigError("split fraction must lie in (0, 1)")
    t, h, w = masks.shape
    cols = masks.data[:, 0, :]
    lo, hi = acs_column_range(w, masks.spec.acs_lines)
    scale = GAUSSIAN_SPLIT_SCALE * w
    density = torch.exp(
        -((torch.arange(w, dtype=torch.float64) - w / 2.0) ** 2) / (2.0 * scale * scale)
    )

    loss_cols = torch.zeros_like(cols)
    for ti in range(t):
        sampled = torch.nonzero(cols[ti], as_tuple=False).flatten()
        non_acs = sampled[(sampled < lo) | (sampled >= hi)]
        n_loss = int(len(sampled) - round(fraction * len(sampled)))
        if n_loss < 1:
            raise ValueError(
                f"frame {ti}: input fraction {fraction} leaves an empty loss set"
            )
        if n_loss > len(non_acs):
            raise ValueError(
                f"frame {ti}: only {len(non_acs)} non-ACS sampled columns, "
                f"cannot hold out {n_loss}"
            )
        pick = torch.multinomial(density[non_acs], n_loss, replacement=False, generator=rng)
        loss_cols[ti, non_acs[pick]] = True

    loss_data = loss_cols[:, None, :].expand(t, h, w)
    m2 = Masks(data=loss_data, spec=replace(masks.spec, acs_lines=0))
    m1 = Masks(data=masks.data & ~loss_data, spec=masks.spec)
    y1 = KTSequence(data=y.data * m1.data, masks=m1)
    y2 = KTSequence(data=y.data * m2.data, masks=m2)
    return y1, m1, y2, m2


def loss_ssdu(model: nn.Module, y: KTSequence, masks: Masks | None,
              config: LossConfig, rng: torch.Generator) -> torch.Tensor:
    """Measurement-splitting objective: reconstruct from the input set, score
    the re-measured output on the held-out set."""
    masks = y.masks if masks is None else masks
    split_rng = _fork(rng).get(_STREAM_SPLIT)
    y1, m1, y2, m2 = split_measurements(y, masks, config.ssdu_input_fraction, split_rng)
    xhat = reconstruct(model, y1, m1)
    khat = forward(xhat, m2)
    return _reduce((khat.data - y2.data)[m2.data], config.metric)


def loss_phase2phase(model: nn.Module, y: KTSequence, masks: Masks | None,
                     config: LossConfig) -> torch.Tensor:
    """Temporal split: reconstruct from one frame parity, score on the other.

    Both directions (even->odd and odd->even) are averaged. Requires even T.
    """
    masks = y.masks if masks is None else masks
    t = y.shape[0]
    if t % 2:
        raise ValueError(f"phase2phase needs an even number of frames, got {t}")

    spec_free = replace(masks.spec, acs_lines=0)

    def one_direction(input_parity: int) -> torch.Tensor:
        keep = torch.zeros(t, dtype=torch.bool)
        keep[input_parity::2] = True
        m_in = Masks(data=masks.data & keep[:, None, None], spec=spec_free)
        y_in = KTSequence(data=y.data * m_in.data, masks=m_in)
        xhat = reconstruct(model, y_in, m_in)
        m_out = Masks(data=masks.data & ~keep[:, None, None], spec=spec_free)
        khat = forward(xhat, m_out)
        return _reduce((khat.data - y.data * m_out.data)[m_out.data], config.metric)

    return 0.5 * (one_direction(0) + one_direction(1))


def _rademacher_probe(y: KTSequence, rng: torch.Generator) -> torch.Tensor:
    """Complex Rademacher probe supported on the sampled entries, E|b|^2 = 1."""
    shape = y.data.shape
    re = torch.randint(0, 2, shape, generator=rng, dtype=torch.float32) * 2.0 - 1.0
    im = torch.randint(0, 2, shape, generator=rng, dtype=torch.float32) * 2.0 - 1.0
    b = torch.complex(re, im) / np.sqrt(2.0)
    return b * y.masks.data


def _sure_term(model: nn.Module, y: KTSequence, masks: Masks, config: LossConfig,
               probe_rng: torch.Generator) -> torch.Tensor:
    sigma = config.sure_sigma
    mask = masks.data
    m = int(mask.sum().item())
    rms = float(torch.sqrt((y.data.detach().abs() ** 2)[mask].mean()).item())
    eps = config.sure_probe_eps * max(rms, 1e-12)

    h1 = forward(reconstruct(model, y, masks), masks).data
    resid = _reduce((h1 - y.data)[mask], Metric.L2)

    b = _rademacher_probe(y, probe_rng)
    y_pert = KTSequence(data=y.data + eps * b, masks=masks)
    h2 = forward(reconstruct(model, y_pert, masks), masks).data
    delta = (h2 - h1)[mask]
    bm = b[mask]
    div = (
        bm.real.to(torch.float64) * delta.real.to(torch.float64)
        + bm.imag.to(torch.float64) * delta.imag.to(torch.float64)
    ).sum() / eps
    return resid - sigma**2 + (2.0 * sigma**2 / m) * div


def loss_sure(model: nn.Module, y: KTSequence, masks: Masks | None,
              config: LossConfig, rng: torch.Generator) -> torch.Tensor:
    """Unbiased estimate of the measurement-domain MSE under Gaussian noise."""
    masks = y.masks if masks is None else masks
    if config.sure_sigma <= 0:
        raise ConfigError("sure losses require sure_sigma > 0")
    return _sure_term(model, y, masks, config, _fork(rng).get(_STREAM_PROBE))


def loss_ddei_sure(model: nn.Module, y: KTSequence, masks: Masks | None,
                   config: LossConfig, rng: torch.Generator) -> torch.Tensor:
    """SURE data term plus the equivariance penalty (noisy-measurement variant).

    Probe and group element come from independent substreams of the same
    generator draw, so alpha = 0 reproduces :func:`loss_sure` exactly and the
    equivariance term matches the one :func:`loss_ddei` would compute.
    """
    masks = y.masks if masks is None else masks
    if config.sure_sigma <= 0:
        raise ConfigError("sure losses require sure_sigma > 0")
    streams = _fork(rng)
    value = _sure_term(model, y, masks, config, streams.get(_STREAM_PROBE))
    if config.alpha > 0:
        x1 = reconstruct(model, y, masks)
        value = value + config.alpha * _equivariance_term(model, x1, masks, config, streams)
    return value


def loss_supervised(model: nn.Module, y: KTSequence, masks: Masks | None,
                    x_gt: ImageSequence, config: LossConfig | None = None) -> torch.Tensor:
    """Oracle objective against the ground-truth sequence (all entries)."""
    masks = y.masks if masks is None else masks
    metric = (config or LossConfig(kind=LossKind.SUPERVISED)).metric
    xhat = reconstruct(model, y, masks)
    return _reduce(xhat.data - x_gt.data, metric)


def tssdu_star_reconstruct(model: nn.Module, y: KTSequence, masks: Masks | None,
                           n_splits: int, fraction: float,
                           rng: torch.Generator) -> ImageSequence:
    """Test-time averaging over independent input-side splits."""
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    masks = y.masks if masks is None else masks
    split_rng = _fork(rng).get(_STREAM_SPLIT)
    acc = None
    for _ in range(n_splits):
        y1, m1, _, _ = split_measurements(y, masks, fraction, split_rng)
        xhat = reconstruct(model, y1, m1)
        acc = xhat.data if acc is None else acc + xhat.data
    return ImageSequence(data=acc / n_splits)


def compute_loss(model: nn.Module, config: LossConfig, y: KTSequence,
                 masks: Masks | None = None, x_gt: ImageSequence | None = None,
                 rng: torch.Generator | None = None) -> torch.Tensor:
    """Dispatch to the configured objective."""
    kind = config.kind
    if kind in (LossKind.DDEI, LossKind.SSDU, LossKind.SURE, LossKind.DDEI_SURE) and rng is None:
        raise ConfigError(f"loss '{kind.value}' needs a random generator")
    if kind is LossKind.MC:
        return loss_mc(model, y, masks, config)
    if kind is LossKind.DDEI:
        return loss_ddei(model, y, masks, config, rng)
    if kind is LossKind.SSDU:
        return loss_ssdu(model, y, masks, config, rng)
    if kind is LossKind.PHASE2PHASE:
        return loss_phase2phase(model, y, masks, config)
    if kind is LossKind.SURE:
        return loss_sure(model, y, masks, config, rng)
    if kind is LossKind.DDEI_SURE:
        return loss_ddei_sure(model, y, masks, config, rng)
    if kind is LossKind.SUPERVISED:
        if x_gt is None:
            raise ConfigError("supervised loss needs the ground-truth sequence")
        return loss_supervised(model, y, masks, x_gt, config)
    raise ConfigError(f"unhandled loss kind {kind}")
