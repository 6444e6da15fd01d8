"""The diffeo-temporal transformation group and its action on videos.

Elements combine three factors: a dihedral time symmetry (circular shift plus
optional reversal of the frame axis), an in-plane rotation, and a small
piecewise-affine diffeomorphism (see cpab.py). A single spatial transform is
shared by all frames of a sequence so the transformed video stays temporally
coherent; the composite action applies diffeo, then rotation, then the
temporal permutation.

All actions are differentiable with respect to the input video: spatial
transforms use bilinear grid sampling (zero fill outside the frame), the
temporal factor is an exact permutation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from . import cpab
from .video import ImageSequence


@dataclass(frozen=True)
class TemporalElement:
    """Element (shift, reflect) of the dihedral group on T frames.

    The action reverses frame order first when ``reflect`` is set, then
    circularly shifts by ``shift``. Composition and inversion are exact
    integer arithmetic.
    """

    shift: int
    reflect: bool
    t_frames: int

    def __post_init__(self):
        if self.t_frames < 1:
            raise ValueError("t_frames must be >= 1")
        if not 0 <= self.shift < self.t_frames:
            raise ValueError(f"shift {self.shift} outside [0, {self.t_frames})")

    @classmethod
    def identity(cls, t_frames: int) -> "TemporalElement":
        return cls(shift=0, reflect=False, t_frames=t_frames)

    def compose(self, other: "TemporalElement") -> "TemporalElement":
        """Element acting as self after other."""
        if self.t_frames != other.t_frames:
            raise ValueError("cannot compose elements over different frame counts")
        sign = -1 if self.reflect else 1
        shift = (self.shift + sign * other.shift) % self.t_frames
        return TemporalElement(shift=shift, reflect=self.reflect ^ other.reflect,
                               t_frames=self.t_frames)

    def inverse(self) -> "TemporalElement":
        if self.reflect:
            return self
        return TemporalElement(shift=(-self.shift) % self.t_frames, reflect=False,
                               t_frames=self.t_frames)

    @property
    def is_identity(self) -> bool:
        return self.shift == 0 and not self.reflect


@dataclass(frozen=True)
class RotationElement:
    """In-plane rotation about the frame center, in degrees."""

    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % 360.0)

    @classmethod
    def identity(cls) -> "RotationElement":
        return cls(angle=0.0)

    def compose(self, other: "RotationElement") -> "RotationElement":
        return RotationElement(angle=self.angle + other.angle)

    def inverse(self) -> "RotationElement":
        return RotationElement(angle=-self.angle)

    @property
    def is_identity(self) -> bool:
        return self.angle == 0.0


@dataclass(frozen=True)
class CpabElement:
    """Coefficients of a piecewise-affine velocity field plus its tessellation."""

    params: np.ndarray
    tess: tuple[int, int] = (4, 4)
    magnitude: float = 0.3
    steps: int = 10

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        basis_dim = cpab.get_tessellation(*self.tess).dim
        if params.shape != (basis_dim,):
            raise ValueError(
                f"expected {basis_dim} parameters for tessellation {self.tess}, "
                f"got shape {params.shape}"
            )
        params = params.copy()
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @classmethod
    def identity(cls, tess: tuple[int, int] = (4, 4), steps: int = 10) -> "CpabElement":
        dim = cpab.get_tessellation(*tess).dim
        return cls(params=np.zeros(dim), tess=tess, magnitude=0.0, steps=steps)

    def inverse(self) -> "CpabElement":
        return replace(self, params=-self.params)

    @property
    def is_identity(self) -> bool:
        return not self.params.any()


@dataclass(frozen=True)
class GroupConfig:
    """Which group factors are active, and their sampling magnitudes."""

    use_temporal: bool = True
    use_rotation: bool = True
    use_cpab: bool = True
    rotation_discrete: bool = False   # multiples of 90 degrees instead of SO(2)
    cpab_tess: tuple[int, int] = (4, 4)
    cpab_sigma: float = 0.3
    cpab_steps: int = 10

    def to_dict(self) -> dict:
        return {
            "use_temporal": self.use_temporal,
            "use_rotation": self.use_rotation,
            "use_cpab": self.use_cpab,
            "rotation_discrete": self.rotation_discrete,
            "cpab_tess": list(self.cpab_tess),
            "cpab_sigma": self.cpab_sigma,
            "cpab_steps": self.cpab_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupConfig":
        from .errors import ConfigError

        known = {
            "use_temporal", "use_rotation", "use_cpab", "rotation_discrete",
            "cpab_tess", "cpab_sigma", "cpab_steps",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown group config keys: {sorted(unknown)}")
        d = dict(d)
        if "cpab_tess" in d:
            d["cpab_tess"] = tuple(d["cpab_tess"])
        return cls(**d)


@dataclass(frozen=True)
class GroupElement:
    """One draw g from the product group, with per-factor enable flags."""

    temporal: TemporalElement
    rotation: RotationElement
    cpab: CpabElement
    use_temporal: bool = True
    use_rotation: bool = True
    use_cpab: bool = True

    def __post_init__(self):
        if not self.use_temporal and not self.temporal.is_identity:
            raise ValueError("disabled temporal factor must be the identity")
        if not self.use_rotation and not self.rotation.is_identity:
            raise ValueError("disabled rotation factor must be the identity")
        if not self.use_cpab and not self.cpab.is_identity:
            raise ValueError("disabled diffeo factor must be the identity")

    @classmethod
    def identity(cls, t_frames: int, config: GroupConfig | None = None) -> "GroupElement":
        config = config or GroupConfig()
        return cls(
            temporal=TemporalElement.identity(t_frames),
            rotation=RotationElement.identity(),
            cpab=CpabElement.identity(config.cpab_tess, config.cpab_steps),
            use_temporal=config.use_temporal,
            use_rotation=config.use_rotation,
            use_cpab=config.use_cpab,
        )

    @property
    def is_identity(self) -> bool:
        return self.temporal.is_identity and self.rotation.is_identity and self.cpab.is_identity


def sample_group(config: GroupConfig, t_frames: int, rng: torch.Generator) -> GroupElement:
    """Draw a random group element; disabled factors come out as identities.

    Shift is uniform over [0, T), reflection fair, angle uniform over
    [0, 360) (or k*90), diffeo parameters i.i.d. normal with std cpab_sigma.
    Consumes the generator in a fixed order so draws are reproducible.
    """
    if t_frames < 1:
        raise ValueError("t_frames must be >= 1")
    temporal = TemporalElement.identity(t_frames)
    if config.use_temporal:
        shift = int(torch.randint(0, t_frames, (1,), generator=rng).item())
        reflect = bool(torch.randint(0, 2, (1,), generator=rng).item())
        temporal = TemporalElement(shift=shift, reflect=reflect, t_frames=t_frames)

    rotation = RotationElement.identity()
    if config.use_rotation:
        if config.rotation_discrete:
            angle = 90.0 * int(torch.randint(0, 4, (1,), generator=rng).item())
        else:
            angle = 360.0 * float(torch.rand(1, generator=rng).item())
        rotation = RotationElement(angle=angle)

    cpab_el = CpabElement.identity(config.cpab_tess, config.cpab_steps)
    if config.use_cpab:
        dim = cpab.get_tessellation(*config.cpab_tess).dim
        params = torch.randn(dim, generator=rng, dtype=torch.float64) * config.cpab_sigma
        cpab_el = CpabElement(
            params=params.numpy(), tess=config.cpab_tess,
            magnitude=config.cpab_sigma, steps=config.cpab_steps,
        )

    return GroupElement(
        temporal=temporal, rotation=rotation, cpab=cpab_el,
        use_temporal=config.use_temporal,
        use_rotation=config.use_rotation,
        use_cpab=config.use_cpab,
    )


def inverse(g: GroupElement) -> GroupElement:
    """Factor-wise inverse: exact for the dihedral part, negated angle and
    negated flow parameters otherwise."""
    return GroupElement(
        temporal=g.temporal.inverse(),
        rotation=g.rotation.inverse(),
        cpab=g.cpab.inverse(),
        use_temporal=g.use_temporal,
        use_rotation=g.use_rotation,
        use_cpab=g.use_cpab,
    )


def act_temporal(g: TemporalElement, x: ImageSequence) -> ImageSequence:
    """Exact frame permutation: optional time reversal, then circular shift."""
    if g.t_frames != x.t_frames:
        raise ValueError(f"element is over {g.t_frames} frames, sequence has {x.t_frames}")
    data = x.data
    if g.reflect:
        data = torch.flip(data, dims=(0,))
    if g.shift:
        data = torch.roll(data, shifts=g.shift, dims=0)
    return ImageSequence(data=data)


def _bilinear_sample(frames: torch.Tensor, src_cols: torch.Tensor,
                     src_rows: torch.Tensor) -> torch.Tensor:
    """Sample complex frames [T, H, W] at source pixel coordinates [H, W].

    Bilinear on real and imaginary channels, zero fill outside the frame.
    """
    t, h, w = frames.shape
    grid_x = 2.0 * src_cols / (w - 1) - 1.0
    grid_y = 2.0 * src_rows / (h - 1) - 1.0
    grid = torch.stack([grid_x, grid_y], dim=-1).to(torch.float32)
    grid = grid.unsqueeze(0).expand(t, h, w, 2)
    channels = torch.stack([frames.real, frames.imag], dim=1).to(torch.float32)
    warped = F.grid_sample(channels, grid, mode="bilinear",
                           padding_mode="zeros", align_corners=True)
    return torch.complex(warped[:, 0], warped[:, 1])


def _rotate_frames(angle_deg: float, frames: torch.Tensor) -> torch.Tensor:
    if angle_deg % 360.0 == 0.0:
        return frames
    _, h, w = frames.shape
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows = torch.arange(h, dtype=torch.float64).view(h, 1).expand(h, w)
    cols = torch.arange(w, dtype=torch.float64).view(1, w).expand(h, w)
    # backward map: rotate output coordinates by -angle about the center
    rel_x, rel_y = cols - cx, rows - cy
    src_cols = cos_t * rel_x + sin_t * rel_y + cx
    src_rows = -sin_t * rel_x + cos_t * rel_y + cy
    return _bilinear_sample(frames, src_cols, src_rows)


def act_rotate(g: RotationElement, frame: torch.Tensor) -> torch.Tensor:
    """Rotate one complex frame [H, W] about the image center.

    Angle 0 returns the input unchanged; otherwise bilinear interpolation with
    zero fill, applied identically to real and imaginary parts.
    """
    if frame.ndim != 2:
        raise ValueError("act_rotate expects a single [H, W] frame")
    return _rotate_frames(g.angle, frame.unsqueeze(0))[0]


def cpab_velocity(e: CpabElement, points: np.ndarray) -> np.ndarray:
    """Velocity of the element's field at points inside the unit square."""
    return cpab.velocity_at(cpab.get_tessellation(*e.tess), e.params, points)


def cpab_integrate(e: CpabElement, grid: np.ndarray, steps: int | None = None) -> np.ndarray:
    """Displacement of the unit-time flow at grid points.

    ``grid`` may be [..., 2]; the displacement has the same shape.
    """
    steps = e.steps if steps is None else steps
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape[-1] != 2:
        raise ValueError("grid must have coordinate pairs in the last axis")
    flat = grid.reshape(-1, 2)
    disp = cpab.integrate_flow(cpab.get_tessellation(*e.tess), e.params, flat, steps)
    return disp.reshape(grid.shape)


def _unit_grid(h: int, w: int) -> np.ndarray:
    ys = np.linspace(0.0, 1.0, h)
    xs = np.linspace(0.0, 1.0, w)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def _warp_frames(e: CpabElement, frames: torch.Tensor) -> torch.Tensor:
    if e.is_identity:
        return frames
    _, h, w = frames.shape
    grid = _unit_grid(h, w)
    # backward warp with the flow of the negated parameters, so that
    # warping by e and then by e.inverse() approximately cancels
    disp = cpab_integrate(replace(e, params=-np.asarray(e.params)), grid)
    src = grid + disp
    src_cols = torch.from_numpy(src[..., 0] * (w - 1))
    src_rows = torch.from_numpy(src[..., 1] * (h - 1))
    return _bilinear_sample(frames, src_cols, src_rows)


def act_diffeo(e: CpabElement, frame: torch.Tensor) -> torch.Tensor:
    """Warp one complex frame [H, W] by the element's diffeomorphism."""
    if frame.ndim != 2:
        raise ValueError("act_diffeo expects a single [H, W] frame")
    return _warp_frames(e, frame.unsqueeze(0))[0]


def act(g: GroupElement, x: ImageSequence) -> ImageSequence:
    """Composite action: per-frame diffeo, per-frame rotation, then the
    temporal permutation. Differentiable in x."""
    data = x.data
    data = _warp_frames(g.cpab, data)
    data = _rotate_frames(g.rotation.angle, data)
    return act_temporal(g.temporal, ImageSequence(data=data))
