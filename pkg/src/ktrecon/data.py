"""Synthetic dynamic phantoms, sequence/mask file formats, dataset manifests.

The phantom is a cardiac-like scene: a pulsating annulus plus a handful of
soft-edged ellipses that translate and rotate smoothly across the frames. All
temporal modulations complete whole cycles over the sequence, so the video
loops seamlessly and circular time shifts stay within the same scene family.

On-disk formats (all little-endian, integers as decimal JSON):

* ``NNNN.seq``      raw interleaved (real, imag) float32, row-major [T, H, W]
* ``NNNN.seq.json`` sidecar {"dims": [T, H, W], "dtype": "c64", "version": 1}
* ``NNNN.mask``     raw uint8 [T, H, W]
* ``NNNN.mask.json`` sidecar with dims, dtype "u8", version and the mask spec
* ``manifest.json`` dataset index with ids, paths, dims and train/test split
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import (
    ConfigError,
    CorruptHeaderError,
    DataError,
    SizeMismatchError,
    UnknownVersionError,
)
from .forward_model import Masks, MaskSpec
from .video import ImageSequence, _ifft2c

FORMAT_VERSION = 1


@dataclass(frozen=True)
class PhantomConfig:
    t: int = 12
    h: int = 64
    w: int = 64
    n_ellipses: int = 4
    motion_amplitude: float = 0.1
    pulsation_amplitude: float = 0.12
    phase_texture: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.t < 1:
            raise ConfigError("need at least one frame")
        if self.h % 2 or self.w % 2:
            raise ConfigError("phantom dimensions must be even")
        for name in ("motion_amplitude", "pulsation_amplitude"):
            v = getattr(self, name)
            if not 0 <= v <= 0.3:
                raise ConfigError(f"{name} must lie in [0, 0.3], got {v}")

    def to_dict(self) -> dict:
        return {
            "t": self.t, "h": self.h, "w": self.w,
            "n_ellipses": self.n_ellipses,
            "motion_amplitude": self.motion_amplitude,
            "pulsation_amplitude": self.pulsation_amplitude,
            "phase_texture": self.phase_texture,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        known = {"t", "h", "w", "n_ellipses", "motion_amplitude",
                 "pulsation_amplitude", "phase_texture", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown phantom config keys: {sorted(unknown)}")
        return cls(**d)


def _soft_edge(signed_dist: np.ndarray, width: float) -> np.ndarray:
    """Smooth 0..1 step of a signed distance (positive = inside)."""
    return 1.0 / (1.0 + np.exp(-signed_dist / width))


def generate_phantom(config: PhantomConfig, rng: np.random.Generator) -> ImageSequence:
    """Deterministic cardiac-like complex video with magnitudes in [0, 1]."""
    t, h, w = config.t, config.h, config.w
    ys, xs = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    edge = 2.5 / min(h, w)

    frames = np.zeros((t, h, w))

    # faint body outline, static
    body = _soft_edge(0.92 - np.sqrt((xs / 0.95) ** 2 + (ys / 0.9) ** 2), edge) * 0.15
    frames += body[None]

    # pulsating annulus around the center
    r0 = 0.42
    wall = 0.38
    phase0 = rng.uniform(0, 2 * np.pi)
    r = np.sqrt(xs**2 + ys**2)
    for ti in range(t):
        scale = 1.0 + config.pulsation_amplitude * np.sin(2 * np.pi * ti / t + phase0)
        outer = r0 * scale
        inner = outer * (1.0 - wall)
        ring = _soft_edge(outer - r, edge) * _soft_edge(r - inner, edge)
        frames[ti] = np.maximum(frames[ti], 0.85 * ring)

    # drifting, slowly rotating ellipses
    for _ in range(config.n_ellipses):
        cx, cy = rng.uniform(-0.55, 0.55, size=2)
        ax_a = rng.uniform(0.10, 0.28)
        ax_b = rng.uniform(0.06, 0.2)
        theta0 = rng.uniform(0, np.pi)
        intensity = rng.uniform(0.35, 0.95)
        direction = rng.uniform(0, 2 * np.pi)
        cycles = int(rng.integers(1, 3))
        psi = rng.uniform(0, 2 * np.pi)
        spin = rng.uniform(-0.4, 0.4)
        for ti in range(t):
            osc = np.sin(2 * np.pi * cycles * ti / t + psi)
            ox = cx + config.motion_amplitude * np.cos(direction) * osc
            oy = cy + config.motion_amplitude * np.sin(direction) * osc
            th = theta0 + spin * np.sin(2 * np.pi * ti / t + psi)
            ct, st = np.cos(th), np.sin(th)
            u = (xs - ox) * ct + (ys - oy) * st
            v = -(xs - ox) * st + (ys - oy) * ct
            dist = 1.0 - np.sqrt((u / ax_a) ** 2 + (v / ax_b) ** 2)
            blob = _soft_edge(dist * min(ax_a, ax_b), edge)
            frames[ti] = np.maximum(frames[ti], intensity * blob)

    frames = np.clip(frames, 0.0, 1.0)

    if config.phase_texture:
        coeffs = rng.uniform(-1.2, 1.2, size=5)
        phase = (coeffs[0] * xs + coeffs[1] * ys + coeffs[2] * xs * ys
                 + coeffs[3] * xs**2 + coeffs[4] * ys**2)
        data = frames * np.exp(1j * phase)[None]
    else:
        data = frames.astype(np.complex128)

    return ImageSequence(data=torch.from_numpy(data.astype(np.complex64)))


def standardize(x: ImageSequence) -> tuple[ImageSequence, float]:
    """Divide by the peak magnitude; returns the scale so it can be undone."""
    scale = float(x.data.abs().max().item())
    if scale == 0:
        raise ValueError("cannot standardize an all-zero sequence")
    return ImageSequence(data=x.data / scale), scale


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _read_sidecar(path: Path, expected_dtype: str) -> dict:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise CorruptHeaderError(f"missing sidecar {sidecar}")
    try:
        header = json.loads(sidecar.read_text())
    except json.JSONDecodeError as e:
        raise CorruptHeaderError(f"unparseable sidecar {sidecar}: {e}") from e
    for key in ("dims", "dtype", "version"):
        if key not in header:
            raise CorruptHeaderError(f"sidecar {sidecar} missing key '{key}'")
    if header["version"] != FORMAT_VERSION:
        raise UnknownVersionError(
            f"{path}: format version {header['version']}, expected {FORMAT_VERSION}"
        )
    if header["dtype"] != expected_dtype:
        raise CorruptHeaderError(f"{path}: dtype {header['dtype']!r}, expected {expected_dtype!r}")
    dims = header["dims"]
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(d, int) for d in dims)):
        raise CorruptHeaderError(f"{path}: bad dims {dims!r}")
    return header


def save_sequence(x: ImageSequence, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = x.data.detach().cpu().numpy().astype("<c8").tobytes()
    path.write_bytes(blob)
    _sidecar_path(path).write_text(json.dumps(
        {"dims": list(x.shape), "dtype": "c64", "version": FORMAT_VERSION}
    ))


def load_sequence(path: str | os.PathLike) -> ImageSequence:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such sequence file: {path}")
    header = _read_sidecar(path, "c64")
    dims = header["dims"]
    blob = path.read_bytes()
    expected = int(np.prod(dims)) * 8
    if len(blob) != expected:
        raise SizeMismatchError(
            f"{path}: blob holds {len(blob)} bytes but dims {dims} need {expected}"
        )
    arr = np.frombuffer(blob, dtype="<c8").reshape(dims)
    return ImageSequence(data=torch.from_numpy(arr.copy()))


def save_masks(masks: Masks, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = masks.data.cpu().numpy().astype("<u1").tobytes()
    path.write_bytes(blob)
    _sidecar_path(path).write_text(json.dumps({
        "dims": list(masks.shape), "dtype": "u8", "version": FORMAT_VERSION,
        "mask_spec": masks.spec.to_dict(),
    }))


def load_masks(path: str | os.PathLike) -> Masks:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such mask file: {path}")
    header = _read_sidecar(path, "u8")
    dims = header["dims"]
    blob = path.read_bytes()
    expected = int(np.prod(dims))
    if len(blob) != expected:
        raise SizeMismatchError(
            f"{path}: blob holds {len(blob)} bytes but dims {dims} need {expected}"
        )
    if "mask_spec" not in header:
        raise CorruptHeaderError(f"{path}: sidecar missing mask_spec")
    spec = MaskSpec.from_dict(header["mask_spec"])
    arr = np.frombuffer(blob, dtype="<u1").reshape(dims)
    return Masks(data=torch.from_numpy(arr.copy()), spec=spec)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    dims: tuple[int, int, int]
    split: str
    mask_path: str | None = None
    mask_spec: MaskSpec | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "path": self.path, "dims": list(self.dims), "split": self.split}
        if self.mask_path is not None:
            d["mask_path"] = self.mask_path
        if self.mask_spec is not None:
            d["mask_spec"] = self.mask_spec.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        known = {"id", "path", "dims", "split", "mask_path", "mask_spec"}
        unknown = set(d) - known
        if unknown:
            raise CorruptHeaderError(f"unknown manifest entry keys: {sorted(unknown)}")
        if d["split"] not in ("train", "test"):
            raise CorruptHeaderError(f"bad split {d['split']!r}")
        spec = d.get("mask_spec")
        return cls(
            id=d["id"], path=d["path"], dims=tuple(d["dims"]), split=d["split"],
            mask_path=d.get("mask_path"),
            mask_spec=MaskSpec.from_dict(spec) if spec is not None else None,
        )


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    format_version: int = FORMAT_VERSION
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate ids in manifest")

    def split(self, which: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == which]

    def entry(self, entry_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise DataError(f"no entry with id {entry_id!r}")

    def sequence_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def load(self, entry: ManifestEntry) -> ImageSequence:
        return load_sequence(self.sequence_path(entry))

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        payload = {
            "format_version": self.format_version,
            "entries": [e.to_dict() for e in self.entries],
        }
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(payload, indent=2))
        os.replace(tmp, path)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such manifest: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CorruptHeaderError(f"unparseable manifest {path}: {e}") from e
    if payload.get("format_version") != FORMAT_VERSION:
        raise UnknownVersionError(
            f"{path}: manifest version {payload.get('format_version')}, "
            f"expected {FORMAT_VERSION}"
        )
    entries = [ManifestEntry.from_dict(d) for d in payload["entries"]]
    manifest = DatasetManifest(entries=entries, root=path.parent)
    missing = [e.id for e in entries if not manifest.sequence_path(e).exists()]
    if missing:
        raise DataError(f"manifest {path} references missing files: {missing}")
    return manifest


def build_dataset(
    n_sequences: int,
    phantom_config: PhantomConfig,
    split_fraction: float,
    out_dir: str | os.PathLike,
    seed: int,
) -> DatasetManifest:
    """Generate, standardize and store a phantom dataset with a train/test split."""
    if n_sequences < 2:
        raise ConfigError("need at least 2 sequences to split")
    if not 0 < split_fraction < 1:
        raise ConfigError("split_fraction must lie in (0, 1)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    n_train = int(round(split_fraction * n_sequences))
    order = np.random.default_rng(np.random.SeedSequence((seed, 0))).permutation(n_sequences)
    split_of = {int(idx): ("train" if pos < n_train else "test")
                for pos, idx in enumerate(order)}

    entries = []
    for i in range(n_sequences):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 1, i)))
        x = generate_phantom(phantom_config, rng)
        x, _ = standardize(x)
        name = f"{i:04d}.seq"
        save_sequence(x, out_dir / name)
        entries.append(ManifestEntry(
            id=f"{i:04d}", path=name, dims=x.shape, split=split_of[i],
        ))

    manifest = DatasetManifest(entries=entries, root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest


def ingest_external(
    path: str | os.PathLike,
    dims: tuple[int, int, int],
    out_dir: str | os.PathLike,
    entry_id: str = "ext0000",
    split: str = "test",
) -> ManifestEntry:
    """Convert a raw complex k-t-space file (repo binary format) to a sequence.

    Applies the centered inverse FFT per frame, center-crops to the requested
    spatial dims, standardizes and writes the result into out_dir.
    """
    kspace = load_sequence(path)  # same container, k-space content
    t, h, w = kspace.shape
    td, hd, wd = dims
    if td != t or hd > h or wd > w or hd % 2 or wd % 2:
        raise DataError(
            f"requested dims {dims} incompatible with file dims {(t, h, w)}"
        )
    img = _ifft2c(kspace.data)
    top, left = (h - hd) // 2, (w - wd) // 2
    img = img[:, top:top + hd, left:left + wd]
    x, _ = standardize(ImageSequence(data=img))
    out_dir = Path(out_dir)
    name = f"{entry_id}.seq"
    save_sequence(x, out_dir / name)
    return ManifestEntry(id=entry_id, path=name, dims=x.shape, split=split)
