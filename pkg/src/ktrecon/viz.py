"""Visual export: magnitude videos as GIFs or PNG frame stacks, and demo
renders of random group transforms applied to a sample sequence."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import load_sequence
from .errors import ConfigError
from .groups import GroupConfig, act, sample_group
from .video import ImageSequence

GIF_FPS = 10


def _to_uint8_frames(x: ImageSequence) -> np.ndarray:
    mag = x.data.detach().cpu().numpy().__abs__()
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return np.round(mag * 255.0).astype(np.uint8)


def export_video(x: ImageSequence, path: str | os.PathLike,
                 format: str = "gif") -> list[Path]:
    """Write the magnitude video; returns the created file paths.

    ``gif`` loops at 10 fps; ``png_frames`` writes numbered frames into the
    directory named by ``path``.
    """
    frames = _to_uint8_frames(x)
    path = Path(path)
    if format == "gif":
        path.parent.mkdir(parents=True, exist_ok=True)
        images = [Image.fromarray(f, mode="L") for f in frames]
        images[0].save(
            path, save_all=True, append_images=images[1:],
            duration=int(1000 / GIF_FPS), loop=0,
        )
        return [path]
    if format == "png_frames":
        path.mkdir(parents=True, exist_ok=True)
        out = []
        for i, f in enumerate(frames):
            p = path / f"frame_{i:04d}.png"
            Image.fromarray(f, mode="L").save(p)
            out.append(p)
        return out
    raise ConfigError(f"unknown export format {format!r}")


def demo_transforms(sequence_path: str | os.PathLike, group_config: GroupConfig,
                    out_dir: str | os.PathLike, k: int = 2,
                    seed: int = 0) -> list[Path]:
    """Render the original plus k random warps and k random time shifts.

    Writes 2k + 1 GIFs into out_dir. The warp renders use only the
    diffeomorphism factor and the temporal renders only the dihedral factor,
    each within the limits of the supplied group config.
    """
    x = load_sequence(sequence_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = export_video(x, out_dir / "original.gif")

    rng = torch.Generator().manual_seed(seed)
    warp_cfg = GroupConfig(
        use_temporal=False, use_rotation=False, use_cpab=group_config.use_cpab,
        cpab_tess=group_config.cpab_tess, cpab_sigma=group_config.cpab_sigma,
        cpab_steps=group_config.cpab_steps,
    )
    shift_cfg = GroupConfig(
        use_temporal=group_config.use_temporal, use_rotation=False, use_cpab=False,
    )
    for i in range(k):
        g = sample_group(warp_cfg, x.t_frames, rng)
        files += export_video(act(g, x), out_dir / f"diffeo_{i:02d}.gif")
    for i in range(k):
        g = sample_group(shift_cfg, x.t_frames, rng)
        files += export_video(act(g, x), out_dir / f"temporal_{i:02d}.gif")
    return files
