"""Swiss-roll sampler, NNRMSE and SVG scatter plots."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np


@dataclass(frozen=True)
class SwissRollConfig:
    t_min: float = 1.5 * math.pi
    t_max: float = 4.5 * math.pi
    scale: float = 1.0 / 15.0
    noise_sd: float = 0.0

    def __post_init__(self):
        if not (self.t_max > self.t_min > 0):
            raise ValueError("swiss roll needs t_max > t_min > 0")
        if not self.scale > 0:
            raise ValueError("swiss roll scale must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")


def as_points(points, what: str = "point set") -> np.ndarray:
    arr = np.asarray(getattr(points, "data", points), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{what} must have shape (n, 2), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{what} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} has non-finite entries")
    return arr


def swiss_roll_points(t: np.ndarray, scale: float) -> np.ndarray:
    return scale * np.column_stack([t * np.cos(t), t * np.sin(t)])


def sample_swiss_roll(n: int, cfg: SwissRollConfig, rng: np.random.Generator) -> np.ndarray:
    """Fresh (n, 2) samples; draws n uniforms, then 2n normals only if noise_sd > 0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    t = rng.uniform(cfg.t_min, cfg.t_max, size=n)
    pts = swiss_roll_points(t, cfg.scale)
    if cfg.noise_sd > 0:
        pts = pts + rng.normal(0.0, cfg.noise_sd, size=(n, 2))
    return pts


def _nearest(a: np.ndarray, b: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Euclidean distance from each row of ``a`` to its nearest row of ``b``."""
    out = np.empty(a.shape[0])
    for start in range(0, a.shape[0], chunk):
        block = a[start:start + chunk]
        diff = block[:, None, :] - b[None, :, :]
        out[start:start + chunk] = np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))
    return out


def nnrmse(real, fake) -> float:
    """Mean real->nearest-fake distance plus mean fake->nearest-real distance."""
    r = as_points(real, "real set")
    f = as_points(fake, "fake set")
    return float(_nearest(r, f).mean() + _nearest(f, r).mean())


REAL_COLOR = "#ff7f0e"
FAKE_COLOR = "#2ca02c"
_VIEW = 1.1


def scatter_svg(real, fake, path, size: int = 480, title: str | None = None) -> Path:
    """Write a standalone SVG of the two point sets over the fixed [-1.1, 1.1]^2 view."""
    r = as_points(real, "real set")
    f = as_points(fake, "fake set")
    score = nnrmse(r, f)
    px = size / (2 * _VIEW)

    def xy(p):
        return (p[0] + _VIEW) * px, (_VIEW - p[1]) * px

    lines = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<defs><clipPath id="view"><rect x="0" y="0" width="{size}" height="{size}"/></clipPath></defs>',
        '<g clip-path="url(#view)">',
    ]
    for pts, color, cls in ((r, REAL_COLOR, "real"), (f, FAKE_COLOR, "fake")):
        lines.append(f'<g class="{cls}" fill="{color}" fill-opacity="0.6">')
        for p in pts:
            cx, cy = xy(p)
            lines.append(f'<circle cx="{cx:.3f}" cy="{cy:.3f}" r="1.6"/>')
        lines.append("</g>")
    lines.append("</g>")
    lines += [
        '<g font-family="sans-serif" font-size="12">',
        f'<circle cx="14" cy="14" r="4" fill="{REAL_COLOR}"/><text x="24" y="18">real ({len(r)})</text>',
        f'<circle cx="14" cy="32" r="4" fill="{FAKE_COLOR}"/><text x="24" y="36">fake ({len(f)})</text>',
        f'<text x="{size - 10}" y="18" text-anchor="end">NNRMSE = {score:.4f}</text>',
    ]
    if title:
        lines.append(f'<text x="{size / 2:.1f}" y="{size - 10}" text-anchor="middle">{escape(title)}</text>')
    lines += ["</g>", "</svg>", ""]

    path = Path(path)
    try:
        path.write_text("\n".join(lines), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write SVG to {path}: {exc}") from exc
    return path
