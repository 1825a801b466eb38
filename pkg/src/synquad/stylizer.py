"""Background compositing, masked colour-statistics transfer and fusion.

All integer outputs use round-half-up (floor(x + 0.5)) then clamp to
[0, 255], so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .renderer import AnimalMask, RasterImage


class StyleError(ValueError):
    pass


@dataclass(frozen=True)
class StyleStats:
    mean: np.ndarray  # (3,)
    std: np.ndarray  # (3,)


@dataclass
class FusionConfig:
    alpha: float = 0.5
    stylizer: str = "internal-stats"  # or "external-file"
    external_dir: str | None = None

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise StyleError("alpha must lie in [0, 1]")
        if self.stylizer not in ("internal-stats", "external-file"):
            raise StyleError(f"unknown stylizer {self.stylizer!r}")
        if self.stylizer == "external-file" and not self.external_dir:
            raise StyleError("external-file stylizer needs external_dir")


def _round_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def region_stats(image: RasterImage, mask: np.ndarray | None = None) -> StyleStats:
    rgb = image.pixels[..., :3].astype(np.float64)
    vals = rgb.reshape(-1, 3) if mask is None else rgb[mask]
    if len(vals) == 0:
        raise StyleError("statistics of an empty region")
    return StyleStats(vals.mean(axis=0), vals.std(axis=0))


def composite(
    foreground: RasterImage, mask: AnimalMask, background: RasterImage, offset: tuple[int, int] = (0, 0)
) -> RasterImage:
    """Hard paste of masked foreground pixels onto a copy of ``background``."""
    if foreground.pixels.shape[:2] != mask.mask.shape:
        raise StyleError("mask and foreground sizes differ")
    if background.pixels.shape[2] != foreground.pixels.shape[2]:
        raise StyleError("channel count mismatch")
    out = background.pixels.copy()
    ox, oy = offset
    fh, fw = mask.mask.shape
    bh, bw = out.shape[:2]
    # clip the placed rectangle to the background
    x0, y0 = max(ox, 0), max(oy, 0)
    x1, y1 = min(ox + fw, bw), min(oy + fh, bh)
    if x0 < x1 and y0 < y1:
        m = mask.mask[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
        src = foreground.pixels[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
        dst = out[y0:y1, x0:x1]
        dst[m, :3] = src[m, :3]
    return RasterImage(out)


def place_mask(mask: AnimalMask, shape: tuple[int, int], offset: tuple[int, int] = (0, 0)) -> AnimalMask:
    """Re-express ``mask`` in background coordinates (clipped)."""
    out_m = np.zeros(shape, dtype=bool)
    out_d = np.full(shape, np.inf)
    ox, oy = offset
    fh, fw = mask.mask.shape
    x0, y0 = max(ox, 0), max(oy, 0)
    x1, y1 = min(ox + fw, shape[1]), min(oy + fh, shape[0])
    if x0 < x1 and y0 < y1:
        out_m[y0:y1, x0:x1] = mask.mask[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
        out_d[y0:y1, x0:x1] = mask.depth[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
    return AnimalMask(out_m, out_d)


def transfer_stats(content: RasterImage, mask: AnimalMask, style_region: RasterImage) -> RasterImage:
    """Match masked content's per-channel mean/std to those of ``style_region``.

    A channel with zero content std is only shifted to the style mean.
    """
    if mask.mask.shape != content.pixels.shape[:2]:
        raise StyleError("mask and content sizes differ")
    if not mask.mask.any():
        raise StyleError("mask is empty; nothing to stylize")
    if style_region.pixels.size == 0:
        raise StyleError("style region is empty")
    c = region_stats(content, mask.mask)
    s = region_stats(style_region)
    vals = content.pixels[mask.mask][:, :3].astype(np.float64)
    safe = np.where(c.std > 0, c.std, 1.0)
    scale = np.where(c.std > 0, s.std / safe, 1.0)
    remapped = scale * (vals - c.mean) + s.mean
    out = content.pixels.copy()
    out[mask.mask, :3] = _round_u8(remapped)
    return RasterImage(out)


def fuse(content: RasterImage, stylized: RasterImage, alpha: float) -> RasterImage:
    """Per-pixel ``(1 - alpha) * content + alpha * stylized``."""
    if content.pixels.shape != stylized.pixels.shape:
        raise StyleError("content and stylized images differ in size")
    if not 0.0 <= alpha <= 1.0:
        raise StyleError("alpha must lie in [0, 1]")
    mixed = (1.0 - alpha) * content.pixels.astype(np.float64) + alpha * stylized.pixels.astype(np.float64)
    return RasterImage(_round_u8(mixed))


def load_background(path: str | Path, size: tuple[int, int], rng: np.random.Generator | None = None) -> RasterImage:
    """Load a photo as opaque RGBA at ``size`` (w, h): random crop if large enough, else resize."""
    from PIL import Image

    w, h = size
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.width >= w and im.height >= h:
            if rng is None:
                x, y = (im.width - w) // 2, (im.height - h) // 2
            else:
                x = int(rng.integers(0, im.width - w + 1))
                y = int(rng.integers(0, im.height - h + 1))
            im = im.crop((x, y, x + w, y + h))
        else:
            im = im.resize((w, h), Image.BILINEAR)
        rgba = np.empty((h, w, 4), dtype=np.uint8)
        rgba[..., :3] = np.array(im)
        rgba[..., 3] = 255
    return RasterImage(rgba)


def stylize_and_fuse(
    content: RasterImage,
    mask: AnimalMask,
    style_region: RasterImage,
    config: FusionConfig,
    stem: str | None = None,
) -> RasterImage:
    """Stylize the masked animal (internally or from ``{stem}_sty.png``) and fuse the whole frame."""
    config.validate()
    if config.stylizer == "external-file":
        path = Path(config.external_dir) / f"{stem}_sty.png"
        if not path.exists():
            raise StyleError(f"missing external stylized image {path}")
        stylized = RasterImage.load(path)
        if stylized.pixels.shape != content.pixels.shape:
            raise StyleError(f"{path} does not match content size")
    else:
        stylized = transfer_stats(content, mask, style_region)
    return fuse(content, stylized, config.alpha)
