"""
PNG previews of localization results.

Each frame becomes one image: the channel-max of the JHM residual as a
heat map, upscaled with nearest-neighbour sampling, with every abnormal
skeleton's limbs and padded box drawn on top.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from PIL import Image, ImageDraw

from securepose.localizer import AbnormalPose, GopLocalization, residual
from securepose.pose_features import LIMBS
from securepose.tensor_file import atomic_write_bytes

SCALE: int = 4
BOX_COLOR = (255, 64, 64)
LIMB_COLOR = (64, 200, 255)


def residual_image(d: NDArray[np.floating], scale: int = SCALE) -> Image.Image:
    """Heat map of an `(H, W, J)` residual, brightest keypoint channel per pixel."""
    plane = np.asarray(d, dtype=np.float64).max(axis=-1)
    peak = plane.max()
    norm = plane / peak if peak > 0 else plane
    gray = (np.clip(norm, 0.0, 1.0) * 255).astype(np.uint8)
    # Dark red to yellow ramp.
    rgb = np.stack([gray, (gray.astype(np.uint16) * gray // 255).astype(np.uint8), gray // 4], -1)
    img = Image.fromarray(rgb, "RGB")
    h, w = plane.shape
    return img.resize((w * scale, h * scale), Image.Resampling.NEAREST)


def draw_abnormal(img: Image.Image, poses: list[AbnormalPose] | tuple[AbnormalPose, ...]) -> None:
    draw = ImageDraw.Draw(img)
    w, h = img.size
    for abnormal in poses:
        kp = abnormal.pose.keypoints
        for match in abnormal.connections:
            a, b = LIMBS[match.limb]
            draw.line(
                [(kp[a, 0] * w, kp[a, 1] * h), (kp[b, 0] * w, kp[b, 1] * h)],
                fill=LIMB_COLOR,
                width=2,
            )
        x0, y0, x1, y1 = abnormal.box
        draw.rectangle([x0 * w, y0 * h, x1 * w, y1 * h], outline=BOX_COLOR, width=2)


def render_frame_preview(
    s_i: NDArray[np.floating],
    s_r: NDArray[np.floating],
    poses: list[AbnormalPose] | tuple[AbnormalPose, ...],
    scale: int = SCALE,
) -> Image.Image:
    img = residual_image(residual(s_i, s_r), scale)
    draw_abnormal(img, poses)
    return img


def write_gop_previews(
    directory: Path,
    jhm_visual: NDArray[np.floating],
    jhm_wireless: NDArray[np.floating],
    result: GopLocalization,
) -> list[Path]:
    """One `<gop_id>_fNN.png` per frame."""
    out = []
    for m, frame in enumerate(result.frames):
        img = render_frame_preview(jhm_visual[m], jhm_wireless[m], frame)
        path = Path(directory) / f"{result.gop_id}_f{m:02d}.png"
        buf = _png_bytes(img)
        out.append(atomic_write_bytes(path, buf))
    return out


def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, "PNG", optimize=False)
    return buf.getvalue()
