"""Inspection renderings: attention heatmaps, boundary maps, point overlays.

Heatmaps are single-channel grayscale with the [0,1] activation mapped
linearly onto [0,255]; that keeps the files bit-exactly testable. The
uncertain-point overlay paints the image blocks covered by the selected
stage-1 points in red.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError, DataError

PALETTE = np.array([
    [0, 0, 0],  # background
    [80, 200, 120],
    [186, 85, 211],
    [240, 200, 60],
    [70, 130, 220],
    [220, 90, 90],
    [150, 150, 150],
    [250, 250, 250],
], dtype=np.uint8)


def heatmap_png(activation, path):
    """[0,1] map to a grayscale PNG, 0 -> 0 and 1 -> 255 linearly."""
    a = np.asarray(activation.detach().cpu() if torch.is_tensor(activation)
                   else activation, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"heatmap expects an h x w map, got shape {a.shape}")
    img = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="L").save(path)
    return path


def segmentation_png(pred_mask, path):
    """Class-id map to a fixed-palette color PNG."""
    m = np.asarray(pred_mask)
    if int(m.max(initial=0)) >= len(PALETTE):
        raise ConfigError(f"palette supports {len(PALETTE)} classes")
    img = PALETTE[m]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="RGB").save(path)
    return path


def overlay_points_png(image, flat_indices, grid_hw, path):
    """Mark selected stride-level points as red blocks on the input image.

    flat_indices index into a grid of grid_hw cells; every cell maps onto an
    equal block of the full-resolution image.
    """
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[0] == 3:
        img = img.transpose(1, 2, 0)
    rgb = (np.clip(img, 0, 1) * 255.0).round().astype(np.uint8).copy()
    gh, gw = grid_hw
    bh, bw = rgb.shape[0] // gh, rgb.shape[1] // gw
    for idx in np.asarray(flat_indices, dtype=np.int64):
        y, x = divmod(int(idx), gw)
        rgb[y * bh:(y + 1) * bh, x * bw:(x + 1) * bw] = (255, 0, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(path)
    return path


def render_cascade(model, image, out_dir, stem: str) -> list:
    """One PNG per inspectable tensor; returns the written paths.

    Full four-stage cascade with refinement: 4 stages x (semantic attention,
    boundary attention, boundary probability) + uncertain overlay + final
    segmentation = 14 files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    with torch.no_grad():
        out = model(image, keep_cascade=True)

    written = []
    finest = min(out.cascade.stages)
    for i, state in out.cascade.stages.items():
        if state.attention is not None:
            written.append(heatmap_png(state.attention.a_s[0],
                                       out_dir / f"{stem}_stage{i}_as.png"))
            written.append(heatmap_png(state.attention.a_b[0],
                                       out_dir / f"{stem}_stage{i}_ab.png"))
        written.append(heatmap_png(torch.sigmoid(state.boundary_logits)[0, 0],
                                   out_dir / f"{stem}_stage{i}_bnd.png"))

    finest_state = out.cascade.stages[finest]
    indices = []
    if finest_state.uncertain is not None and finest_state.uncertain[0] is not None:
        indices = finest_state.uncertain[0].indices.tolist()
    grid_hw = tuple(finest_state.f_s.shape[-2:])
    written.append(overlay_points_png(image.detach().cpu().numpy(), indices,
                                      grid_hw, out_dir / f"{stem}_uncertain.png"))

    pred = out.logits.argmax(dim=0).cpu().numpy()
    written.append(segmentation_png(pred, out_dir / f"{stem}_seg.png"))
    return [Path(p) for p in written]
