"""OTB on-disk layout: ``<name>/img/%04d.<ext>`` plus ``<name>/groundtruth_rect.txt``."""

from __future__ import annotations

import re
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from ..boxes import BoundingBox
from .sequences import LazyFrames, Sequence

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
GT_FILE = "groundtruth_rect.txt"
_SEP = re.compile(r"[,\t ]+")


class SequenceFormatError(ValueError):
    pass


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / np.float32(255.0)


def write_image(path, frame: np.ndarray) -> None:
    arr = np.round(np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


def parse_groundtruth(text: str) -> List[BoundingBox]:
    """One ``x,y,w,h`` (corner convention) per line; comma, tab or space separated."""
    boxes = []
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    for n, line in enumerate(lines, 1):
        parts = [p for p in _SEP.split(line.strip()) if p]
        try:
            if len(parts) != 4:
                raise ValueError(f"expected 4 values, got {len(parts)}")
            x, y, w, h = (float(p) for p in parts)
            boxes.append(BoundingBox.from_corner(x, y, w, h))
        except ValueError as e:
            raise SequenceFormatError(f"{GT_FILE} line {n}: cannot parse {line!r} ({e})") from None
    return boxes


def load_otb_sequence(directory) -> Sequence:
    root = Path(directory)
    img_dir, gt_path = root / "img", root / GT_FILE
    if not img_dir.is_dir():
        raise FileNotFoundError(f"missing image folder {img_dir}")
    if not gt_path.is_file():
        raise FileNotFoundError(f"missing annotation file {gt_path}")
    paths = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    boxes = parse_groundtruth(gt_path.read_text())
    if len(paths) != len(boxes):
        raise SequenceFormatError(f"{len(paths)} images but {len(boxes)} annotation lines in {root}")
    if not paths:
        raise SequenceFormatError(f"no frames in {root}")
    return Sequence(LazyFrames(lambda i: read_image(paths[i]), len(paths)), boxes, root.name)


def write_otb_sequence(seq: Sequence, directory, ext: str = "png") -> Path:
    """Write frames and corner-convention annotations; PNG is lossless for 8-bit frames."""
    root = Path(directory)
    (root / "img").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, 1):
        write_image(root / "img" / f"{i:04d}.{ext}", frame)
    lines = []
    for b in seq.ground_truth:
        x, y, w, h = b.corner()
        lines.append(",".join(repr(float(v)) for v in (x, y, w, h)))
    (root / GT_FILE).write_text("\n".join(lines) + "\n")
    return root
