"""Demonstrations and their on-disk layout.

A demonstration directory holds ``frame.ppm`` (binary P6, 640x480) and
``meta.txt`` with ``key=value`` lines: ``target_id``, ``pose_x_mm``,
``pose_y_mm``, ``yaw_rad``.
"""
from __future__ import annotations

import os
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CorruptFileError, InvalidShapeError, NotFoundError
from .imageio import read_ppm, write_ppm
from .model import atomic_write_bytes

FRAME_WIDTH = 640
FRAME_HEIGHT = 480


@dataclass(frozen=True)
class CameraPose:
    x_mm: float
    y_mm: float
    yaw_rad: float = 0.0


class Demonstration:
    """One captured frame with the target's grasp point at the frame centre.

    ``frame`` may be given directly or as a zero-argument loader; loaders run
    on first access, which lets callers audit exactly which frames were read.
    """

    def __init__(self, frame, target_id: int, capture_pose: CameraPose):
        self.target_id = int(target_id)
        self.capture_pose = capture_pose
        if callable(frame):
            self._loader: Callable | None = frame
            self._frame = None
        else:
            self._loader = None
            self._frame = _check_frame(frame)

    @property
    def frame(self) -> np.ndarray:
        if self._frame is None:
            self._frame = _check_frame(self._loader())
            self._loader = None
        return self._frame

    def __repr__(self):
        return f"Demonstration(target_id={self.target_id}, pose={self.capture_pose})"


def _check_frame(frame) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float32)
    if frame.shape != (FRAME_HEIGHT, FRAME_WIDTH, 3):
        raise InvalidShapeError(f"demonstration frame must be 480x640x3, got {frame.shape}")
    frame.flags.writeable = False
    return frame


def as_demo_dict(demos) -> dict:
    """Normalise a mapping or iterable of demonstrations to {target_id: demo}."""
    if isinstance(demos, Demonstration):
        return {demos.target_id: demos}
    if isinstance(demos, Mapping):
        return dict(demos)
    return {d.target_id: d for d in demos}


def save_demonstration(demo: Demonstration, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_ppm(directory / "frame.ppm", demo.frame)
    pose = demo.capture_pose
    meta = (f"target_id={demo.target_id}\n"
            f"pose_x_mm={pose.x_mm!r}\n"
            f"pose_y_mm={pose.y_mm!r}\n"
            f"yaw_rad={pose.yaw_rad!r}\n")
    atomic_write_bytes(directory / "meta.txt", meta.encode("ascii"))


def parse_key_values(text: str, source: str = "<string>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CorruptFileError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_demonstration(directory, on_frame_read: Callable[[int], None] | None = None) -> Demonstration:
    """Read ``meta.txt`` now and ``frame.ppm`` lazily on first ``.frame`` access."""
    directory = Path(directory)
    meta_path = directory / "meta.txt"
    try:
        meta = parse_key_values(meta_path.read_text(), str(meta_path))
        target_id = int(meta["target_id"])
        pose = CameraPose(float(meta["pose_x_mm"]), float(meta["pose_y_mm"]), float(meta["yaw_rad"]))
    except FileNotFoundError:
        raise NotFoundError(f"no meta.txt in {directory}") from None
    except (KeyError, ValueError) as exc:
        raise CorruptFileError(f"{meta_path}: {exc}") from None
    frame_path = directory / "frame.ppm"
    if not frame_path.exists():
        raise NotFoundError(f"no frame.ppm in {directory}")

    def loader():
        if on_frame_read is not None:
            on_frame_read(target_id)
        return read_ppm(frame_path)

    return Demonstration(loader, target_id, pose)


def load_demonstrations(root, on_frame_read=None) -> dict:
    """Load every demonstration directory under ``root``, keyed by target id."""
    root = Path(root)
    demos = {}
    for entry in sorted(os.listdir(root)):
        path = root / entry
        if path.is_dir() and (path / "meta.txt").exists():
            demo = load_demonstration(path, on_frame_read)
            demos[demo.target_id] = demo
    if not demos:
        raise NotFoundError(f"no demonstrations found under {root}")
    return demos
