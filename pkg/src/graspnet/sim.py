"""Top-down synthetic workspace: coloured blocks on a textured plane.

World and image axes are aligned (x right, y down) at 1 px = 1 mm, and all
angles follow that frame. A camera at ``(x, y, yaw)`` maps pixel offset ``d``
from the frame centre to world point ``(x, y) + R(yaw) d``, so a block with
world yaw ``theta`` appears rotated by ``theta - yaw`` in the frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .demo import FRAME_HEIGHT, FRAME_WIDTH, CameraPose, Demonstration
from .errors import NotFoundError, PlacementError, PreconditionError
from .rng import SeededRNG, as_rng

WORKSPACE_WIDTH_MM = 640.0
WORKSPACE_HEIGHT_MM = 480.0
BACKGROUND_GRAY = 0.8
NOISE_AMPLITUDE = 0.02
NOISE_TILE = 512
RECT_ASPECT = 0.6
SUPERSAMPLE = 2

SHAPES = ("square", "rectangle", "circle", "triangle", "L")
# rotational symmetry period in degrees; 0 means any rotation
SYMMETRY_DEG = {"square": 90.0, "rectangle": 180.0, "circle": 0.0, "triangle": 120.0, "L": 360.0}


class ScenarioParseError(PreconditionError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Block:
    id: int
    shape: str
    color: tuple
    size_mm: float
    x_mm: float
    y_mm: float
    yaw_rad: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if not 20.0 <= self.size_mm <= 80.0:
            raise ValueError(f"block size {self.size_mm} mm outside [20, 80]")

    @property
    def radius_mm(self) -> float:
        """Bounding-circle radius about the grasp point."""
        s = self.size_mm
        return {
            "square": s / math.sqrt(2),
            "rectangle": math.hypot(s / 2, RECT_ASPECT * s / 2),
            "circle": s / 2,
            "triangle": s / math.sqrt(3),
            "L": s / math.sqrt(2),
        }[self.shape]

    def contains_local(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Inside test for points in block-local coordinates (grasp point at 0)."""
        h = self.size_mm / 2
        if self.shape == "square":
            return (np.abs(u) <= h) & (np.abs(v) <= h)
        if self.shape == "rectangle":
            return (np.abs(u) <= h) & (np.abs(v) <= RECT_ASPECT * h)
        if self.shape == "circle":
            return u * u + v * v <= h * h
        if self.shape == "triangle":
            # equilateral, centroid at origin, apex pointing to -v
            r = self.size_mm / math.sqrt(3)
            inside = v <= r / 2
            for ang in (math.radians(30), math.radians(150)):
                nx, ny = math.cos(ang + math.pi), math.sin(ang + math.pi)
                inside &= u * nx + v * ny <= r / 2
            return inside
        # L: a bar along the bottom plus a bar up the left side, thickness s/3
        t = self.size_mm / 3
        in_box = (np.abs(u) <= h) & (np.abs(v) <= h)
        return in_box & ((v >= h - t) | (u <= -h + t))


@dataclass(frozen=True)
class WorkspaceState:
    blocks: tuple
    seed: int = 0
    width_mm: float = WORKSPACE_WIDTH_MM
    height_mm: float = WORKSPACE_HEIGHT_MM

    def block(self, block_id: int) -> Block:
        for b in self.blocks:
            if b.id == block_id:
                return b
        raise NotFoundError(f"no block with id {block_id}")

    def with_block(self, block: Block) -> "WorkspaceState":
        return replace(self, blocks=tuple(block if b.id == block.id else b for b in self.blocks))

    @property
    def ids(self):
        return [b.id for b in self.blocks]

    def is_valid(self) -> bool:
        for i, a in enumerate(self.blocks):
            if not _in_bounds(self, a):
                return False
            for b in self.blocks[i + 1:]:
                if _overlaps(a, b):
                    return False
        return True


def _in_bounds(ws: WorkspaceState, b: Block) -> bool:
    r = b.radius_mm
    return r <= b.x_mm <= ws.width_mm - r and r <= b.y_mm <= ws.height_mm - r


def _overlaps(a: Block, b: Block) -> bool:
    return math.hypot(a.x_mm - b.x_mm, a.y_mm - b.y_mm) < a.radius_mm + b.radius_mm


# ---- default scenario -----------------------------------------------------

def _rgb(*c):
    return tuple(v / 255.0 for v in c)


# Blocks 3/4 are the same red at different sizes, 5/6 the same blue as
# square vs rectangle; the rest have distinct colours.
DEFAULT_BLOCKS = (
    Block(0, "square", _rgb(230, 200, 30), 50, 95, 115, 0.2),
    Block(1, "rectangle", _rgb(40, 160, 60), 60, 215, 365, -0.4),
    Block(2, "circle", _rgb(240, 120, 30), 50, 325, 120, 0.0),
    Block(3, "square", _rgb(200, 40, 40), 56, 445, 365, 0.5),
    Block(4, "square", _rgb(200, 40, 40), 40, 95, 365, -0.1),
    Block(5, "square", _rgb(40, 70, 200), 50, 545, 115, 0.3),
    Block(6, "rectangle", _rgb(40, 70, 200), 50, 325, 365, 1.0),
    Block(7, "triangle", _rgb(140, 60, 170), 56, 445, 180, 0.7),
    Block(8, "L", _rgb(30, 180, 190), 60, 215, 170, 0.0),
    Block(9, "circle", _rgb(110, 80, 60), 40, 555, 365, 0.0),
)
DEFAULT_SEED = 20190101
CONFUSABLE_PAIRS = ((3, 4), (5, 6))
EASY_BLOCKS = (0, 1, 8)
ASYMMETRIC_BLOCK = 8


def default_workspace() -> WorkspaceState:
    return WorkspaceState(DEFAULT_BLOCKS, DEFAULT_SEED)


# ---- scenario files ---------------------------------------------------------

def format_scenario(ws: WorkspaceState) -> str:
    lines = ["# id shape r g b size_mm x_mm y_mm yaw_rad", f"seed={ws.seed}"]
    for b in ws.blocks:
        r, g, bl = (int(round(c * 255)) for c in b.color)
        lines.append(f"{b.id} {b.shape} {r} {g} {bl} {b.size_mm:g} {b.x_mm:g} {b.y_mm:g} {b.yaw_rad!r}")
    return "\n".join(lines) + "\n"


def parse_scenario(text: str) -> WorkspaceState:
    """Parse a scenario file; errors carry the 1-based line number."""
    seed = 0
    blocks = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("seed="):
            try:
                seed = int(line[5:])
            except ValueError:
                raise ScenarioParseError(lineno, f"bad seed {line[5:]!r}") from None
            if not 0 <= seed < 2 ** 64:
                raise ScenarioParseError(lineno, "seed must be an unsigned 64-bit integer")
            continue
        parts = line.split()
        if len(parts) != 9:
            raise ScenarioParseError(lineno, f"expected 9 fields, got {len(parts)}")
        try:
            bid = int(parts[0])
            rgb = [int(p) for p in parts[2:5]]
            size, x, y, yaw = (float(p) for p in parts[5:9])
        except ValueError as exc:
            raise ScenarioParseError(lineno, str(exc)) from None
        if any(not 0 <= c <= 255 for c in rgb):
            raise ScenarioParseError(lineno, "colour channels must be in 0..255")
        if any(b.id == bid for b in blocks):
            raise ScenarioParseError(lineno, f"duplicate block id {bid}")
        try:
            blocks.append(Block(bid, parts[1], _rgb(*rgb), size, x, y, yaw))
        except ValueError as exc:
            raise ScenarioParseError(lineno, str(exc)) from None
    if not blocks:
        raise ScenarioParseError(max(1, len(text.splitlines())), "scenario has no blocks")
    ws = WorkspaceState(tuple(blocks), seed)
    if not ws.is_valid():
        raise ScenarioParseError(1, "blocks overlap or leave the workspace")
    return ws


def load_scenario(path) -> WorkspaceState:
    return parse_scenario(Path(path).read_text())


# ---- rendering -------------------------------------------------------------

_noise_cache: dict = {}


def _noise_tile(seed: int) -> np.ndarray:
    tile = _noise_cache.get(seed)
    if tile is None:
        gen = SeededRNG(seed).generator
        tile = gen.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, (NOISE_TILE, NOISE_TILE)).astype(np.float32)
        _noise_cache[seed] = tile
    return tile


def pixel_to_world(camera: CameraPose, u, v, width=FRAME_WIDTH, height=FRAME_HEIGHT):
    du = np.asarray(u, dtype=np.float64) - width / 2
    dv = np.asarray(v, dtype=np.float64) - height / 2
    c, s = math.cos(camera.yaw_rad), math.sin(camera.yaw_rad)
    return camera.x_mm + c * du - s * dv, camera.y_mm + s * du + c * dv


def world_to_pixel(camera: CameraPose, x, y, width=FRAME_WIDTH, height=FRAME_HEIGHT):
    dx = np.asarray(x, dtype=np.float64) - camera.x_mm
    dy = np.asarray(y, dtype=np.float64) - camera.y_mm
    c, s = math.cos(camera.yaw_rad), math.sin(camera.yaw_rad)
    return c * dx + s * dy + width / 2, -s * dx + c * dy + height / 2


def render(ws: WorkspaceState, camera: CameraPose,
           width: int = FRAME_WIDTH, height: int = FRAME_HEIGHT) -> np.ndarray:
    """Orthographic top-down frame, (height, width, 3) float32 on the 1/255 grid.

    Pixel centres sit at integer coordinates; the frame centre pixel
    ``(width/2, height/2)`` looks at the camera position.
    """
    vv, uu = np.mgrid[0:height, 0:width]
    wx, wy = pixel_to_world(camera, uu, vv, width, height)
    tile = _noise_tile(ws.seed)
    noise = tile[np.floor(wy).astype(np.int64) % NOISE_TILE, np.floor(wx).astype(np.int64) % NOISE_TILE]
    image = np.empty((height, width, 3), dtype=np.float64)
    image[...] = BACKGROUND_GRAY

    offsets = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    for block in ws.blocks:
        pu, pv = world_to_pixel(camera, block.x_mm, block.y_mm, width, height)
        r = block.radius_mm + 1.0
        u0, u1 = max(int(math.floor(pu - r)), 0), min(int(math.ceil(pu + r)) + 1, width)
        v0, v1 = max(int(math.floor(pv - r)), 0), min(int(math.ceil(pv + r)) + 1, height)
        if u0 >= u1 or v0 >= v1:
            continue
        bv, bu = np.mgrid[v0:v1, u0:u1].astype(np.float64)
        rel = block.yaw_rad - camera.yaw_rad
        c, s = math.cos(rel), math.sin(rel)
        coverage = np.zeros(bu.shape)
        for ou in offsets:
            for ov in offsets:
                du, dv = bu + ou - pu, bv + ov - pv
                # pixel offsets -> block-local coordinates: R(-rel)
                lu = c * du + s * dv
                lv = -s * du + c * dv
                coverage += block.contains_local(lu, lv)
        coverage /= SUPERSAMPLE * SUPERSAMPLE
        region = image[v0:v1, u0:u1]
        region *= (1 - coverage)[..., None]
        region += coverage[..., None] * np.asarray(block.color)
    image += noise[..., None]
    return (np.rint(np.clip(image, 0, 1) * 255) / 255).astype(np.float32)


def capture_demonstration(ws: WorkspaceState, target_id: int) -> Demonstration:
    """Hover over the target's grasp point, yaw aligned with the block, and grab a frame."""
    block = ws.block(target_id)
    pose = CameraPose(block.x_mm, block.y_mm, block.yaw_rad)
    return Demonstration(render(ws, pose), target_id, pose)


def capture_all(ws: WorkspaceState) -> dict:
    return {bid: capture_demonstration(ws, bid) for bid in ws.ids}


def perturb(ws: WorkspaceState, target_id: int, rng=None, max_offset_mm: float = 80.0,
            max_yaw_deg: float = 0.0, max_tries: int = 100) -> WorkspaceState:
    """Move the target by a uniform draw from a disc and rotate it uniformly.

    Other blocks stay put. Raises PlacementError when no in-bounds,
    non-overlapping placement turns up in ``max_tries`` draws.
    """
    rng = as_rng(rng)
    block = ws.block(target_id)
    if max_offset_mm == 0 and max_yaw_deg == 0:
        return ws
    others = [b for b in ws.blocks if b.id != target_id]
    for _ in range(max_tries):
        radius = max_offset_mm * math.sqrt(rng.uniform())
        angle = rng.uniform(0.0, 2 * math.pi)
        dyaw = math.radians(rng.uniform(-max_yaw_deg, max_yaw_deg)) if max_yaw_deg else 0.0
        moved = replace(block, x_mm=block.x_mm + radius * math.cos(angle),
                        y_mm=block.y_mm + radius * math.sin(angle),
                        yaw_rad=block.yaw_rad + dyaw)
        if _in_bounds(ws, moved) and not any(_overlaps(moved, o) for o in others):
            return ws.with_block(moved)
    raise PlacementError(f"no valid placement for block {target_id} after {max_tries} tries")


def angle_error_deg(block: Block, yaw_rad: float) -> float:
    """Smallest yaw difference in degrees after reducing by the block's symmetry."""
    period = SYMMETRY_DEG[block.shape]
    if period == 0:
        return 0.0
    diff = math.degrees(yaw_rad - block.yaw_rad)
    return abs((diff + period / 2) % period - period / 2)


def check_grasp(ws: WorkspaceState, gripper: CameraPose, target_id: int,
                pos_tol_mm: float = 10.0, yaw_tol_deg: float = 15.0) -> bool:
    block = ws.block(target_id)
    dist = math.hypot(gripper.x_mm - block.x_mm, gripper.y_mm - block.y_mm)
    return dist <= pos_tol_mm and angle_error_deg(block, gripper.yaw_rad) <= yaw_tol_deg
