"""Closed-loop grasp controller driven by GraspNet activation maps.

Each control step renders the camera view, searches a fan of image rotations
for the one GraspNet likes best, and then either turns the gripper, moves it
towards the activation peak, or grasps once the peak sits at the image centre
of the unrotated view.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .augment import rotate_image
from .demo import CameraPose
from .model import ActivationMap, atomic_write_bytes, forward_full_batch, forward_windows
from .rng import as_rng
from .sim import WorkspaceState, check_grasp, perturb, render

ROTATION_CHUNK = 4
MAP_MODES = ("dense", "window")


@dataclass(frozen=True)
class ControllerConfig:
    gain_mm_per_px: float = 0.5
    max_step_mm: float = 20.0
    center_tol_px: float = 8.0
    rotation_set_deg: tuple = tuple(range(-50, 51, 10))
    rotation_step_deg: float = 10.0
    max_steps: int = 200
    lost_threshold: float = 0.5
    lost_patience: int = 10
    # target perturbation applied by run_episode
    max_offset_mm: float = 80.0
    max_yaw_deg: float = 0.0
    pos_tol_mm: float = 10.0
    yaw_tol_deg: float = 15.0
    # "dense": one fully convolutional pass; "window": each cell scored on its own crop
    map_mode: str = "dense"
    # rotate only when the best plane beats the unrotated one by more than this
    rotation_margin: float = 0.0

    def __post_init__(self):
        if self.gain_mm_per_px <= 0 or self.max_step_mm <= 0 or self.center_tol_px <= 0:
            raise ValueError("gain, max_step_mm and center_tol_px must be positive")
        if 0 not in self.rotation_set_deg:
            raise ValueError("rotation_set_deg must contain 0")
        if self.rotation_step_deg <= 0 or self.max_steps < 0:
            raise ValueError("rotation_step_deg must be positive and max_steps >= 0")
        if not 0 <= self.rotation_margin < 1:
            raise ValueError("rotation_margin must lie in [0, 1)")
        if self.map_mode not in MAP_MODES:
            raise ValueError(f"map_mode must be one of {MAP_MODES}")


@dataclass(frozen=True)
class ControlCommand:
    """One controller output.

    ``dx_mm, dy_mm`` is the planar move in world coordinates. ``dyaw_rad`` is
    the rotation the *view* should undergo, i.e. the sign of the winning
    image rotation; turning the camera by ``-dyaw_rad`` achieves it.
    """
    dx_mm: float = 0.0
    dy_mm: float = 0.0
    dyaw_rad: float = 0.0
    grasp: bool = False

    @property
    def action(self) -> str:
        if self.grasp:
            return "grasp"
        if self.dyaw_rad:
            return "rotate"
        if self.dx_mm or self.dy_mm:
            return "translate"
        return "hold"


@dataclass(frozen=True)
class StepInfo:
    best_angle_deg: float
    maxima: dict
    direction_px: tuple
    argmax_value: float


@dataclass(frozen=True)
class TrajectoryPoint:
    step: int
    pose: CameraPose
    argmax_value: float
    action: str
    best_angle_deg: float


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    reason: str
    trajectory: list = field(default_factory=list)
    workspace: WorkspaceState | None = None
    start_pose: CameraPose | None = None

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "x_mm", "y_mm", "yaw_rad", "argmax_value", "action"])
        for p in self.trajectory:
            w.writerow([p.step, f"{p.pose.x_mm:.4f}", f"{p.pose.y_mm:.4f}", f"{p.pose.yaw_rad:.6f}",
                        f"{p.argmax_value:.6f}", p.action])
        return buf.getvalue()

    def write_trajectory(self, path) -> None:
        atomic_write_bytes(path, self.trajectory_csv().encode("ascii"))


def compute_direction(amap: ActivationMap):
    """Pixel offset from the image centre to the argmax cell centre.

    Ties resolve to the first maximum in row-major order.
    """
    if amap.grid.size == 0:
        raise ValueError("empty activation map")
    i, j = amap.argmax()
    px, py = amap.cell_to_pixel(i, j)
    h, w = amap.input_shape
    return (px - w / 2, py - h / 2)


def _best_angle(maxima: dict) -> float:
    # highest maximum; ties -> smallest |angle|, then negative first
    return min(maxima, key=lambda a: (-maxima[a], abs(a), a > 0))


def rotation_maps(params, frame, rotation_set, mode: str = "dense") -> dict:
    """Activation map for every rotation of ``frame`` about its centre."""
    angles = list(rotation_set)
    maps = {}
    if mode == "window":
        for a in angles:
            maps[a] = forward_windows(params, rotate_image(frame, a))
        return maps
    for start in range(0, len(angles), ROTATION_CHUNK):
        chunk = angles[start:start + ROTATION_CHUNK]
        stack = np.stack([rotate_image(frame, a) for a in chunk])
        for a, m in zip(chunk, forward_full_batch(params, stack)):
            maps[a] = m
    return maps


def rotation_search(params, frame, rotation_set=ControllerConfig.rotation_set_deg,
                    mode: str = "dense") -> float:
    """Rotation (degrees) whose activation map has the highest maximum."""
    maps = rotation_maps(params, frame, rotation_set, mode)
    return _best_angle({a: m.max() for a, m in maps.items()})


def _clamp(vx, vy, limit):
    norm = math.hypot(vx, vy)
    if norm > limit:
        return vx * limit / norm, vy * limit / norm
    return vx, vy


def step(params, frame, cfg: ControllerConfig = ControllerConfig(), camera_yaw_rad: float = 0.0):
    """Decide the next command from one camera frame.

    Returns ``(command, info)``. Priority: rotate while a non-zero rotation
    wins the search, else translate while the peak is off-centre, else grasp.
    """
    maps = rotation_maps(params, frame, cfg.rotation_set_deg, cfg.map_mode)
    maxima = {a: m.max() for a, m in maps.items()}
    best = _best_angle(maxima)
    direct = maps[0]
    v = compute_direction(direct)
    info = StepInfo(best, maxima, v, maxima[0])
    if best != 0 and maxima[best] - maxima[0] > cfg.rotation_margin:
        dyaw = math.copysign(math.radians(cfg.rotation_step_deg), best)
        return ControlCommand(dyaw_rad=dyaw), info
    if math.hypot(*v) > cfg.center_tol_px:
        tx, ty = _clamp(cfg.gain_mm_per_px * v[0], cfg.gain_mm_per_px * v[1], cfg.max_step_mm)
        c, s = math.cos(camera_yaw_rad), math.sin(camera_yaw_rad)
        return ControlCommand(dx_mm=c * tx - s * ty, dy_mm=s * tx + c * ty), info
    return ControlCommand(grasp=True), info


def apply_command(pose: CameraPose, cmd: ControlCommand) -> CameraPose:
    return CameraPose(pose.x_mm + cmd.dx_mm, pose.y_mm + cmd.dy_mm, pose.yaw_rad - cmd.dyaw_rad)


def run_episode(workspace: WorkspaceState, params, target_id: int,
                cfg: ControllerConfig = ControllerConfig(), rng=None, start: CameraPose | None = None):
    """Perturb the target, then servo from the demonstration pose until grasping.

    ``workspace`` is the scene as demonstrated; the camera starts over the
    target's original grasp pose unless ``start`` is given. The episode ends
    on a grasp command (success decided by :func:`check_grasp`), after
    ``cfg.lost_patience`` consecutive weak maps, or at ``cfg.max_steps``.
    """
    block = workspace.block(target_id)
    if start is None:
        start = CameraPose(block.x_mm, block.y_mm, block.yaw_rad)
    scene = perturb(workspace, target_id, as_rng(rng), cfg.max_offset_mm, cfg.max_yaw_deg)
    pose = start
    trajectory = []
    weak = 0
    for k in range(cfg.max_steps):
        frame = render(scene, pose)
        cmd, info = step(params, frame, cfg, pose.yaw_rad)
        trajectory.append(TrajectoryPoint(k, pose, info.argmax_value, cmd.action, info.best_angle_deg))
        if cmd.grasp:
            ok = check_grasp(scene, pose, target_id, cfg.pos_tol_mm, cfg.yaw_tol_deg)
            return EpisodeResult(ok, k + 1, "grasped", trajectory, scene, start)
        weak = weak + 1 if max(info.maxima.values()) < cfg.lost_threshold else 0
        if weak >= cfg.lost_patience:
            return EpisodeResult(False, k + 1, "lost_target", trajectory, scene, start)
        pose = apply_command(pose, cmd)
    return EpisodeResult(False, cfg.max_steps, "max_steps", trajectory, scene, start)
