import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspnet import sim
from graspnet.demo import CameraPose
from graspnet.errors import NotFoundError, PlacementError
from graspnet.rng import SeededRNG


def _mask(frame, color, tol=0.1):
    return np.all(np.abs(frame - np.asarray(color, np.float32)) < tol, axis=-1)


def test_default_workspace_layout(workspace):
    assert workspace.ids == list(range(10))
    assert workspace.is_valid()
    shapes = {b.shape for b in workspace.blocks}
    assert shapes == set(sim.SHAPES)
    for a, b in sim.CONFUSABLE_PAIRS:
        ba, bb = workspace.block(a), workspace.block(b)
        # one pair shares colour and shape, the other shares colour only
        assert ba.color == bb.color
    assert workspace.block(sim.ASYMMETRIC_BLOCK).shape == "L"


def test_block_invariants():
    with pytest.raises(ValueError):
        sim.Block(0, "square", (1, 0, 0), 90, 100, 100)
    with pytest.raises(ValueError):
        sim.Block(0, "hexagon", (1, 0, 0), 50, 100, 100)


def test_unknown_block(workspace):
    with pytest.raises(NotFoundError):
        workspace.block(42)


def test_render_deterministic(workspace):
    cam = CameraPose(300, 200, 0.3)
    assert sim.render(workspace, cam).tobytes() == sim.render(workspace, cam).tobytes()


def test_render_shape_and_quantisation(workspace):
    frame = sim.render(workspace, CameraPose(320, 240))
    assert frame.shape == (480, 640, 3) and frame.dtype == np.float32
    np.testing.assert_allclose(frame * 255, np.rint(frame * 255), atol=1e-4)


@pytest.mark.parametrize("bid", range(10))
def test_camera_on_block_centres_it(workspace, bid):
    block = workspace.block(bid)
    frame = sim.render(workspace, CameraPose(block.x_mm, block.y_mm, 0.0))
    ys, xs = np.nonzero(_mask(frame[176:304, 256:384], block.color))
    cx, cy = xs.mean() + 256, ys.mean() + 176
    if block.shape in ("square", "rectangle", "circle"):
        assert abs(cx - 320) <= 1 and abs(cy - 240) <= 1
    else:
        # triangle and L have their grasp point away from the pixel centroid
        assert math.hypot(cx - 320, cy - 240) <= block.size_mm / 3


def test_camera_translation_shifts_pixels(workspace):
    a = sim.render(workspace, CameraPose(300, 240)).mean(axis=-1)
    b = sim.render(workspace, CameraPose(310, 240)).mean(axis=-1)
    a = a - a.mean()
    b = b - b.mean()
    scores = {s: float(np.sum(a[:, 40:600] * b[:, 40 + s:600 + s])) for s in range(-15, 16)}
    assert abs(max(scores, key=scores.get) - (-10)) <= 1


@settings(max_examples=50, deadline=None)
@given(x=st.floats(0, 640), y=st.floats(0, 480), cx=st.floats(0, 640), cy=st.floats(0, 480),
       yaw=st.floats(-math.pi, math.pi))
def test_projection_round_trip(x, y, cx, cy, yaw):
    cam = CameraPose(cx, cy, yaw)
    u, v = sim.world_to_pixel(cam, x, y)
    bx, by = sim.pixel_to_world(cam, u, v)
    assert math.hypot(bx - x, by - y) < 0.5


def test_projection_rigid():
    cam = CameraPose(100, 50, 0.7)
    u1, v1 = sim.world_to_pixel(cam, 0, 0)
    u2, v2 = sim.world_to_pixel(cam, 30, 40)
    assert math.hypot(u2 - u1, v2 - v1) == pytest.approx(50)


def test_yawed_camera_sees_block_rotated(workspace):
    block = workspace.block(8)
    aligned = sim.render(workspace, CameraPose(block.x_mm, block.y_mm, block.yaw_rad))
    turned = sim.render(workspace, CameraPose(block.x_mm, block.y_mm, block.yaw_rad + math.pi / 2))
    m0 = _mask(aligned[176:304, 256:384], block.color)
    m1 = _mask(turned[176:304, 256:384], block.color)
    assert m0.sum() == pytest.approx(m1.sum(), rel=0.05)
    assert (m0 & m1).sum() < 0.8 * m0.sum()


def test_capture_demonstration(workspace):
    demo = sim.capture_demonstration(workspace, 3)
    block = workspace.block(3)
    assert demo.target_id == 3
    assert demo.capture_pose == CameraPose(block.x_mm, block.y_mm, block.yaw_rad)
    assert demo.frame.tobytes() == sim.capture_demonstration(workspace, 3).frame.tobytes()
    with pytest.raises(NotFoundError):
        sim.capture_demonstration(workspace, 10)


@pytest.mark.parametrize("size", [20, 50, 80])
@pytest.mark.parametrize("shape", sim.SHAPES)
def test_centre_crop_contains_whole_block(shape, size):
    block = sim.Block(0, shape, (0.9, 0.1, 0.1), size, 320, 240, 0.4)
    ws = sim.WorkspaceState((block,), 1)
    frame = sim.capture_demonstration(ws, 0).frame
    mask = _mask(frame, block.color, tol=0.3)
    crop = mask[176:304, 256:384]
    assert crop.sum() == mask.sum() > 0


def test_perturb_degenerate_is_identity(workspace):
    assert sim.perturb(workspace, 0, SeededRNG(0), 0, 0) is workspace


def test_perturb_moves_only_target(workspace):
    moved = sim.perturb(workspace, 2, SeededRNG(1), 80, 30)
    for a, b in zip(workspace.blocks, moved.blocks):
        if a.id != 2:
            assert a == b
    assert moved.block(2) != workspace.block(2)
    assert moved.is_valid()


def test_perturb_offset_statistics():
    # a lone block in an open field so placement never rejects
    ws = sim.WorkspaceState((sim.Block(0, "square", (1, 0, 0), 40, 320, 240),), 0)
    rng = SeededRNG(2)
    radii, yaws = [], []
    for k in range(10_000):
        b = sim.perturb(ws, 0, rng.child(k), 80, 40).block(0)
        radii.append(math.hypot(b.x_mm - 320, b.y_mm - 240))
        yaws.append(math.degrees(b.yaw_rad))
    radii = np.array(radii)
    assert radii.max() <= 80
    assert abs(radii.mean() - 160 / 3) <= 2
    assert max(map(abs, yaws)) <= 40


def test_perturb_default_scene_within_bound(workspace):
    rng = SeededRNG(3)
    for k in range(1000):
        b0 = workspace.block(k % 10)
        b = sim.perturb(workspace, k % 10, rng.child(k)).block(k % 10)
        assert math.hypot(b.x_mm - b0.x_mm, b.y_mm - b0.y_mm) <= 80


def test_perturb_placement_error():
    a = sim.Block(0, "square", (1, 0, 0), 80, 60, 60)
    ws = sim.WorkspaceState((a,), 0, width_mm=120, height_mm=120)
    with pytest.raises(PlacementError):
        sim.perturb(ws, 0, SeededRNG(0), 80, 0)


def test_check_grasp_examples(workspace):
    b = workspace.block(0)
    assert sim.check_grasp(workspace, CameraPose(b.x_mm, b.y_mm, b.yaw_rad), 0)
    assert not sim.check_grasp(workspace, CameraPose(b.x_mm + 11, b.y_mm, b.yaw_rad), 0)
    assert sim.check_grasp(workspace, CameraPose(b.x_mm, b.y_mm, b.yaw_rad + math.radians(88)), 0)
    assert not sim.check_grasp(workspace, CameraPose(b.x_mm, b.y_mm, b.yaw_rad + math.radians(45)), 0)


def test_symmetry_reduction():
    def err(shape, deg):
        return sim.angle_error_deg(sim.Block(0, shape, (0, 0, 0), 40, 100, 100, 0.0), math.radians(deg))
    assert err("circle", 73) == 0
    assert err("rectangle", 178) == pytest.approx(2)
    assert err("rectangle", 90) == pytest.approx(90)
    assert err("triangle", 118) == pytest.approx(2)
    assert err("L", 180) == pytest.approx(180)
    assert err("L", -350) == pytest.approx(10)


def test_scenario_round_trip(workspace):
    text = sim.format_scenario(workspace)
    again = sim.parse_scenario(text)
    assert again.seed == workspace.seed
    for a, b in zip(workspace.blocks, again.blocks):
        assert a == b


@pytest.mark.parametrize("text,line", [
    ("seed=1\n0 square 1 2 3 40 100 100\n", 2),
    ("# hdr\n\n0 square 1 2 3 40 100 100 zero\n", 3),
    ("0 hexagon 1 2 3 40 100 100 0\n", 1),
    ("seed=x\n", 1),
    ("0 square 1 2 300 40 100 100 0\n", 1),
    ("0 square 1 2 3 40 100 100 0\n0 square 1 2 3 40 300 300 0\n", 2),
])
def test_scenario_errors_carry_line(text, line):
    with pytest.raises(sim.ScenarioParseError) as info:
        sim.parse_scenario(text)
    assert info.value.lineno == line
    assert f"line {line}" in str(info.value)


def test_scenario_overlap_rejected():
    with pytest.raises(sim.ScenarioParseError):
        sim.parse_scenario("0 square 1 2 3 40 100 100 0\n1 square 1 2 3 40 110 100 0\n")


def test_with_block_replaces(workspace):
    b = replace(workspace.block(1), x_mm=200.0)
    assert workspace.with_block(b).block(1).x_mm == 200.0
    assert workspace.block(1).x_mm != 200.0
