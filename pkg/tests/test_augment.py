import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from graspnet.augment import (AugmentationConfig, apply_brightness_contrast, extract_patches, generate_batch,
                              generate_eval_set, rotate_image, sample_negative, sample_negative_cross,
                              sample_positive)
from graspnet.errors import PreconditionError
from graspnet.rng import SeededRNG
from oracles import rotated_crop_ref

IDENTITY = AugmentationConfig(pos_rotation_range=0.0, brightness_range=(1.0, 1.0 + 1e-12),
                              contrast_range=(1.0, 1.0 + 1e-12))


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(0).uniform(0, 1, (480, 640, 3)).astype(np.float32)


# rotate_image

def test_rotate_zero_is_identity(image):
    out = rotate_image(image, 0.0)
    np.testing.assert_array_equal(out, image)
    assert out is not image


def test_rotate_round_trip_interior():
    # square image so a quarter turn keeps the whole content in frame
    img = np.random.default_rng(1).uniform(0, 1, (96, 96, 3)).astype(np.float32)
    back = rotate_image(rotate_image(img, 90.0), -90.0)
    assert np.abs(back - img)[2:-2, 2:-2].max() <= 0.02


def test_rotate_uniform_stays_uniform():
    img = np.full((50, 70, 3), 0.3, np.float32)
    np.testing.assert_allclose(rotate_image(img, 37.0), 0.3, atol=1e-6)


def test_rotate_direction_convention():
    # a dot right of centre moves to below centre for +90 (x right, y down)
    img = np.zeros((41, 41), np.float32)
    img[20, 30] = 1.0
    out = rotate_image(img, 90.0)
    assert np.unravel_index(np.argmax(out), out.shape) == (30, 20)


@settings(max_examples=15, deadline=None)
@given(cx=st.integers(64, 576), cy=st.integers(64, 416), angle=st.floats(-180, 180))
def test_patch_extraction_matches_reference(cx, cy, angle):
    img = np.random.default_rng(cx * 1000 + cy).uniform(0, 1, (480, 640, 3)).astype(np.float32)
    got = extract_patches(img, [(cx, cy)], [angle])[0]
    ref = rotated_crop_ref(img, cx, cy, angle)
    assert np.abs(got - ref).max() <= 1e-3


def test_identity_crop_is_exact_slice(image):
    got = extract_patches(image, [(100, 200), (320, 240)], [0.0, 0.0])
    np.testing.assert_array_equal(got[0], image[136:264, 36:164])
    np.testing.assert_array_equal(got[1], image[176:304, 256:384])


# brightness / contrast

def test_brightness_contrast_examples():
    x = np.random.default_rng(2).uniform(0, 1, (8, 8, 3))
    np.testing.assert_array_equal(apply_brightness_contrast(x, 1.0, 1.0), x)
    np.testing.assert_allclose(apply_brightness_contrast(np.full((3, 3), 0.5), 1.0, 1.37), 0.5)
    assert apply_brightness_contrast(np.array([0.4]), 1.5, 1.0)[0] == pytest.approx(0.6)


@given(b=st.floats(0.5, 1.5), c=st.floats(0.5, 1.5), x=st.floats(0, 1))
def test_brightness_contrast_formula_and_range(b, c, x):
    out = apply_brightness_contrast(np.array([x]), b, c)[0]
    assert 0 <= out <= 1
    assert out == pytest.approx(min(1, max(0, (x * b - 0.5) * c + 0.5)))


# samplers

def test_positive_identity_draw_is_centre_crop(demos):
    s = sample_positive(demos[0], IDENTITY, SeededRNG(0))
    np.testing.assert_array_equal(s.patch, demos[0].frame[176:304, 256:384])
    assert s.label == 1


def test_positive_contract(demos):
    rng = SeededRNG(1)
    batch = generate_batch(demos, 2, "single", 1000, 1.0 - 1e-9, rng)
    assert batch.labels.sum() == 1000 - 1 or batch.labels.sum() == 1000
    for p in batch.provenance[:int(batch.labels.sum())]:
        assert -3 <= p.angle_deg <= 3 and p.center == (320, 240) and p.source_id == 2
        assert 0.5 <= p.brightness <= 1.5 and 0.5 <= p.contrast <= 1.5


def test_negative_contract(demos):
    rng = SeededRNG(2)
    for k in range(1000):
        s = sample_negative(demos[3], rng=rng.child(k))
        cx, cy = s.provenance.center
        assert s.label == 0
        assert math.hypot(cx - 320, cy - 240) > 16
        assert 64 <= cx <= 576 and 64 <= cy <= 416
        assert -180 <= s.provenance.angle_deg <= 180
        assert s.patch.shape == (128, 128, 3)


def test_negative_centres_cover_frame(demos):
    rng = SeededRNG(3)
    centres = np.array([sample_negative(demos[3], rng=rng.child(k)).provenance.center for k in range(300)])
    assert centres[:, 0].min() < 120 and centres[:, 0].max() > 520
    assert centres[:, 1].min() < 110 and centres[:, 1].max() > 370


def test_cross_negative_sources_uniform(demos):
    rng = SeededRNG(4)
    batch = generate_batch(demos, 0, "multi", 2, 0.5, rng)  # warm-up for the import path
    assert len(batch) == 2
    cfg = AugmentationConfig()
    from graspnet.augment import _plan  # sources only; rendering 9000 patches is not needed
    counts = np.zeros(10, int)
    for k in range(9000):
        counts[_plan(demos, 0, "cross", cfg, rng.child(k)).source_id] += 1
    assert counts[0] == 0
    assert chisquare(counts[1:]).pvalue > 0.01


def test_cross_negative_is_relabelled_centre_crop(demos):
    s = sample_negative_cross(demos, 0, IDENTITY, SeededRNG(5))
    src = s.provenance.source_id
    assert src != 0 and s.label == 0 and s.provenance.center == (320, 240)
    np.testing.assert_array_equal(s.patch, demos[src].frame[176:304, 256:384])


def test_cross_negative_needs_other_demos(demos):
    with pytest.raises(PreconditionError):
        sample_negative_cross({0: demos[0]}, 0)


# batches

def test_batch_counts(demos):
    batch = generate_batch(demos, 1, "single", 64, 0.5, SeededRNG(6))
    assert int(batch.labels.sum()) == 32 and len(batch) == 64
    assert batch.patches.shape == (64, 128, 128, 3) and batch.patches.dtype == np.float32
    assert batch.patches.min() >= 0 and batch.patches.max() <= 1
    odd = generate_batch(demos, 1, "single", 7, 0.5, SeededRNG(6))
    assert int(odd.labels.sum()) == 4


def test_single_scheme_stays_on_target(demos):
    for k in range(5):
        assert generate_batch(demos, 4, "single", 64, 0.5, SeededRNG(k)).source_ids == {4}


def test_multi_scheme_mixes_sources(demos):
    batch = generate_batch(demos, 4, "multi", 64, 0.5, SeededRNG(7))
    negs = [p for p, y in zip(batch.provenance, batch.labels) if y == 0]
    cross = sum(p.source_id != 4 for p in negs)
    assert 0 < cross < len(negs)


def test_batch_deterministic(demos):
    a = generate_batch(demos, 5, "multi", 64, 0.5, SeededRNG(8))
    b = generate_batch(demos, 5, "multi", 64, 0.5, SeededRNG(8))
    assert a.patches.tobytes() == b.patches.tobytes()
    assert a.provenance == b.provenance


def test_multi_with_one_demo_falls_back(demos):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        batch = generate_batch({2: demos[2]}, 2, "multi", 16, 0.5, SeededRNG(9))
    assert batch.fallback and batch.source_ids == {2}
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)


def test_batch_size_precondition(demos):
    with pytest.raises(PreconditionError):
        generate_batch(demos, 0, "single", 1)


# eval sets

def test_eval_set_sizes_and_labels(demos):
    es = generate_eval_set(demos, 0, 200, 200, seed=1)
    assert len(es) == 400 and es.labels.sum() == 200
    assert es[0].label == 1 and es[399].label == 0
    big = generate_eval_set(demos, 0, 5000, 5000, seed=1)
    assert len(big) == 10000 and big.labels.sum() == 5000


def test_eval_set_deterministic_and_multi(demos):
    a = generate_eval_set(demos, 3, 300, 300, seed=2)
    b = generate_eval_set(demos, 3, 300, 300, seed=2)
    for ca, cb in zip(a.chunks(), b.chunks()):
        assert ca.patches.tobytes() == cb.patches.tobytes()
    sources = {p.source_id for c in a.chunks() for p in c.provenance}
    assert len(sources) > 2


def test_eval_set_disjoint_from_training_streams(demos):
    es = generate_eval_set(demos, 0, 32, 32, seed=0)
    first = next(es.chunks())
    train = generate_batch(demos, 0, "multi", 64, 0.5, SeededRNG(0))
    assert first.provenance != train.provenance


def test_positive_jitter_bounds_and_coverage(demos):
    cfg = AugmentationConfig(pos_center_jitter=8)
    rng = SeededRNG(3)
    seen = set()
    for k in range(600):
        s = sample_positive(demos[1], cfg, rng.child(k))
        dx, dy = s.provenance.center[0] - 320, s.provenance.center[1] - 240
        assert max(abs(dx), abs(dy)) <= 8 and s.label == 1
        seen.add((dx, dy))
    # 17 x 17 integer offsets, nearly all hit
    assert len(seen) > 250
    assert all(math.hypot(dx, dy) <= 16 for dx, dy in seen)


def test_zero_jitter_leaves_streams_unchanged(demos):
    a = generate_batch(demos, 4, "multi", 32, rng=SeededRNG(9))
    b = generate_batch(demos, 4, "multi", 32, rng=SeededRNG(9), cfg=AugmentationConfig(pos_center_jitter=0))
    np.testing.assert_array_equal(a.patches, b.patches)


@pytest.mark.parametrize("jitter", [-1, 12])
def test_jitter_must_clear_exclusion_disc(jitter):
    with pytest.raises(ValueError):
        AugmentationConfig(pos_center_jitter=jitter)


def test_near_negatives_fill_the_annulus(demos):
    cfg = AugmentationConfig(neg_center_exclusion_radius=8.0, neg_near_fraction=1.0, neg_near_radius=48.0)
    rng = SeededRNG(4)
    dists = []
    for k in range(400):
        s = sample_negative(demos[2], cfg, rng.child(k))
        dists.append(math.hypot(s.provenance.center[0] - 320, s.provenance.center[1] - 240))
    assert min(dists) > 8 and max(dists) <= 48
    # area-uniform over the annulus: about (28^2 - 8^2) / (48^2 - 8^2) inside radius 28
    inner = np.mean(np.array(dists) <= 28)
    assert abs(inner - (28 ** 2 - 8 ** 2) / (48 ** 2 - 8 ** 2)) < 0.08


@pytest.mark.parametrize("kw", [dict(neg_near_fraction=-0.1), dict(neg_near_fraction=1.5),
                                dict(neg_near_radius=10.0), dict(neg_near_radius=80.0)])
def test_near_negative_config_validation(kw):
    with pytest.raises(ValueError):
        AugmentationConfig(**kw)
