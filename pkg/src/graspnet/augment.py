"""Positive/negative patch sampling from demonstration frames.

Positives are centre crops of the target's frame with a small rotation;
negatives are off-centre crops at any rotation, or (multi scheme) centre
crops of other blocks' demonstrations. Every sample also gets a random
brightness gain and contrast stretch.

Rotations use the same convention everywhere: rotating by ``angle`` about
``center`` moves content at offset ``d`` from the centre to ``R(angle) d``
(x right, y down).
"""
from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import cv2
import numpy as np

from .demo import FRAME_HEIGHT, FRAME_WIDTH, as_demo_dict
from .errors import PreconditionError
from .model import PATCH_SIZE
from .rng import DOMAIN_EVAL, SeededRNG, as_rng

HALF = PATCH_SIZE // 2
FRAME_CENTER = (FRAME_WIDTH // 2, FRAME_HEIGHT // 2)
EVAL_CHUNK = 256


@dataclass(frozen=True)
class AugmentationConfig:
    pos_rotation_range: float = 3.0
    neg_center_exclusion_radius: float = 16.0
    brightness_range: tuple = (0.5, 1.5)
    contrast_range: tuple = (0.5, 1.5)
    neg_rotation_range: float = 180.0
    cross_fraction: float = 0.5
    # integer pixel jitter of positive crop centres; 0 keeps positives exactly centred
    pos_center_jitter: int = 0
    # share of negatives drawn close to the centre, between the exclusion disc and neg_near_radius
    neg_near_fraction: float = 0.0
    neg_near_radius: float = 48.0

    def __post_init__(self):
        if self.pos_rotation_range < 0 or self.neg_rotation_range < 0:
            raise ValueError("rotation ranges must be non-negative")
        for lo, hi in (self.brightness_range, self.contrast_range):
            if not 0 < lo < hi:
                raise ValueError(f"degenerate factor range ({lo}, {hi})")
        if self.neg_center_exclusion_radius < 0:
            raise ValueError("exclusion radius must be >= 0")
        if not 0 <= self.pos_center_jitter < max(self.neg_center_exclusion_radius / 2 ** 0.5, 1):
            raise ValueError("positive jitter must be >= 0 and keep clear of the negative exclusion disc")
        if not 0 <= self.neg_near_fraction <= 1:
            raise ValueError("neg_near_fraction must lie in [0, 1]")
        if not self.neg_center_exclusion_radius < self.neg_near_radius <= HALF:
            raise ValueError("neg_near_radius must exceed the exclusion radius and stay within half a patch")
        if not 0 <= self.cross_fraction <= 1:
            raise ValueError("cross_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class Provenance:
    source_id: int
    center: tuple
    angle_deg: float
    brightness: float
    contrast: float


@dataclass(frozen=True)
class LabeledSample:
    patch: np.ndarray
    label: int
    provenance: Provenance


# ---- image ops -------------------------------------------------------------

cv2.setNumThreads(1)


def _inverse_affine(center, angle_deg, out_origin=(0.0, 0.0)):
    """2x3 map from output pixel to source pixel for a rotation about ``center``.

    ``out_origin`` is the source position of output pixel (0, 0) before
    rotation; it differs from zero when the output is a crop.
    """
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    cx, cy = center
    ox, oy = out_origin
    # source = center + R(-a) (q + origin - center)
    dx, dy = ox - cx, oy - cy
    return np.array([[c, s, cx + c * dx + s * dy],
                     [-s, c, cy - s * dx + c * dy]], dtype=np.float64)


def _warp(image, matrix, size):
    return cv2.warpAffine(image, matrix, size,
                          flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_REPLICATE)


def rotate_image(image: np.ndarray, angle_deg: float, center=None) -> np.ndarray:
    """Rotate about ``center`` (default: the geometric image centre).

    Bilinear interpolation; samples falling outside the image replicate the
    nearest edge pixel.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    if center is None:
        center = ((w - 1) / 2, (h - 1) / 2)
    if angle_deg == 0:
        return image.copy()
    out = _warp(image, _inverse_affine(center, angle_deg), (w, h))
    return out.reshape(image.shape)


def apply_brightness_contrast(image, brightness: float, contrast: float) -> np.ndarray:
    """``clip((x * brightness - 0.5) * contrast + 0.5, 0, 1)``."""
    image = np.asarray(image)
    if brightness == 1 and contrast == 1:
        # (x - 0.5) + 0.5 is not exact in floating point
        return image.copy()
    out = (image * brightness - 0.5) * contrast + 0.5
    return np.clip(out, 0, 1).astype(image.dtype, copy=False)


def extract_patches(frame: np.ndarray, centers, angles) -> np.ndarray:
    """Rotated 128x128 crops of one frame, shape (n, 128, 128, 3).

    Crop ``k`` covers pixels ``[cx - 64, cx + 64)`` horizontally (likewise
    vertically) and is rotated about its own centre. With angle 0 and an
    integer centre it is an exact slice of the frame.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    angles = np.asarray(angles, dtype=np.float64).reshape(-1)
    out = np.empty((len(centers), PATCH_SIZE, PATCH_SIZE, frame.shape[2]), dtype=frame.dtype)
    for k, ((cx, cy), angle) in enumerate(zip(centers, angles)):
        pivot = (cx - 0.5, cy - 0.5)
        origin = (cx - HALF, cy - HALF)
        out[k] = _warp(frame, _inverse_affine(pivot, angle, origin), (PATCH_SIZE, PATCH_SIZE))
    return out


# ---- parameter draws -------------------------------------------------------

def _draw_factors(cfg: AugmentationConfig, rng: SeededRNG):
    b = float(rng.uniform(*cfg.brightness_range))
    c = float(rng.uniform(*cfg.contrast_range))
    return b, c


def _draw_positive(cfg, rng):
    angle = float(rng.uniform(-cfg.pos_rotation_range, cfg.pos_rotation_range))
    j = cfg.pos_center_jitter
    if j == 0:
        return FRAME_CENTER, angle
    dx, dy = (int(v) for v in rng.integers(-j, j + 1, size=2))
    return (FRAME_CENTER[0] + dx, FRAME_CENTER[1] + dy), angle


def _draw_negative(cfg, rng):
    cx0, cy0 = FRAME_CENTER
    r2 = cfg.neg_center_exclusion_radius ** 2
    if cfg.neg_near_fraction > 0 and rng.uniform() < cfg.neg_near_fraction:
        far = int(cfg.neg_near_radius)
        while True:
            dx, dy = (int(v) for v in rng.integers(-far, far + 1, size=2))
            if r2 < dx * dx + dy * dy <= far * far:
                break
        angle = float(rng.uniform(-cfg.neg_rotation_range, cfg.neg_rotation_range))
        return (cx0 + dx, cy0 + dy), angle
    while True:
        cx = int(rng.integers(HALF, FRAME_WIDTH - HALF + 1))
        cy = int(rng.integers(HALF, FRAME_HEIGHT - HALF + 1))
        if (cx - cx0) ** 2 + (cy - cy0) ** 2 > r2:
            break
    angle = float(rng.uniform(-cfg.neg_rotation_range, cfg.neg_rotation_range))
    return (cx, cy), angle


def _non_target_ids(demos: dict, target_id: int):
    return sorted(k for k in demos if k != target_id)


@dataclass(frozen=True)
class _Spec:
    source_id: int
    center: tuple
    angle: float
    brightness: float
    contrast: float
    label: int


def _plan(demos, target_id, kind, cfg, rng) -> _Spec:
    if kind == "pos":
        src = target_id
        center, angle = _draw_positive(cfg, rng)
        label = 1
    elif kind == "neg":
        src = target_id
        center, angle = _draw_negative(cfg, rng)
        label = 0
    elif kind == "cross":
        others = _non_target_ids(demos, target_id)
        if not others:
            raise PreconditionError("cross negatives need at least one non-target demonstration")
        src = others[int(rng.integers(0, len(others)))]
        center, angle = _draw_positive(cfg, rng)
        label = 0
    else:  # pragma: no cover
        raise ValueError(kind)
    b, c = _draw_factors(cfg, rng)
    return _Spec(src, center, angle, b, c, label)


def _realise(demos, specs) -> np.ndarray:
    """Render a list of specs into an (n, 128, 128, 3) float32 stack."""
    out = np.empty((len(specs), PATCH_SIZE, PATCH_SIZE, 3), dtype=np.float32)
    by_src: dict = {}
    for k, s in enumerate(specs):
        by_src.setdefault(s.source_id, []).append(k)
    for src, idx in by_src.items():
        frame = demos[src].frame
        centers = [specs[k].center for k in idx]
        angles = [specs[k].angle for k in idx]
        out[idx] = extract_patches(frame, centers, angles)
    b = np.array([s.brightness for s in specs], dtype=np.float32)
    c = np.array([s.contrast for s in specs], dtype=np.float32)
    keep = out[(b == 1) & (c == 1)]
    b, c = b[:, None, None, None], c[:, None, None, None]
    np.multiply(out, b, out=out)
    out -= 0.5
    np.multiply(out, c, out=out)
    out += 0.5
    np.clip(out, 0, 1, out=out)
    # identity factors must give the raw crop bit for bit
    out[(b == 1).ravel() & (c == 1).ravel()] = keep
    return out


def _sample(demos, specs, k) -> LabeledSample:
    patch = _realise(demos, [specs[k]])[0]
    s = specs[k]
    return LabeledSample(patch, s.label, Provenance(s.source_id, s.center, s.angle, s.brightness, s.contrast))


def sample_positive(demo, cfg: AugmentationConfig = AugmentationConfig(), rng=None) -> LabeledSample:
    demos = as_demo_dict(demo)
    tid = next(iter(demos))
    return _sample(demos, [_plan(demos, tid, "pos", cfg, as_rng(rng))], 0)


def sample_negative(demo, cfg: AugmentationConfig = AugmentationConfig(), rng=None) -> LabeledSample:
    demos = as_demo_dict(demo)
    tid = next(iter(demos))
    return _sample(demos, [_plan(demos, tid, "neg", cfg, as_rng(rng))], 0)


def sample_negative_cross(demos, target_id: int, cfg: AugmentationConfig = AugmentationConfig(),
                          rng=None) -> LabeledSample:
    demos = as_demo_dict(demos)
    return _sample(demos, [_plan(demos, target_id, "cross", cfg, as_rng(rng))], 0)


# ---- batches -------------------------------------------------------------

class SampleBatch(Sequence):
    """A batch of labelled patches stored as stacked arrays.

    Indexing yields :class:`LabeledSample` objects; ``patches`` and
    ``labels`` give the arrays the trainer consumes directly.
    """

    def __init__(self, patches, labels, provenance, fallback=False):
        self.patches = patches
        self.labels = labels
        self.provenance = provenance
        self.fallback = fallback

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, k):
        return LabeledSample(self.patches[k], int(self.labels[k]), self.provenance[k])

    @property
    def source_ids(self):
        return {p.source_id for p in self.provenance}


def _resolve_scheme(demos, target_id, scheme):
    if target_id not in demos:
        raise PreconditionError(f"no demonstration for target {target_id}")
    if scheme not in ("single", "multi"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "multi" and not _non_target_ids(demos, target_id):
        warnings.warn("multi scheme with a single demonstration; using single", RuntimeWarning)
        return "single", True
    return scheme, False


def _plan_batch(demos, target_id, scheme, n_pos, n_neg, cfg, rng):
    specs = [_plan(demos, target_id, "pos", cfg, rng) for _ in range(n_pos)]
    for _ in range(n_neg):
        kind = "neg"
        if scheme == "multi" and rng.uniform() < cfg.cross_fraction:
            kind = "cross"
        specs.append(_plan(demos, target_id, kind, cfg, rng))
    return specs


def _to_batch(demos, specs, fallback=False) -> SampleBatch:
    patches = _realise(demos, specs)
    labels = np.array([s.label for s in specs], dtype=np.float32)
    prov = [Provenance(s.source_id, s.center, s.angle, s.brightness, s.contrast) for s in specs]
    return SampleBatch(patches, labels, prov, fallback)


def generate_batch(demos, target_id: int, scheme: str = "single", batch_size: int = 64,
                   pos_fraction: float = 0.5, rng=None,
                   cfg: AugmentationConfig = AugmentationConfig()) -> SampleBatch:
    """``ceil(pos_fraction * batch_size)`` positives followed by negatives.

    Single scheme negatives are off-centre crops of the target frame; the
    multi scheme swaps each one, with probability ``cfg.cross_fraction``, for
    a centre crop of another demonstration. A multi request with no other
    demonstrations falls back to single and sets ``batch.fallback``.
    """
    if batch_size < 2:
        raise PreconditionError("batch_size must be >= 2")
    demos = as_demo_dict(demos)
    scheme, fallback = _resolve_scheme(demos, target_id, scheme)
    n_pos = math.ceil(pos_fraction * batch_size)
    specs = _plan_batch(demos, target_id, scheme, n_pos, batch_size - n_pos, cfg, as_rng(rng))
    return _to_batch(demos, specs, fallback)


class EvalSet(Sequence):
    """Fixed, lazily rendered evaluation set (positives first, then negatives).

    Samples are generated in chunks of 256, each from its own child stream of
    ``SeededRNG(seed)`` under ``domain`` (test sets and validation sets use
    different domains), so training streams never overlap it. Large sets keep
    at most one chunk in memory.
    """

    def __init__(self, demos, target_id, n_pos, n_neg, seed,
                 cfg: AugmentationConfig = AugmentationConfig(), cache=None, domain=DOMAIN_EVAL):
        self.demos = as_demo_dict(demos)
        self.target_id = target_id
        self.n_pos = int(n_pos)
        self.n_neg = int(n_neg)
        self.seed = int(seed)
        self.cfg = cfg
        self.domain = domain
        self.scheme, self.fallback = _resolve_scheme(self.demos, target_id, "multi")
        total = self.n_pos + self.n_neg
        # small sets are kept in memory; big test sets stream
        self.cache = total <= 2048 if cache is None else cache
        self._chunks: dict = {}

    def __len__(self):
        return self.n_pos + self.n_neg

    @property
    def labels(self) -> np.ndarray:
        return (np.arange(len(self)) < self.n_pos).astype(np.float32)

    def _chunk(self, c: int) -> SampleBatch:
        if c in self._chunks:
            return self._chunks[c]
        lo = c * EVAL_CHUNK
        hi = min(lo + EVAL_CHUNK, len(self))
        rng = SeededRNG(self.seed, (self.domain, c))
        n_pos = max(0, min(hi, self.n_pos) - lo)
        specs = _plan_batch(self.demos, self.target_id, self.scheme, n_pos, hi - lo - n_pos, self.cfg, rng)
        batch = _to_batch(self.demos, specs, self.fallback)
        if self.cache:
            self._chunks[c] = batch
        return batch

    def chunks(self):
        for c in range(math.ceil(len(self) / EVAL_CHUNK)):
            yield self._chunk(c)

    def __getitem__(self, k):
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        return self._chunk(k // EVAL_CHUNK)[k % EVAL_CHUNK]


def generate_eval_set(demos, target_id: int, n_pos: int, n_neg: int, seed: int,
                      cfg: AugmentationConfig = AugmentationConfig()) -> EvalSet:
    """Validation/test set drawn with the extended (multi) scheme."""
    return EvalSet(demos, target_id, n_pos, n_neg, seed, cfg)
