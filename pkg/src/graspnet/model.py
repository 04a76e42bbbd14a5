"""GraspNet: four strided 5x5 convolutions, average pooling and a 1x1 head.

The same weights run in two modes. :func:`forward_patch` classifies a single
128x128 crop; :func:`forward_full` slides the network over a larger frame by
pooling with stride 1, which yields a dense activation map whose cell ``(i, j)``
summarises the 128x128 window centred on pixel ``(64 + 16*j, 64 + 16*i)``.
"""
from __future__ import annotations

import os
import struct
import tempfile
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import CorruptFileError, InvalidShapeError
from .rng import SeededRNG, as_rng

PATCH_SIZE = 128
CELL_STRIDE = 16
CELL_OFFSET = PATCH_SIZE // 2
POOL_WINDOW = 8
CONV_STRIDE = 2
CONV_PADDING = 2

LAYERS = (
    ("conv1", (8, 3, 5, 5)),
    ("conv2", (8, 8, 5, 5)),
    ("conv3", (16, 8, 5, 5)),
    ("conv4", (16, 16, 5, 5)),
    ("fc1", (16, 16, 1, 1)),
    ("fc2", (16, 16, 1, 1)),
    ("out", (1, 16, 1, 1)),
)
CONV_LAYERS = ("conv1", "conv2", "conv3", "conv4")
HEAD_LAYERS = ("fc1", "fc2", "out")


def _param_shapes():
    shapes = []
    for name, shape in LAYERS:
        shapes.append((f"{name}.weight", shape))
        shapes.append((f"{name}.bias", (shape[0],)))
    return tuple(shapes)


PARAM_SHAPES = _param_shapes()
NUM_PARAMETERS = sum(int(np.prod(s)) for _, s in PARAM_SHAPES)
assert NUM_PARAMETERS == 12409


class GraspNetParams(Mapping):
    """Immutable, ordered mapping of tensor name -> float32 array.

    Reptile arithmetic is provided directly: ``a + b``, ``a - b`` and
    ``eps * a`` act tensor-wise.
    """

    def __init__(self, tensors: Mapping):
        data = {}
        for name, shape in PARAM_SHAPES:
            if name not in tensors:
                raise InvalidShapeError(f"missing tensor {name}")
            arr = np.asarray(tensors[name])
            if arr.shape != shape:
                raise InvalidShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            arr = arr.astype(np.float32, copy=True)
            arr.flags.writeable = False
            data[name] = arr
        if len(tensors) != len(PARAM_SHAPES):
            extra = set(tensors) - set(data)
            raise InvalidShapeError(f"unexpected tensors {sorted(extra)}")
        if sum(a.size for a in data.values()) != NUM_PARAMETERS:
            raise InvalidShapeError("parameter count mismatch")
        self._data = data

    from_dict = classmethod(lambda cls, d: cls(d))

    def __getitem__(self, key):
        return self._data[key]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __add__(self, other):
        return GraspNetParams({k: self[k] + other[k] for k in self})

    def __sub__(self, other):
        return GraspNetParams({k: self[k] - other[k] for k in self})

    def __rmul__(self, scalar):
        return GraspNetParams({k: np.float32(scalar) * self[k] for k in self})

    def __repr__(self):
        return f"GraspNetParams({NUM_PARAMETERS} parameters)"

    @property
    def num_parameters(self) -> int:
        return NUM_PARAMETERS

    def flat(self) -> np.ndarray:
        return np.concatenate([self[k].ravel() for k in self])

    def equals(self, other) -> bool:
        """Bit-exact comparison."""
        return all(np.array_equal(self[k], other[k]) for k in self)


def init_params(rng: SeededRNG | int | None = None) -> GraspNetParams:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases."""
    rng = as_rng(rng)
    tensors = {}
    for name, shape in LAYERS:
        fan_in = shape[1] * shape[2] * shape[3]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        tensors[f"{name}.weight"] = w.astype(np.float32)
        tensors[f"{name}.bias"] = np.zeros(shape[0], dtype=np.float32)
    return GraspNetParams(tensors)


def to_nchw(images: np.ndarray) -> np.ndarray:
    """(N, H, W, 3) or (H, W, 3) images -> contiguous float32 (N, 3, H, W)."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[-1] != 3:
        raise InvalidShapeError(f"expected (..., H, W, 3) images, got {images.shape}")
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=np.float32)


def _layer(params, name):
    return params[f"{name}.weight"], params[f"{name}.bias"]


def _run(params, x, pool_window, pool_stride, keep_cache=False):
    """Forward pass on an NCHW batch; returns sigmoid outputs (N, 1, H', W')."""
    cache = []
    h = x
    for name in CONV_LAYERS:
        w, b = _layer(params, name)
        z, cols = ops.conv2d_forward_cols(h, w, b, CONV_STRIDE, CONV_PADDING)
        if keep_cache:
            cache.append((name, h, cols, z))
        h = ops.relu_forward(z)
    pool_in = h
    h = ops.avgpool_forward(h, pool_window, pool_stride)
    if keep_cache:
        cache.append(("pool", pool_in, None, None))
    for name in HEAD_LAYERS:
        w, b = _layer(params, name)
        z, cols = ops.conv2d_forward_cols(h, w, b, 1, 0)
        if keep_cache:
            cache.append((name, h, cols, z))
        h = ops.relu_forward(z) if name != "out" else ops.sigmoid_forward(z)
    return h, cache


def forward_backward(params, x, targets, pool_window=POOL_WINDOW):
    """Loss and gradients for a batch of patches.

    ``x`` is an NCHW batch whose conv stack output is ``pool_window`` square
    (128x128 inputs for the default window). Returns ``(probs, loss, grads)``.
    Works in the dtype of ``x`` and of ``params``' tensors.
    """
    out, cache = _run(params, x, pool_window, 1, keep_cache=True)
    if out.shape[2:] != (1, 1):
        raise InvalidShapeError(f"patch batch must reduce to 1x1, got {out.shape[2:]}")
    probs = out.reshape(-1)
    loss, g = ops.bce_loss(probs, targets)
    g = g.reshape(out.shape)
    grads = {}
    for name, h_in, cols, z in reversed(cache):
        if name == "pool":
            g = ops.avgpool_backward(g, h_in.shape, pool_window, 1)
            continue
        if name == "out":
            g = ops.sigmoid_backward(g, out)
        else:
            g = ops.relu_backward(g, z)
        w, _ = _layer(params, name)
        stride, pad = (CONV_STRIDE, CONV_PADDING) if name in CONV_LAYERS else (1, 0)
        g, gw, gb = ops.conv2d_backward(g, h_in, w, stride, pad, cols=cols,
                                        need_input_grad=name != "conv1")
        grads[f"{name}.weight"] = gw
        grads[f"{name}.bias"] = gb
    return probs, loss, {k: grads[k] for k, _ in PARAM_SHAPES}


def predict_patches(params, patches, chunk=128) -> np.ndarray:
    """Grasp-success probabilities for an (N, 128, 128, 3) stack of patches."""
    patches = np.asarray(patches)
    if patches.ndim != 4 or patches.shape[1:] != (PATCH_SIZE, PATCH_SIZE, 3):
        raise InvalidShapeError(f"expected (N, 128, 128, 3) patches, got {patches.shape}")
    out = np.empty(len(patches), dtype=np.float32)
    for start in range(0, len(patches), chunk):
        x = to_nchw(patches[start:start + chunk])
        p, _ = _run(params, x, POOL_WINDOW, 1)
        out[start:start + chunk] = p.reshape(-1)
    return out


def forward_patch(params, patch) -> float:
    """Grasp-success probability for one 128x128x3 patch."""
    patch = np.asarray(patch)
    if patch.shape != (PATCH_SIZE, PATCH_SIZE, 3):
        raise InvalidShapeError(f"expected a 128x128x3 patch, got {patch.shape}")
    p, _ = _run(params, to_nchw(patch), POOL_WINDOW, 1)
    return float(p[0, 0, 0, 0])


@dataclass(frozen=True)
class ActivationMap:
    grid: np.ndarray
    input_shape: tuple
    cell_stride: int = CELL_STRIDE
    cell_offset: int = CELL_OFFSET

    @property
    def shape(self):
        return self.grid.shape

    def cell_to_pixel(self, i: int, j: int):
        """(x, y) pixel coordinates of the centre of cell (row i, col j)."""
        return (self.cell_offset + self.cell_stride * j, self.cell_offset + self.cell_stride * i)

    def argmax(self):
        """Row-major first maximum as (row, col)."""
        flat = int(np.argmax(self.grid))
        return divmod(flat, self.grid.shape[1])

    def max(self) -> float:
        return float(self.grid.max())


def map_shape(height: int, width: int):
    def reduce(n):
        for _ in CONV_LAYERS:
            n = ops.conv_output_size(n, 5, CONV_STRIDE, CONV_PADDING)
        return n - POOL_WINDOW + 1
    return reduce(height), reduce(width)


def forward_full_batch(params, images) -> list[ActivationMap]:
    """Activation maps for a stack of equally sized (N, H, W, 3) images."""
    x = to_nchw(images)
    h, w = x.shape[2:]
    if h < PATCH_SIZE or w < PATCH_SIZE:
        raise InvalidShapeError(f"image {h}x{w} smaller than the {PATCH_SIZE}px receptive field")
    out, _ = _run(params, x, POOL_WINDOW, 1)
    return [ActivationMap(out[n, 0].copy(), (h, w)) for n in range(out.shape[0])]


def forward_full(params, image) -> ActivationMap:
    """Fully-convolutional activation map for an (H, W, 3) image."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise InvalidShapeError(f"expected an (H, W, 3) image, got {image.shape}")
    return forward_full_batch(params, image[None])[0]


def forward_windows(params, image) -> ActivationMap:
    """Activation map scored one cell at a time on its own 128x128 crop.

    Same cell geometry as :func:`forward_full`, but every cell is exactly the
    patch classifier's output on the window it covers, zero padding included.
    The dense pass lets each cell see real pixels where a training patch saw
    padding, which can move the output a long way. About 40x slower.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidShapeError(f"expected an (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    if h < PATCH_SIZE or w < PATCH_SIZE:
        raise InvalidShapeError(f"image {h}x{w} smaller than the {PATCH_SIZE}px receptive field")
    rows, cols = map_shape(h, w)
    windows = np.lib.stride_tricks.sliding_window_view(image, (PATCH_SIZE, PATCH_SIZE), axis=(0, 1))
    windows = windows[:CELL_STRIDE * rows:CELL_STRIDE, :CELL_STRIDE * cols:CELL_STRIDE]
    crops = windows.transpose(0, 1, 3, 4, 2).reshape(-1, PATCH_SIZE, PATCH_SIZE, 3)
    grid = predict_patches(params, crops).reshape(rows, cols)
    return ActivationMap(grid, (h, w))


def upsample_map(amap: ActivationMap, target_shape=None) -> np.ndarray:
    """Bilinear upsampling of the map to pixel resolution.

    Cell values sit at their centre pixels; pixels outside the hull of cell
    centres take the nearest edge value.
    """
    h, w = target_shape if target_shape is not None else amap.input_shape
    grid = np.asarray(amap.grid, dtype=np.float64)
    rows, cols = grid.shape

    def axis_weights(n_px, n_cells):
        pos = (np.arange(n_px, dtype=np.float64) - amap.cell_offset) / amap.cell_stride
        pos = np.clip(pos, 0, n_cells - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_cells - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis_weights(h, rows)
    c0, c1, fc = axis_weights(w, cols)
    top = grid[r0][:, c0] * (1 - fc) + grid[r0][:, c1] * fc
    bottom = grid[r1][:, c0] * (1 - fc) + grid[r1][:, c1] * fc
    out = top * (1 - fr[:, None]) + bottom * fr[:, None]
    return np.clip(out, 0.0, 1.0)


# ---- .gnw weight files -----------------------------------------------------

_MAGIC = b"GNW1"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def _shape_row(shape):
    return tuple(shape) + (0,) * (4 - len(shape))


def params_to_bytes(params: GraspNetParams) -> bytes:
    parts = [_HEADER.pack(_MAGIC, _VERSION, len(PARAM_SHAPES), 0)]
    for name, shape in PARAM_SHAPES:
        parts.append(struct.pack("<4I", *_shape_row(shape)))
    for name, _ in PARAM_SHAPES:
        parts.append(np.asarray(params[name], dtype="<f4").tobytes())
    return b"".join(parts)


def params_from_bytes(blob: bytes) -> GraspNetParams:
    if len(blob) < _HEADER.size:
        raise CorruptFileError("file shorter than header")
    magic, version, count, _ = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise CorruptFileError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise CorruptFileError(f"unsupported format version {version}")
    if count != len(PARAM_SHAPES):
        raise CorruptFileError(f"expected {len(PARAM_SHAPES)} tensors, file has {count}")
    offset = _HEADER.size
    expected_len = offset + 16 * count + 4 * NUM_PARAMETERS
    if len(blob) != expected_len:
        raise CorruptFileError(f"file is {len(blob)} bytes, expected {expected_len}")
    for name, shape in PARAM_SHAPES:
        row = struct.unpack_from("<4I", blob, offset)
        offset += 16
        if row != _shape_row(shape):
            raise CorruptFileError(f"{name}: shape table entry {row} != {shape}")
    tensors = {}
    for name, shape in PARAM_SHAPES:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape)
        if not np.isfinite(arr).all():
            raise CorruptFileError(f"{name}: non-finite weights")
        tensors[name] = arr.astype(np.float32)
        offset += 4 * n
    return GraspNetParams(tensors)


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_params(params: GraspNetParams, path) -> None:
    atomic_write_bytes(path, params_to_bytes(params))


def load_params(path) -> GraspNetParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
