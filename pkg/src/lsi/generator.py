"""Latent-to-scene generators.

Two decode paths share the 32-dim latent space:

* a weights-file generator (dense / conv-transpose / batch-norm / relu / tanh
  stack loaded from the LSIGEN1 binary format) whose 17x64x64 output is
  cropped to a scene, and
* a deterministic synthetic decoder used for desk-scale experiments, which
  turns a latent directly into terrain, enemies, platforms and coins.

The synthetic decoder is a frozen formula: changing any constant changes
every downstream archive, so treat it as part of the file format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .tiles import (
    CHANNELS,
    COLS,
    OUT_H,
    OUT_W,
    ROWS,
    CANONICAL_ALPHABET,
    TileAlphabet,
    TileGrid,
    crop_output,
)

LATENT_DIM = 32

MAGIC = b"LSIGEN1"  # trailing digit is the format version

BN_EPS = 1e-5  # fixed constant of the format

_KIND_TAGS = {"dense": 0, "conv-transpose-2d": 1, "batch-norm": 2, "relu": 3, "tanh": 4}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


class GeneratorFormatError(ValueError):
    pass


class BadMagic(GeneratorFormatError):
    pass


class TruncatedWeights(GeneratorFormatError):
    pass


class UnsupportedLayerKind(GeneratorFormatError):
    def __init__(self, tag):
        super().__init__(f"unsupported layer kind tag {tag!r}")
        self.tag = tag


class ShapeMismatch(GeneratorFormatError):
    def __init__(self, layer_index: int, detail: str):
        super().__init__(f"layer {layer_index}: {detail}")
        self.layer_index = layer_index


class NonFiniteActivation(ArithmeticError):
    def __init__(self, layer_index: int):
        super().__init__(f"non-finite activation after layer {layer_index}")
        self.layer_index = layer_index


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None


@dataclass(frozen=True)
class GeneratorSpec:
    layers: tuple[LayerSpec, ...]
    input_dim: int = LATENT_DIM
    shapes: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "shapes", _infer_shapes(self.layers, self.input_dim))

    @property
    def output_shape(self):
        return self.shapes[-1]


def _infer_shapes(layers, input_dim):
    """Walk the layer stack and return the shape after every layer.

    A flat tensor feeding a conv-transpose is reshaped to (C,1,1); a flat
    final tensor of size 17*64*64 is reshaped to the output tensor.
    """
    shape = (input_dim,)
    shapes = [shape]
    for i, layer in enumerate(layers):
        if layer.kind == "dense":
            out_d, in_d = layer.weight.shape
            flat = int(np.prod(shape))
            if flat != in_d:
                raise ShapeMismatch(i, f"dense expects {in_d} inputs, stack has {flat}")
            if layer.bias.shape != (out_d,):
                raise ShapeMismatch(i, "dense bias shape")
            shape = (out_d,)
        elif layer.kind == "conv-transpose-2d":
            in_ch, out_ch, kh, kw = layer.weight.shape
            if len(shape) == 1:
                if shape[0] != in_ch:
                    raise ShapeMismatch(i, f"conv-transpose expects {in_ch} channels, stack has {shape[0]}")
                shape = (in_ch, 1, 1)
            if len(shape) != 3 or shape[0] != in_ch:
                raise ShapeMismatch(i, f"conv-transpose expects {in_ch} channels, stack has {shape}")
            s, p = layer.stride, layer.padding
            h = (shape[1] - 1) * s - 2 * p + kh
            w = (shape[2] - 1) * s - 2 * p + kw
            if h <= 0 or w <= 0:
                raise ShapeMismatch(i, f"conv-transpose output {h}x{w} is empty")
            if layer.bias.shape != (out_ch,):
                raise ShapeMismatch(i, "conv-transpose bias shape")
            shape = (out_ch, h, w)
        elif layer.kind == "batch-norm":
            n = layer.gamma.shape[0]
            features = shape[0] if len(shape) == 3 else int(np.prod(shape))
            if n != features:
                raise ShapeMismatch(i, f"batch-norm over {n} features, stack has {features}")
            for arr in (layer.beta, layer.running_mean, layer.running_var):
                if arr.shape != (n,):
                    raise ShapeMismatch(i, "batch-norm parameter shape")
        elif layer.kind in ("relu", "tanh"):
            pass
        else:
            raise UnsupportedLayerKind(layer.kind)
        shapes.append(shape)
    final = shapes[-1]
    if len(final) == 1 and final[0] == CHANNELS * OUT_H * OUT_W:
        shapes[-1] = (CHANNELS, OUT_H, OUT_W)
    return tuple(shapes)


# ---------------------------------------------------------------------------
# binary weights format

def _read(fh, fmt):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise TruncatedWeights("unexpected end of weights stream")
    return struct.unpack("<" + fmt, buf)


def _read_f32(fh, n) -> np.ndarray:
    buf = fh.read(4 * n)
    if len(buf) != 4 * n:
        raise TruncatedWeights("unexpected end of weights stream")
    return np.frombuffer(buf, dtype="<f4").copy()


def load_generator(path) -> GeneratorSpec:
    """Load an LSIGEN1 weights file and validate the layer composition.

    Layout (little-endian): magic "LSIGEN1", u32 layer count, then per layer
    a u8 kind tag followed by u32 shape ints and row-major float32 params.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise BadMagic(f"bad magic {magic!r}")
        (n_layers,) = _read(fh, "I")
        layers = []
        for i in range(n_layers):
            (tag,) = _read(fh, "B")
            kind = _TAG_KINDS.get(tag)
            if kind is None:
                raise UnsupportedLayerKind(tag)
            if kind == "dense":
                in_d, out_d = _read(fh, "II")
                w = _read_f32(fh, in_d * out_d).reshape(out_d, in_d)
                b = _read_f32(fh, out_d)
                layers.append(LayerSpec(kind, weight=w, bias=b))
            elif kind == "conv-transpose-2d":
                in_ch, out_ch, kh, kw, stride, pad = _read(fh, "IIIIII")
                w = _read_f32(fh, in_ch * out_ch * kh * kw).reshape(in_ch, out_ch, kh, kw)
                b = _read_f32(fh, out_ch)
                layers.append(LayerSpec(kind, weight=w, bias=b, stride=stride, padding=pad))
            elif kind == "batch-norm":
                (n,) = _read(fh, "I")
                gamma = _read_f32(fh, n)
                beta = _read_f32(fh, n)
                mean = _read_f32(fh, n)
                var = _read_f32(fh, n)
                if np.any(var <= 0):
                    raise ShapeMismatch(i, "batch-norm variance must be positive")
                layers.append(LayerSpec(kind, gamma=gamma, beta=beta,
                                        running_mean=mean, running_var=var))
            else:
                layers.append(LayerSpec(kind))
    spec = GeneratorSpec(tuple(layers))
    if spec.output_shape != (CHANNELS, OUT_H, OUT_W):
        raise ShapeMismatch(n_layers - 1 if n_layers else 0,
                            f"final shape {spec.output_shape}, expected {(CHANNELS, OUT_H, OUT_W)}")
    return spec


def save_generator(spec: GeneratorSpec, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(spec.layers)))
        for layer in spec.layers:
            fh.write(struct.pack("<B", _KIND_TAGS[layer.kind]))
            if layer.kind == "dense":
                out_d, in_d = layer.weight.shape
                fh.write(struct.pack("<II", in_d, out_d))
                fh.write(np.asarray(layer.weight, dtype="<f4").tobytes())
                fh.write(np.asarray(layer.bias, dtype="<f4").tobytes())
            elif layer.kind == "conv-transpose-2d":
                in_ch, out_ch, kh, kw = layer.weight.shape
                fh.write(struct.pack("<IIIIII", in_ch, out_ch, kh, kw,
                                     layer.stride, layer.padding))
                fh.write(np.asarray(layer.weight, dtype="<f4").tobytes())
                fh.write(np.asarray(layer.bias, dtype="<f4").tobytes())
            elif layer.kind == "batch-norm":
                fh.write(struct.pack("<I", layer.gamma.shape[0]))
                for arr in (layer.gamma, layer.beta, layer.running_mean, layer.running_var):
                    fh.write(np.asarray(arr, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# forward pass

def _check_latent(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (LATENT_DIM,):
        raise ValueError(f"latent shape {z.shape}, expected ({LATENT_DIM},)")
    if not np.all(np.isfinite(z)):
        raise ValueError("latent has non-finite components")
    return z


def _conv_transpose_2d(x, layer):
    cin, h, w = x.shape
    _, cout, kh, kw = layer.weight.shape
    s, p = layer.stride, layer.padding
    hh = (h - 1) * s + kh
    ww = (w - 1) * s + kw
    full = np.zeros((cout, hh, ww), dtype=np.float64)
    weight = np.asarray(layer.weight, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            full[:, i * s:i * s + kh, j * s:j * s + kw] += np.tensordot(
                x[:, i, j], weight, axes=(0, 0))
    out = full[:, p:hh - p, p:ww - p]
    return out + np.asarray(layer.bias, dtype=np.float64)[:, None, None]


def forward(spec: GeneratorSpec, z) -> np.ndarray:
    """Run the stack in inference mode (batch-norm uses running stats)."""
    x = _check_latent(z)
    for i, layer in enumerate(spec.layers):
        if layer.kind == "dense":
            x = np.asarray(layer.weight, dtype=np.float64) @ x.reshape(-1)
            x = x + np.asarray(layer.bias, dtype=np.float64)
        elif layer.kind == "conv-transpose-2d":
            if x.ndim == 1:
                x = x.reshape(-1, 1, 1)
            x = _conv_transpose_2d(x, layer)
        elif layer.kind == "batch-norm":
            gamma = np.asarray(layer.gamma, dtype=np.float64)
            beta = np.asarray(layer.beta, dtype=np.float64)
            mean = np.asarray(layer.running_mean, dtype=np.float64)
            var = np.asarray(layer.running_var, dtype=np.float64)
            if x.ndim == 3:
                x = (x - mean[:, None, None]) / np.sqrt(var + BN_EPS)[:, None, None]
                x = gamma[:, None, None] * x + beta[:, None, None]
            else:
                x = gamma * (x - mean) / np.sqrt(var + BN_EPS) + beta
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        elif layer.kind == "tanh":
            x = np.tanh(x)
        else:
            raise UnsupportedLayerKind(layer.kind)
        if not np.all(np.isfinite(x)):
            raise NonFiniteActivation(i)
    if x.shape != spec.output_shape:
        x = x.reshape(spec.output_shape)
    return x


def decode(spec: GeneratorSpec, z) -> TileGrid:
    return crop_output(forward(spec, z))


# ---------------------------------------------------------------------------
# synthetic decoder (frozen formula)

def synthetic_decode(z, alphabet: TileAlphabet = CANONICAL_ALPHABET) -> TileGrid:
    """Deterministic latent-to-scene map for desk-scale experiments.

    With t = tanh(z), painted in order (terrain, enemies, platforms,
    ornament coins; later layers skip or overwrite as stated):

    * Column c is a gap iff t[8+(c%8)] > 0.4: no ground, no stack, no
      enemy; even gap columns carry a guide coin at row 10.
    * Otherwise rows 14-15 are ground and the column carries
      e(c) = clamp(round(3*(1+t[c%8]) + 0.7*t[(c%8 + c//8) % 8]), 0, 6)
      extra solid tiles (shared coarse term plus per-column jitter).
    * An enemy stands atop column c iff
      t[16+(c%8)] > 0.6 - 0.05*(c%4) - 0.3*t[16+((c%8)+3)%8].
    * A 3-tile breakable platform sits at row 8 from column 7k iff
      t[24+k] > 0.3 (k = 0..7), a coin above its centre iff z[31] > 0,
      and an enemy at its right end (row 7) iff t[16+(3k)%8] < -0.55.
    * floor(14*(1+t[30])) ornament coins land at row 2+(5i)%9, column
      (11i+3)%56 (i = 0, 1, ...), skipping occupied cells.

    Every constant is part of the file-format contract: changing one
    changes every downstream archive.
    """
    z = _check_latent(z)
    classes = list(alphabet.classes)
    empty = alphabet.empty_index
    solid = classes.index("solid")
    breakable = classes.index("breakable")
    goomba = classes.index("enemy-goomba")
    coin = classes.index("coin")

    cells = np.full((ROWS, COLS), empty, dtype=np.uint8)
    t = np.tanh(z)
    for c in range(COLS):
        r8 = c % 8
        if t[8 + r8] > 0.4:
            if c % 2 == 0:
                cells[10, c] = coin
            continue  # gap column
        cells[14, c] = solid
        cells[15, c] = solid
        e = int(np.clip(np.rint(3.0 * (1.0 + t[r8]) + 0.7 * t[(r8 + c // 8) % 8]), 0, 6))
        if e:
            cells[14 - e:14, c] = solid
        if t[16 + r8] > 0.6 - 0.05 * (c % 4) - 0.3 * t[16 + (r8 + 3) % 8]:
            cells[13 - e, c] = goomba
    for k in range(8):
        if t[24 + k] > 0.3:
            cells[8, 7 * k:7 * k + 3] = breakable
            if z[31] > 0:
                cells[7, 7 * k + 1] = coin
            if t[16 + (3 * k) % 8] < -0.55:
                cells[7, 7 * k + 2] = goomba
    for i in range(int(14.0 * (1.0 + t[30]))):
        r = 2 + (i * 5) % 9
        c = (i * 11 + 3) % COLS
        if cells[r, c] == empty:
            cells[r, c] = coin
    return TileGrid(cells)
