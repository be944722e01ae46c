"""Binary container formats.

``.bsnn`` model file (all integers little-endian)::

    header   magic "BSNN" | u16 version | u16 flags | u32 file length
             u16 classes | u16 C, H, W | u16 default T | u16 default n_MC
             u16 layer count
    layer    u8 kind | u8 layer flags | u16 C, H, W | u16 out channels
             u8 kh, kw, stride, pad | i16 skip | u16 L | f64 s
             coef theta | coef a | coef b | [coef skip_a]
             [u32 n | n bytes prob_q | [n x f32 lambda]]
    trailer  u32 CRC-32 of every preceding byte

File flags: bit 0 = deploy (coefficients are int8 mantissas with a shared
exponent), otherwise coefficients are f64.  Layer flags: bit 0 weights,
bit 1 lambda, bit 2 skip_a.  A coefficient vector is ``u32 n`` followed by
``i16 exponent`` and ``n`` int8 mantissas (deploy) or ``n`` f64 values.
``prob_q`` is the row-major flattening of ``(out, in, kh, kw)``, which is
the order the sampler consumes in 64-weight blocks.

``.bstd`` tensor records: magic "BSTD" | u8 dtype tag (1 image, 2 label)
| u8 ndim | ndim x u32 dims | uint8 payload.  A file may hold several
records back to back; a dataset file is an image record optionally
followed by its label record.
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .bern import BernoulliTensor
from .convert import AnnCheckpoint, AnnLayer
from .fxp import QAffine
from .netcore import FoldedBn, Geometry, LayerKind, LayerSpec, NetworkModel
from .train_toy import Dataset

MAGIC = b"BSNN"
VERSION = 1
TENSOR_MAGIC = b"BSTD"
DTYPE_IMAGE = 1
DTYPE_LABEL = 2
IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801

FLAG_DEPLOY = 1
LFLAG_WEIGHT = 1
LFLAG_LAMBDA = 2
LFLAG_SKIP_A = 4

_HEAD = struct.Struct("<4sHHI")
_MODEL = struct.Struct("<HHHHHHH")
_LAYER = struct.Struct("<BBHHHHBBBBhHd")


class ModelFormatError(ValueError):
    code = 1


class BadMagicError(ModelFormatError):
    code = 2


class UnsupportedVersionError(ModelFormatError):
    code = 3


class ChecksumError(ModelFormatError):
    code = 4


class TruncatedError(ModelFormatError):
    code = 5


class LayoutError(ModelFormatError):
    """Declared sizes disagree with the payload."""

    code = 6


class DatasetError(ValueError):
    pass


# ----------------------------------------------------------------------------
# Model files
# ----------------------------------------------------------------------------

def _u16(v, what: str) -> int:
    v = int(v)
    if not 0 <= v <= 0xFFFF:
        raise ModelFormatError(f"{what}={v} does not fit the format")
    return v


def _write_coef(out: io.BytesIO, c, deploy: bool):
    if deploy:
        if not isinstance(c, QAffine):
            raise ModelFormatError("deploy model holds a real coefficient")
        out.write(struct.pack("<Ih", len(c), c.exponent))
        out.write(c.mantissa.astype(np.int8).tobytes())
    else:
        v = np.asarray(c, dtype="<f8").reshape(-1)
        out.write(struct.pack("<I", v.size))
        out.write(v.tobytes())


def _layer_bytes(layer: LayerSpec, deploy: bool) -> bytes:
    out = io.BytesIO()
    g = layer.geometry
    flags = 0
    if layer.weight is not None:
        flags |= LFLAG_WEIGHT
        if layer.weight.lam is not None:
            flags |= LFLAG_LAMBDA
    if layer.skip_a is not None:
        flags |= LFLAG_SKIP_A
    c, h, w = (_u16(v, "input dim") for v in g.in_shape)
    out.write(_LAYER.pack(int(layer.kind), flags, c, h, w, _u16(g.out_channels, "channels"),
                          g.kernel[0], g.kernel[1], g.stride, g.pad, layer.skip,
                          _u16(layer.L, "L"), float(layer.s)))
    theta = layer.theta if deploy else [layer.theta_value]
    for coef in (theta, layer.bn.a, layer.bn.b):
        _write_coef(out, coef, deploy)
    if layer.skip_a is not None:
        _write_coef(out, layer.skip_a, deploy)
    if layer.weight is not None:
        q = layer.weight.prob_q.reshape(-1)
        out.write(struct.pack("<I", q.size))
        out.write(q.astype(np.uint8).tobytes())
        if layer.weight.lam is not None:
            out.write(layer.weight.lam.astype("<f4").reshape(-1).tobytes())
    return out.getvalue()


def model_to_bytes(model: NetworkModel) -> bytes:
    body = io.BytesIO()
    body.write(_MODEL.pack(_u16(model.class_count, "classes"),
                           *(_u16(v, "input dim") for v in model.input_shape),
                           _u16(model.default_T, "T"), _u16(model.default_nmc, "n_MC"),
                           _u16(len(model.layers), "layer count")))
    for layer in model.layers:
        body.write(_layer_bytes(layer, model.deploy))
    payload = body.getvalue()
    total = _HEAD.size + len(payload) + 4
    head = _HEAD.pack(MAGIC, VERSION, FLAG_DEPLOY if model.deploy else 0, total)
    data = head + payload
    return data + struct.pack("<I", zlib.crc32(data))


class _Reader:
    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise LayoutError("record runs past the end of the payload")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct) -> tuple:
        return st.unpack(self.take(st.size))

    def array(self, n: int, dtype) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(n * dt.itemsize), dtype=dt).copy()


def _read_coef(r: _Reader, deploy: bool):
    (n,) = r.unpack(struct.Struct("<I"))
    if deploy:
        (e,) = r.unpack(struct.Struct("<h"))
        return QAffine(r.array(n, np.int8), e)
    return r.array(n, "<f8").astype(np.float64)


def _read_layer(r: _Reader, deploy: bool) -> LayerSpec:
    (kind, flags, c, h, w, oc, kh, kw, stride, pad, skip, L, s) = r.unpack(_LAYER)
    try:
        kind = LayerKind(kind)
    except ValueError:
        raise LayoutError(f"unknown layer kind {kind}") from None
    g = Geometry((c, h, w), oc, (kh, kw), stride, pad)
    theta = _read_coef(r, deploy)
    if len(theta) != 1:
        raise LayoutError("threshold must be a single value")
    if not deploy:
        theta = float(theta[0])
    a = _read_coef(r, deploy)
    b = _read_coef(r, deploy)
    skip_a = _read_coef(r, deploy) if flags & LFLAG_SKIP_A else None
    weight = None
    if flags & LFLAG_WEIGHT:
        (n,) = r.unpack(struct.Struct("<I"))
        shape = g.weight_shape
        if n != int(np.prod(shape)):
            raise LayoutError(f"weight count {n} does not match geometry {shape}")
        q = r.array(n, np.uint8).reshape(shape)
        lam = r.array(n, "<f4").reshape(shape) if flags & LFLAG_LAMBDA else None
        weight = BernoulliTensor(q, lam)
    return LayerSpec(kind, g, FoldedBn(a, b), theta, L, s, weight, skip, skip_a)


def model_from_bytes(data: bytes) -> NetworkModel:
    if len(data) < 4:
        raise TruncatedError("file shorter than its magic")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < _HEAD.size:
        raise TruncatedError("file shorter than its header")
    _, version, flags, total = _HEAD.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"format version {version} (supported: {VERSION})")
    if len(data) < total:
        raise TruncatedError(f"file has {len(data)} of {total} bytes")
    if len(data) > total:
        raise LayoutError(f"{len(data) - total} trailing bytes")
    (crc,) = struct.unpack_from("<I", data, total - 4)
    if zlib.crc32(data[:total - 4]) != crc:
        raise ChecksumError("checksum mismatch")
    deploy = bool(flags & FLAG_DEPLOY)
    r = _Reader(data[:total - 4], _HEAD.size)
    classes, c, h, w, T, nmc, count = r.unpack(_MODEL)
    try:
        layers = [_read_layer(r, deploy) for _ in range(count)]
    except LayoutError:
        raise
    except ValueError as exc:  # invalid layer content behind a valid checksum
        raise LayoutError(str(exc)) from None
    if r.pos != len(r.buf):
        raise LayoutError("payload longer than its declared layers")
    try:
        return NetworkModel(layers, (c, h, w), classes, T, nmc, deploy)
    except ValueError as exc:
        raise LayoutError(str(exc)) from None


def save_model(model: NetworkModel, path):
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> NetworkModel:
    return model_from_bytes(Path(path).read_bytes())


# ----------------------------------------------------------------------------
# Tensor and dataset files
# ----------------------------------------------------------------------------

def tensor_to_bytes(arr, tag: int) -> bytes:
    arr = np.asarray(arr)
    if tag not in (DTYPE_IMAGE, DTYPE_LABEL):
        raise ValueError(f"unknown dtype tag {tag}")
    if arr.dtype != np.uint8:
        raise ValueError("tensor files hold uint8 data")
    head = TENSOR_MAGIC + struct.pack("<BB", tag, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def tensors_from_bytes(data: bytes) -> list:
    """All ``(tag, array)`` records in a tensor file."""
    out = []
    r = _Reader(data)
    try:
        while r.pos < len(data):
            if r.take(4) != TENSOR_MAGIC:
                raise BadMagicError("bad tensor magic")
            tag, ndim = r.unpack(struct.Struct("<BB"))
            if tag not in (DTYPE_IMAGE, DTYPE_LABEL):
                raise LayoutError(f"unknown dtype tag {tag}")
            dims = r.unpack(struct.Struct(f"<{ndim}I"))
            n = int(np.prod(dims, dtype=np.int64))
            out.append((tag, r.array(n, np.uint8).reshape(dims)))
    except LayoutError as exc:
        if "past the end" in str(exc):
            raise TruncatedError("tensor payload shorter than its dimensions") from None
        raise
    return out


def save_dataset(ds: Dataset, path):
    Path(path).write_bytes(tensor_to_bytes(ds.images, DTYPE_IMAGE)
                           + tensor_to_bytes(ds.labels, DTYPE_LABEL))


def _read_idx(data: bytes) -> np.ndarray:
    (magic,) = struct.unpack_from(">I", data)
    ndim = magic & 0xFF
    if magic >> 8 != 0x08:
        raise BadMagicError(f"IDX type {magic:#010x} is not unsigned bytes")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    start = 4 + 4 * ndim
    n = int(np.prod(dims, dtype=np.int64))
    if len(data) - start != n:
        raise LayoutError("IDX payload length does not match its dimensions")
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=start).reshape(dims).copy()


def _tensors(path) -> list:
    data = Path(path).read_bytes()
    if data[:4] == TENSOR_MAGIC:
        return tensors_from_bytes(data)
    if len(data) >= 4:
        (magic,) = struct.unpack_from(">I", data)
        if magic == IDX_IMAGES:
            return [(DTYPE_IMAGE, _read_idx(data))]
        if magic == IDX_LABELS:
            return [(DTYPE_LABEL, _read_idx(data))]
    raise BadMagicError(f"{path}: neither a tensor file nor an IDX file")


def load_images(path) -> tuple:
    """Images as ``(N, C, H, W)`` uint8 plus labels if the file carries them (else None)."""
    images = labels = None
    for tag, arr in _tensors(path):
        if tag == DTYPE_IMAGE and images is None:
            images = arr
        elif tag == DTYPE_LABEL and labels is None:
            labels = arr
    if images is None:
        raise DatasetError(f"{path}: no image tensor")
    if images.ndim == 3:
        images = images[:, None]
    if images.ndim != 4:
        raise DatasetError(f"images must have 3 or 4 dimensions, got {images.ndim}")
    return images, labels


def load_dataset(images_path, labels_path=None) -> Dataset:
    """Labeled set from a tensor file (images record, then labels) or an IDX pair."""
    images, labels = load_images(images_path)
    if labels_path is not None:
        recs = [a for tag, a in _tensors(labels_path) if tag == DTYPE_LABEL]
        if not recs:
            raise DatasetError(f"{labels_path}: no label tensor")
        labels = recs[0]
    if labels is None:
        raise DatasetError("no labels found")
    labels = labels.reshape(-1)
    if labels.size != images.shape[0]:
        raise DatasetError(f"{images.shape[0]} images but {labels.size} labels")
    classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(images, labels, classes)


# ----------------------------------------------------------------------------
# ANN checkpoints (JSON)
# ----------------------------------------------------------------------------

def _arr(v):
    return None if v is None else np.asarray(v).tolist()


def checkpoint_to_json(ckpt: AnnCheckpoint) -> str:
    layers = []
    for l in ckpt.layers:
        g = l.geometry
        layers.append({"kind": l.kind.name,
                       "geometry": {"in_shape": list(g.in_shape), "out_channels": g.out_channels,
                                    "kernel": list(g.kernel), "stride": g.stride, "pad": g.pad},
                       "gamma": _arr(l.gamma), "beta": _arr(l.beta), "mu": _arr(l.mu),
                       "var": _arr(l.var), "s": l.s, "eps": l.eps, "skip": l.skip,
                       "bias": _arr(l.bias),
                       "lam": _arr(None if l.lam is None else np.asarray(l.lam, np.float32)),
                       "lam_shape": None if l.lam is None else list(np.shape(l.lam))})
    doc = {"format": "bsnn-ann", "version": 1, "input_shape": list(ckpt.input_shape),
           "class_count": ckpt.class_count, "L": ckpt.L, "input_scale": ckpt.input_scale,
           "layers": layers, "meta": ckpt.meta}
    return json.dumps(doc, sort_keys=True, indent=1)


def checkpoint_from_json(text: str) -> AnnCheckpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"checkpoint is not JSON: {exc}") from None
    if doc.get("format") != "bsnn-ann":
        raise BadMagicError("not an ANN checkpoint")
    if doc.get("version") != 1:
        raise UnsupportedVersionError(f"checkpoint version {doc.get('version')}")
    layers = []
    for d in doc["layers"]:
        g = d["geometry"]
        f64 = lambda k: None if d[k] is None else np.asarray(d[k], dtype=np.float64)
        lam = None
        if d["lam"] is not None:
            lam = np.asarray(d["lam"], dtype=np.float32).reshape(d["lam_shape"])
        layers.append(AnnLayer(LayerKind[d["kind"]],
                               Geometry(tuple(g["in_shape"]), g["out_channels"],
                                        tuple(g["kernel"]), g["stride"], g["pad"]),
                               f64("gamma"), f64("beta"), f64("mu"), f64("var"), d["s"],
                               lam, f64("bias"), d["eps"], d["skip"]))
    return AnnCheckpoint(layers, tuple(doc["input_shape"]), doc["class_count"], doc["L"],
                         doc["input_scale"], doc["meta"])


def save_checkpoint(ckpt: AnnCheckpoint, path):
    Path(path).write_text(checkpoint_to_json(ckpt))


def load_checkpoint(path) -> AnnCheckpoint:
    return checkpoint_from_json(Path(path).read_text())
