"""Binary model format: plans, factors, and dense biases in one stream.

Layout (all little-endian):

    magic    4s   b"DTHN"
    version  u32  currently 1
    layers   u32
    payload  u64  byte count of everything after this 28-byte header
    target   f64  network target ratio

    metadata: u32 count, then per item  u32 klen, key utf-8, u32 vlen, value utf-8

    per layer:
        u32 name length, name utf-8
        u64 q, r_dim, rank, m, n
        u8  dtype code (0 = float32, 1 = float64)
        u8  floor-hit flag
        u64 bias length
        xf payload   m * rank values
        wf payload   rank * n values
        bias payload

Round-trips are bit-exact, and the declared payload size must equal the
actual payload bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
import numpy as np

from .core import FLOAT32, FLOAT64
from .errors import ArgumentError, ModelFormatError
from .factor import FactorPair
from .planner import LayerPlan, NetworkPlan

MAGIC = b"DTHN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQd")
_DTYPE_CODES = {0: np.dtype(FLOAT32), 1: np.dtype(FLOAT64)}
_CODE_FOR = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class CompressedModel:
    """Everything needed to run inference: plans, factors, biases, metadata."""

    plans: NetworkPlan
    factors: list[FactorPair]
    biases: list[np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if len(self.factors) != len(self.plans.layers) or len(self.biases) != len(self.plans.layers):
            raise ArgumentError("factors and biases must match the plan's layer count")
        self.biases = [np.ascontiguousarray(b).ravel() for b in self.biases]

    @property
    def layer_names(self) -> list[str]:
        return [name for name, _ in self.plans.layers]


def expected_file_size(model: CompressedModel) -> int:
    """Byte-exact file size from the planner's accounting.

    header + metadata + per-layer fixed fields + factor payloads
    (rank*(m+n) values each) + bias payloads.
    """
    size = _HEADER.size
    size += 4
    for k, v in model.metadata.items():
        size += 8 + len(k.encode()) + len(v.encode())
    for (name, plan), fp, bias in zip(model.plans.layers, model.factors, model.biases):
        value_bytes = np.dtype(fp.dtype).itemsize
        size += 4 + len(name.encode()) + 5 * 8 + 2 + 8
        size += plan.rank * (plan.m + plan.n) * value_bytes
        size += bias.size * value_bytes
    return size


def serialize(model: CompressedModel) -> bytes:
    """Encode the model into the byte layout documented above."""
    chunks: list[bytes] = []

    def put(data: bytes):
        chunks.append(data)

    put(struct.pack("<I", len(model.metadata)))
    for k, v in model.metadata.items():
        kb, vb = k.encode(), v.encode()
        put(struct.pack("<I", len(kb)))
        put(kb)
        put(struct.pack("<I", len(vb)))
        put(vb)

    floor_hits = set(model.plans.floor_hits)
    for (name, plan), fp, bias in zip(model.plans.layers, model.factors, model.biases):
        if fp.plan != plan:
            raise ArgumentError(f"factor pair for {name!r} does not match its plan")
        dtype = np.dtype(fp.dtype)
        if dtype not in _CODE_FOR:
            raise ArgumentError(f"unsupported dtype {dtype} for layer {name!r}")
        nb = name.encode()
        put(struct.pack("<I", len(nb)))
        put(nb)
        put(struct.pack("<QQQQQ", plan.q, plan.r_dim, plan.rank, plan.m, plan.n))
        put(struct.pack("<BB", _CODE_FOR[dtype], int(name in floor_hits)))
        put(struct.pack("<Q", bias.size))
        put(np.ascontiguousarray(fp.xf, dtype=dtype).tobytes())
        put(np.ascontiguousarray(fp.wf, dtype=dtype).tobytes())
        put(np.ascontiguousarray(bias, dtype=dtype).tobytes())

    payload = b"".join(chunks)
    header = _HEADER.pack(MAGIC, model.format_version, len(model.factors),
                          len(payload), model.plans.target_ratio)
    return header + payload


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.data):
            raise ModelFormatError(
                f"truncated while reading {what}: need {count} bytes, "
                f"have {len(self.data) - self.offset}", self.offset)
        out = self.data[self.offset:self.offset + count]
        self.offset += count
        return out

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def deserialize(data: bytes) -> CompressedModel:
    """Parse a serialized model; failures carry the exact byte offset."""
    reader = _Reader(data)
    magic, version, layer_count, payload_bytes, target = reader.unpack(
        "<4sIIQd", "header")
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}", 4)
    if len(data) - _HEADER.size != payload_bytes:
        raise ModelFormatError(
            f"declared payload of {payload_bytes} bytes but file carries "
            f"{len(data) - _HEADER.size}", 12)

    (meta_count,) = reader.unpack("<I", "metadata count")
    metadata: dict[str, str] = {}
    for _ in range(meta_count):
        (klen,) = reader.unpack("<I", "metadata key length")
        key = reader.take(klen, "metadata key").decode()
        (vlen,) = reader.unpack("<I", "metadata value length")
        metadata[key] = reader.take(vlen, "metadata value").decode()

    layers: list[tuple[str, LayerPlan]] = []
    factors: list[FactorPair] = []
    biases: list[np.ndarray] = []
    floor_hits: list[str] = []
    for i in range(layer_count):
        (nlen,) = reader.unpack("<I", f"layer {i} name length")
        name = reader.take(nlen, f"layer {i} name").decode()
        q, r_dim, rank, m, n = reader.unpack("<QQQQQ", f"layer {name!r} plan")
        code, floor_flag = reader.unpack("<BB", f"layer {name!r} flags")
        if code not in _DTYPE_CODES:
            raise ModelFormatError(f"unknown dtype code {code}", reader.offset - 2)
        dtype = _DTYPE_CODES[code]
        (bias_len,) = reader.unpack("<Q", f"layer {name!r} bias length")
        try:
            plan = LayerPlan(q=q, r_dim=r_dim, rank=rank, m=m, n=n)
        except ArgumentError as exc:
            raise ModelFormatError(f"invalid plan for layer {name!r}: {exc}",
                                   reader.offset) from exc
        item = dtype.itemsize
        xf = np.frombuffer(
            reader.take(m * rank * item, f"layer {name!r} xf payload"), dtype=dtype
        ).reshape(m, rank)
        wf = np.frombuffer(
            reader.take(rank * n * item, f"layer {name!r} wf payload"), dtype=dtype
        ).reshape(rank, n)
        bias = np.frombuffer(
            reader.take(bias_len * item, f"layer {name!r} bias payload"), dtype=dtype)
        layers.append((name, plan))
        factors.append(FactorPair(xf=xf, wf=wf, plan=plan))
        biases.append(bias.copy())
        if floor_flag:
            floor_hits.append(name)
    if reader.offset != len(data):
        raise ModelFormatError(
            f"{len(data) - reader.offset} trailing bytes after last layer",
            reader.offset)

    comp = sum(p.compressed_elems for _, p in layers) + sum(b.size for b in biases)
    orig = sum(p.original_elems for _, p in layers) + sum(b.size for b in biases)
    plans = NetworkPlan(
        layers=tuple(layers),
        target_ratio=target,
        achieved_total_ratio=float(Fraction(comp, orig)) if orig else 0.0,
        floor_hits=tuple(floor_hits),
        bias_counts=tuple(b.size for b in biases),
    )
    return CompressedModel(plans=plans, factors=factors, biases=biases,
                           metadata=metadata, format_version=version)


def save_model(model: CompressedModel, path) -> int:
    """Write the model to ``path``; returns the byte count written."""
    data = serialize(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_model(path) -> CompressedModel:
    """Read a model written by ``save_model``."""
    with open(path, "rb") as fh:
        return deserialize(fh.read())
