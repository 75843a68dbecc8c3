"""Binary checkpoint container for model, bank, and extractor parameters.

Layout (all integers little-endian):

    magic    4 bytes  b"SBNK"
    version  u16
    count    u32
    entries  count times:
        name_len u16, name UTF-8
        dtype    u8   (0 = float32 little-endian, 1 = raw UTF-8 bytes)
        rank     u8
        dims     u32 * rank
        payload  prod(dims) * itemsize bytes

Entry names: ``meta/config`` (JSON), ``encoder/convN/...``,
``decoder/convN/...``, ``bank/<style>/kernel`` (in model order),
``extractor/convN/kernel``. Save -> load -> save round-trips byte-identically;
writes go to a temp file renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from typing import Optional

import numpy as np

from .losses import FeatureExtractor
from .model import ConvLayer, DecoderParams, EncoderParams, FilterBank, StyleBankModel
from .tensor import Tensor

MAGIC = b"SBNK"
VERSION = 1
DTYPE_F32 = 0
DTYPE_BYTES = 1


class CheckpointError(ValueError):
    """Malformed, truncated, or internally inconsistent checkpoint."""


def write_entries(path, entries: list[tuple[str, object]]) -> None:
    """Write (name, float32-array-or-bytes) entries atomically."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<HI", VERSION, len(entries))
    for name, payload in entries:
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        if isinstance(payload, (bytes, bytearray)):
            blob += struct.pack("<BB", DTYPE_BYTES, 1)
            blob += struct.pack("<I", len(payload))
            blob += payload
        else:
            arr = np.ascontiguousarray(payload, dtype="<f4")
            blob += struct.pack("<BB", DTYPE_F32, arr.ndim)
            blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
            blob += arr.tobytes()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".sbnk.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_entries(path) -> list[tuple[str, object]]:
    """Parse a container back into (name, float32 array | bytes) entries."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    entries: list[tuple[str, object]] = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        dtype, rank = r.unpack("<BB")
        dims = r.unpack(f"<{rank}I")
        if dtype == DTYPE_BYTES:
            if rank != 1:
                raise CheckpointError(f"entry {name!r}: byte payload must be rank 1")
            entries.append((name, bytes(r.take(dims[0]))))
        elif dtype == DTYPE_F32:
            n_items = 1
            for d in dims:
                n_items *= d
            raw = r.take(n_items * 4)
            arr = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
            entries.append((name, arr))
        else:
            raise CheckpointError(f"entry {name!r}: unknown dtype tag {dtype}")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last entry")
    return entries


def save_model(path, model: StyleBankModel, extractor: Optional[FeatureExtractor] = None) -> None:
    meta = {
        "c_max": model.c_max,
        "bank_kernel_size": model.bank_kernel_size,
        "styles": model.style_names(),
        "extractor_strides": extractor.strides() if extractor is not None else None,
    }
    entries: list[tuple[str, object]] = [
        ("meta/config", json.dumps(meta, sort_keys=True).encode("utf-8"))
    ]
    entries += [(name, p.data) for name, p in model.named_parameters()]
    if extractor is not None:
        entries += [(name, k.data) for name, k in extractor.named_kernels()]
    write_entries(path, entries)


def _expect(entries: dict, name: str) -> np.ndarray:
    if name not in entries:
        raise CheckpointError(f"missing entry {name!r}")
    value = entries[name]
    if not isinstance(value, np.ndarray):
        raise CheckpointError(f"entry {name!r} is not a tensor payload")
    return value


def _load_layer(entries, prefix, i, stride, transposed, activated,
                expect_in, expect_out) -> ConvLayer:
    from . import ops

    kernel = _expect(entries, f"{prefix}/conv{i}/kernel")
    if kernel.ndim != 4:
        raise CheckpointError(f"{prefix}/conv{i}/kernel has rank {kernel.ndim}")
    co, ci, kh, kw = kernel.shape
    pair = (ci, co) if not transposed else (co, ci)
    if pair != (expect_in, expect_out):
        raise CheckpointError(
            f"{prefix}/conv{i}: channel chain {pair} does not match "
            f"expected {(expect_in, expect_out)}"
        )
    scale = shift = None
    if activated:
        c = expect_out
        scale_arr = _expect(entries, f"{prefix}/conv{i}/norm_scale")
        shift_arr = _expect(entries, f"{prefix}/conv{i}/norm_shift")
        if scale_arr.shape != (1, c, 1, 1) or shift_arr.shape != (1, c, 1, 1):
            raise CheckpointError(f"{prefix}/conv{i}: bad norm parameter shape")
        scale = Tensor(scale_arr, requires_grad=True)
        shift = Tensor(shift_arr, requires_grad=True)
    return ConvLayer(
        Tensor(kernel, requires_grad=True), stride,
        ops.Padding.reflect((kh - 1) // 2), transposed, scale, shift,
    )


def load_model(path) -> tuple[StyleBankModel, Optional[FeatureExtractor]]:
    """Load and validate a model (and extractor, if stored) from a container."""
    entry_list = read_entries(path)
    entries = dict(entry_list)
    if len(entries) != len(entry_list):
        raise CheckpointError("duplicate entry names")
    meta_raw = entries.get("meta/config")
    if not isinstance(meta_raw, (bytes, bytearray)):
        raise CheckpointError("missing meta/config entry")
    meta = json.loads(meta_raw.decode("utf-8"))
    c_max = int(meta["c_max"])
    bank_k = int(meta["bank_kernel_size"])
    styles = list(meta["styles"])
    if c_max % 4 != 0 or c_max < 4:
        raise CheckpointError(f"meta c_max {c_max} invalid")

    c4, c2 = c_max // 4, c_max // 2
    encoder = EncoderParams([
        _load_layer(entries, "encoder", 0, 1, False, True, 3, c4),
        _load_layer(entries, "encoder", 1, 2, False, True, c4, c2),
        _load_layer(entries, "encoder", 2, 2, False, True, c2, c_max),
    ])
    decoder = DecoderParams([
        _load_layer(entries, "decoder", 0, 2, True, True, c_max, c2),
        _load_layer(entries, "decoder", 1, 2, True, True, c2, c4),
        _load_layer(entries, "decoder", 2, 1, False, False, c4, 3),
    ])
    model = StyleBankModel(encoder, decoder, {}, c_max, bank_k)
    for name in styles:
        kernel = _expect(entries, f"bank/{name}/kernel")
        if kernel.shape != (c_max, c_max, bank_k, bank_k):
            raise CheckpointError(
                f"bank/{name}/kernel shape {kernel.shape} does not match meta "
                f"(c_max {c_max}, kernel {bank_k})"
            )
        model.banks[name] = FilterBank(name, Tensor(kernel, requires_grad=True))

    extractor = None
    ext_names = sorted(n for n in entries if n.startswith("extractor/"))
    if ext_names:
        strides = meta.get("extractor_strides")
        if strides is None or len(strides) != len(ext_names):
            raise CheckpointError("extractor entries present but strides metadata missing")
        convs = []
        for i, stride in enumerate(strides):
            kernel = _expect(entries, f"extractor/conv{i}/kernel")
            convs.append((Tensor(kernel), int(stride)))
        extractor = FeatureExtractor(convs)
    return model, extractor


def load_extractor(path) -> FeatureExtractor:
    """Load only the ``extractor/`` entries of a container."""
    _, extractor = load_model(path)
    if extractor is None:
        raise CheckpointError("checkpoint carries no extractor entries")
    return extractor
