"""SAUCKPT1 binary container and bundle (de)serialization.

Layout, all integers little-endian::

    b"SAUCKPT1"                      magic, last byte is the format version
    u32   record count
    per record:
        u16   name length, then UTF-8 name
        u8    dtype (0 = f64, 1 = u8)
        u8    rank, then rank x u64 dims
        payload (row-major, f64 little-endian or raw bytes)
    32 bytes  SHA-256 of everything above

Bundles map onto record names with prefixes: ``param/``, ``mask/``,
``saliency/``, ``plan.G/``, ``plan.W/``, the ``plan.I_pruned`` table and a
``meta`` record holding UTF-8 JSON (flags, configs, hashes).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CheckpointError,
    CorruptCheckpointError,
    TruncatedCheckpointError,
    UnknownVersionError,
)
from .models import ModelConfig, ParamSet
from .pruning import SparsityMask
from .sau_core import SAUConfig, SAUPlan
from .saliency import SaliencyMap

MAGIC = b"SAUCKPT1"
_PREFIX = MAGIC[:-1]
F64, U8 = 0, 1


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_records(records: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", len(records))]
    for name, arr in records.items():
        arr = np.asarray(arr)
        if arr.dtype == np.uint8:
            code, payload = U8, np.ascontiguousarray(arr).tobytes()
        else:
            code, payload = F64, np.ascontiguousarray(arr, dtype="<f8").tobytes()
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(payload)
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


def decode_records(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < len(MAGIC) or data[: len(_PREFIX)] != _PREFIX:
        raise BadMagicError("not a SAUCKPT checkpoint")
    if data[: len(MAGIC)] != MAGIC:
        raise UnknownVersionError(f"unsupported checkpoint version {data[len(_PREFIX):len(MAGIC)]!r}")
    if len(data) < len(MAGIC) + 4 + 32:
        raise TruncatedCheckpointError("file shorter than header and hash")
    body, digest = data[:-32], data[-32:]
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise TruncatedCheckpointError(f"unexpected end of data at byte {pos}")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    records = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpointError("record name is not UTF-8") from exc
        code, rank = struct.unpack("<BB", take(2))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(dims, dtype=np.uint64)) if rank else 1
        if code == F64:
            arr = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64)
        elif code == U8:
            arr = np.frombuffer(take(size), dtype=np.uint8).copy()
        else:
            raise CorruptCheckpointError(f"unknown dtype code {code}")
        records[name] = arr.reshape(dims)
    if pos != len(body):
        raise CorruptCheckpointError("trailing bytes after the last record")
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("content hash mismatch")
    return records


@dataclass
class Bundle:
    params: ParamSet | None = None
    mask: SparsityMask | None = None
    saliency: SaliencyMap | None = None
    plan: SAUPlan | None = None
    meta: dict = field(default_factory=dict)
    model_config: ModelConfig | None = None


def bundle_to_records(bundle: Bundle) -> dict[str, np.ndarray]:
    rec: dict[str, np.ndarray] = {}
    meta = dict(bundle.meta)
    if bundle.model_config is not None:
        meta["model_config"] = bundle.model_config.to_dict()
    if bundle.params is not None:
        meta["param_names"] = bundle.params.names()
        meta["prunable"] = bundle.params.prunable
        for k, v in bundle.params.items():
            rec[f"param/{k}"] = v
    if bundle.mask is not None:
        meta["mask_target"] = bundle.mask.target
        for k, v in bundle.mask.masks.items():
            rec[f"mask/{k}"] = np.asarray(v, dtype=np.uint8)
    if bundle.saliency is not None:
        meta["saliency_samples"] = bundle.saliency.n_samples
        for k, v in bundle.saliency.scores.items():
            rec[f"saliency/{k}"] = v
    if bundle.plan is not None:
        p = bundle.plan
        meta["plan"] = {
            "topk": p.config.topk, "alpha": p.config.alpha, "names": p.names(),
            "tau": p.tau, "mask_hash": p.mask_hash, "saliency_hash": p.saliency_hash,
            "empty_layers": p.empty_layers,
        }
        for k in p.names():
            rec[f"plan.G/{k}"] = np.asarray(p.G[k], dtype=np.uint8)
            rec[f"plan.W/{k}"] = p.W[k]
        rec["plan.I_pruned"] = np.array([p.I_pruned[k] for k in p.names()], dtype=np.float64)
    rec["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()
    return rec


def _group(records, prefix) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in records.items() if k.startswith(prefix)}


def records_to_bundle(records: dict[str, np.ndarray]) -> Bundle:
    try:
        meta = json.loads(records["meta"].tobytes().decode("utf-8"))
    except (KeyError, ValueError) as exc:
        raise CheckpointError("checkpoint has no readable meta record") from exc
    b = Bundle()
    if "model_config" in meta:
        b.model_config = ModelConfig.from_dict(meta.pop("model_config"))
    params = _group(records, "param/")
    if params:
        names = meta.pop("param_names")
        flags = meta.pop("prunable")
        b.params = ParamSet({k: params[k] for k in names}, {k: flags[k] for k in names})
    masks = _group(records, "mask/")
    if masks or "mask_target" in meta:
        b.mask = SparsityMask(masks, meta.pop("mask_target", 0.0))
    sal = _group(records, "saliency/")
    if sal or "saliency_samples" in meta:
        b.saliency = SaliencyMap(sal, meta.pop("saliency_samples", 0))
    if "plan" in meta:
        pm = meta.pop("plan")
        names = pm["names"]
        G, W = _group(records, "plan.G/"), _group(records, "plan.W/")
        ip = records["plan.I_pruned"]
        b.plan = SAUPlan(
            G={k: G[k] for k in names}, W={k: W[k] for k in names},
            I_pruned={k: float(ip[i]) for i, k in enumerate(names)},
            tau=pm["tau"], config=SAUConfig(pm["topk"], pm["alpha"]),
            mask_hash=pm["mask_hash"], saliency_hash=pm["saliency_hash"],
            empty_layers=pm["empty_layers"],
        )
    b.meta = meta
    return b


def save_checkpoint(path, bundle: Bundle | dict) -> None:
    records = bundle if isinstance(bundle, dict) else bundle_to_records(bundle)
    atomic_write_bytes(path, encode_records(records))


def load_records(path) -> dict[str, np.ndarray]:
    return decode_records(Path(path).read_bytes())


def load_checkpoint(path) -> Bundle:
    return records_to_bundle(load_records(path))
