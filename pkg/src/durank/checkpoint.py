"""Binary checkpoint format.

Layout, all integers unsigned 32-bit little-endian::

    "DRNK"                        magic
    version                       currently 1
    header_len, header            UTF-8 JSON: config, config_hash, epoch,
                                  history, tensor names, architecture meta
    tensor_count
    per tensor: ndim, dims..., row-major float32 little-endian data
    crc32                         over every preceding byte

Tensor names are ``scorer/W0``, ``scorer/b0``, ..., ``validity/...``,
``classifier/...`` and ``opt/<model>/<tensor>`` for the momentum buffers.
A ``<path>.meta.json`` sidecar repeats the architecture and config hash.
"""

from __future__ import annotations

import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError
from .models import ClassifierModel, ScorerModel, ValidityModel
from .tensor import MlpParams, OptState

MAGIC = b"DRNK"
VERSION = 1


class ConfigMismatchWarning(UserWarning):
    pass


@dataclass
class Checkpoint:
    config: dict
    config_hash: str
    epoch: int
    history: list = field(default_factory=list)
    scorer: Optional[ScorerModel] = None
    validity: Optional[ValidityModel] = None
    classifier: Optional[ClassifierModel] = None
    opt_state: Optional[OptState] = None
    extra: dict = field(default_factory=dict)

    def models(self):
        out = []
        for name in ("scorer", "validity", "classifier"):
            m = getattr(self, name)
            if m is not None:
                out.append((name, m.params))
        return out


def _tensor_names(prefix, params):
    names = []
    for i in range(len(params.weights)):
        names.extend((f"{prefix}/W{i}", f"{prefix}/b{i}"))
    return names


def checkpoint_bytes(ckpt: Checkpoint):
    names, tensors = [], []
    for name, params in ckpt.models():
        names.extend(_tensor_names(name, params))
        tensors.extend(params.tensors())
    if ckpt.opt_state is not None:
        model_names = [n for n in names]
        if len(ckpt.opt_state.velocity) != len(model_names):
            raise FormatError("optimizer state does not mirror the model tensors")
        names.extend(f"opt/{n}" for n in model_names)
        tensors.extend(ckpt.opt_state.velocity)
    header = {
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "tensors": names,
        "meta": architecture_meta(ckpt),
        "extra": ckpt.extra,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(hb)), hb, struct.pack("<I", len(tensors))]
    for t in tensors:
        arr = np.ascontiguousarray(t, dtype="<f4")
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def architecture_meta(ckpt: Checkpoint):
    meta = {"config_hash": ckpt.config_hash,
            "domain_scope": ckpt.config.get("domain_scope"),
            "domain": ckpt.config.get("domain")}
    for name, params in ckpt.models():
        meta[f"{name}_sizes"] = params.sizes
    if ckpt.classifier is not None:
        meta["classifier_domains"] = list(ckpt.classifier.domains)
    return meta


def save_checkpoint(ckpt: Checkpoint, path):
    path = Path(path)
    data = checkpoint_bytes(ckpt)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    Path(str(path) + ".meta.json").write_text(
        json.dumps(architecture_meta(ckpt), indent=2, sort_keys=True) + "\n")
    return path


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count > 1 else vals[0]


def parse_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    rd = _Reader(body)
    rd.take(4)
    version = rd.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint checksum mismatch (truncated or corrupted)")
    try:
        header = json.loads(rd.take(rd.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}") from None
    count = rd.u32()
    names = header["tensors"]
    if count != len(names):
        raise FormatError("tensor count does not match the header")
    tensors = {}
    for name in names:
        ndim = rd.u32()
        dims = (rd.u32(ndim),) if ndim == 1 else (tuple(rd.u32(ndim)) if ndim else ())
        size = int(np.prod(dims)) if dims else 1
        tensors[name] = np.frombuffer(rd.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    if rd.pos != len(body):
        raise FormatError("trailing bytes after the last tensor")

    def params_for(prefix):
        keys = [n for n in names if n.startswith(prefix + "/")]
        return MlpParams.from_tensors([tensors[k] for k in keys]) if keys else None

    ck = Checkpoint(header["config"], header["config_hash"], header["epoch"], header["history"],
                    extra=header.get("extra", {}))
    if (p := params_for("scorer")) is not None:
        ck.scorer = ScorerModel(p)
    if (p := params_for("validity")) is not None:
        ck.validity = ValidityModel(p)
    if (p := params_for("classifier")) is not None:
        ck.classifier = ClassifierModel(p, header["meta"]["classifier_domains"])
    opt = [tensors[n] for n in names if n.startswith("opt/")]
    if opt:
        ck.opt_state = OptState(opt)
    return ck


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"checkpoint {path} does not exist")
    return parse_checkpoint(path.read_bytes())


def warn_on_config_mismatch(ckpt: Checkpoint, current_hash):
    if ckpt.config_hash != current_hash:
        msg = (f"resuming from a checkpoint trained with config {ckpt.config_hash}, "
               f"current config is {current_hash}")
        warnings.warn(msg, ConfigMismatchWarning, stacklevel=2)
        return True
    return False
