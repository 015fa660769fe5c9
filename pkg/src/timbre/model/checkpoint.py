"""Checkpoint container (``tfv1``) and head swapping.

Layout: the 4-byte magic ``tfv1``, a little-endian uint64 header length, a UTF-8
JSON header, then one raw little-endian float32 block per tensor in header order.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from timbre.errors import CheckpointError
from timbre.model.network import HeadConfig, InstrumentModel, ModelConfig, init_head

MAGIC = b"tfv1"
VERSION = "tfv1"
HEAD_PREFIX = "head."


@dataclass
class Checkpoint:
    """Immutable-by-convention snapshot of a model's tensors and training position."""

    config: ModelConfig
    tensors: "OrderedDict[str, np.ndarray]"
    step: int = 0
    rng_state: Any = None
    meta: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    @property
    def body_fingerprint(self) -> str:
        return self.config.fingerprint(body_only=True)

    def body_keys(self) -> list[str]:
        return [k for k in self.tensors if not k.startswith(HEAD_PREFIX)]

    def to_bytes(self) -> bytes:
        header = {
            "version": VERSION,
            "config": self.config.to_dict(),
            "fingerprint": self.fingerprint,
            "body_fingerprint": self.body_fingerprint,
            "step": int(self.step),
            "rng_state": self.rng_state,
            "meta": self.meta,
            "tensors": [{"name": k, "shape": list(v.shape)} for k, v in self.tensors.items()],
        }
        raw = json.dumps(header, sort_keys=True).encode("utf-8")
        blocks = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in self.tensors.values())
        return MAGIC + struct.pack("<Q", len(raw)) + raw + blocks

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:4] != MAGIC or len(data) < 12:
            raise CheckpointError("not a tfv1 checkpoint")
        (n,) = struct.unpack("<Q", data[4:12])
        try:
            header = json.loads(data[12:12 + n].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        config = ModelConfig.from_dict(header["config"])
        if header.get("fingerprint") != config.fingerprint():
            raise CheckpointError("checkpoint fingerprint does not match its configuration")
        pos = 12 + n
        tensors: OrderedDict[str, np.ndarray] = OrderedDict()
        for spec in header["tensors"]:
            count = int(np.prod(spec["shape"], dtype=np.int64))
            end = pos + 4 * count
            if end > len(data):
                raise CheckpointError(f"truncated block for {spec['name']}")
            arr = np.frombuffer(data[pos:end], dtype="<f4").reshape(spec["shape"]).copy()
            if not np.all(np.isfinite(arr)):
                raise CheckpointError(f"non-finite values in {spec['name']}")
            tensors[spec["name"]] = arr
            pos = end
        if pos != len(data):
            raise CheckpointError("trailing bytes after last tensor block")
        return cls(config, tensors, header.get("step", 0), header.get("rng_state"),
                   header.get("meta", {}))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"{path}: {exc}") from exc
        return cls.from_bytes(data)


def model_tensors(model: InstrumentModel) -> "OrderedDict[str, np.ndarray]":
    """Parameters (each shared tensor once) then batch-norm running statistics."""
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, p in model.named_parameters():
        out[name] = p.detach().cpu().numpy().astype(np.float32)
    for name, b in model.named_buffers():
        if name.endswith("num_batches_tracked"):
            continue
        out[name] = b.detach().cpu().numpy().astype(np.float32)
    return out


def snapshot(model: InstrumentModel, step: int = 0, rng_state: Any = None,
             meta: dict | None = None) -> Checkpoint:
    return Checkpoint(model.cfg, model_tensors(model), step, rng_state, dict(meta or {}))


def check_body(ckpt: Checkpoint, cfg: ModelConfig) -> None:
    """Raise naming the first body tensor whose shape differs from ``cfg``'s model."""
    reference = model_tensors(InstrumentModel(cfg))
    ref_body = [k for k in reference if not k.startswith(HEAD_PREFIX)]
    got_body = ckpt.body_keys()
    for key in ref_body:
        if key not in ckpt.tensors:
            raise CheckpointError(f"body mismatch: missing tensor {key}")
        if tuple(ckpt.tensors[key].shape) != tuple(reference[key].shape):
            raise CheckpointError(f"body mismatch at {key}: checkpoint {ckpt.tensors[key].shape}"
                                  f" vs model {reference[key].shape}")
    extra = [k for k in got_body if k not in reference]
    if extra:
        raise CheckpointError(f"body mismatch: unexpected tensor {extra[0]}")


def load_into(model: InstrumentModel, ckpt: Checkpoint, *, strict_head: bool = True) -> None:
    """Copy checkpoint tensors into ``model`` in place."""
    check_body(ckpt, model.cfg)
    named = dict(model.named_parameters())
    named.update(dict(model.named_buffers()))
    with torch.no_grad():
        for key, arr in ckpt.tensors.items():
            if key.startswith(HEAD_PREFIX) and not strict_head:
                continue
            target = named.get(key)
            if target is None or tuple(target.shape) != arr.shape:
                raise CheckpointError(f"cannot load {key} into model")
            target.copy_(torch.from_numpy(arr))


def model_from_checkpoint(ckpt: Checkpoint) -> InstrumentModel:
    model = InstrumentModel(ckpt.config)
    load_into(model, ckpt)
    return model


def swap_head(ckpt: Checkpoint, head: HeadConfig, *, seed: int = 0,
              body_config: ModelConfig | None = None) -> Checkpoint:
    """Replace the classification head, keeping every body tensor bitwise.

    The new head has zero bias and weights uniform on +/- 1/sqrt(embedding_dim);
    the step counter restarts at zero. When ``body_config`` is given the
    checkpoint body must match it.
    """
    head.validate()
    if body_config is not None:
        if body_config.fingerprint(body_only=True) != ckpt.body_fingerprint:
            check_body(ckpt, body_config)
            raise CheckpointError("body configuration differs from checkpoint")
    cfg = ckpt.config.with_head(head.kind, head.n_out)
    linear = torch.nn.Linear(cfg.embedding_dim, head.n_out)
    gen = torch.Generator().manual_seed(seed)
    init_head(linear, gen)
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for key, arr in ckpt.tensors.items():
        if key == HEAD_PREFIX + "weight":
            tensors[key] = linear.weight.detach().numpy().astype(np.float32)
        elif key == HEAD_PREFIX + "bias":
            tensors[key] = linear.bias.detach().numpy().astype(np.float32)
        else:
            tensors[key] = arr.copy()
    return Checkpoint(cfg, tensors, 0, None, dict(ckpt.meta))
