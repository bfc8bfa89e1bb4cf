"""Bit-exact checkpoints of model parameters, optimizer velocities and RNG state.

File layout (all integers little-endian)::

    b"ORDLAB01"
    u64 metadata length, metadata (canonical JSON, UTF-8)
    for every tensor listed in the metadata manifest:
        u64 byte length, raw little-endian tensor bytes (C order)
    32-byte SHA-256 digest of every preceding byte
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .. import rng as rng_mod
from ..errors import IntegrityError
from .model import ModelSpec, build_model
from .optim import SGD

MAGIC = b"ORDLAB01"
FORMAT_VERSION = 1
_U64 = struct.Struct("<Q")


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: list
    velocities: list
    optimizer: dict
    rng_state: dict = None
    step: int = 0
    epoch: int = 0
    extra: dict = field(default_factory=dict)

    def _metadata(self):
        manifest = []
        for kind, tensors in (("param", self.params), ("velocity", self.velocities)):
            for i, t in enumerate(tensors):
                manifest.append({"kind": kind, "index": i, "dtype": t.dtype.newbyteorder("<").str, "shape": list(t.shape)})
        return {
            "format_version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "optimizer": self.optimizer,
            "rng_state": self.rng_state,
            "step": int(self.step),
            "epoch": int(self.epoch),
            "extra": self.extra,
            "tensors": manifest,
        }

    def to_bytes(self):
        meta = _canonical_json(self._metadata())
        chunks = [MAGIC, _U64.pack(len(meta)), meta]
        for t in list(self.params) + list(self.velocities):
            raw = np.ascontiguousarray(t, dtype=t.dtype.newbyteorder("<")).tobytes()
            chunks.append(_U64.pack(len(raw)))
            chunks.append(raw)
        body = b"".join(chunks)
        return body + hashlib.sha256(body).digest()

    @property
    def content_hash(self):
        return self.to_bytes()[-32:].hex()

    @classmethod
    def from_bytes(cls, data):
        if len(data) < len(MAGIC) + _U64.size + 32 or data[: len(MAGIC)] != MAGIC:
            raise IntegrityError("not an ORDLAB01 checkpoint (bad magic or too short)")
        body, digest = data[:-32], data[-32:]
        actual = hashlib.sha256(body).digest()
        if actual != digest:
            raise IntegrityError(
                f"checkpoint hash mismatch: stored {digest.hex()[:16]}..., computed {actual.hex()[:16]}..."
            )
        pos = len(MAGIC)
        (meta_len,) = _U64.unpack_from(body, pos)
        pos += _U64.size
        try:
            meta = json.loads(body[pos:pos + meta_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise IntegrityError(f"corrupt checkpoint metadata: {exc}") from exc
        pos += meta_len
        params, velocities = [], []
        for entry in meta["tensors"]:
            if pos + _U64.size > len(body):
                raise IntegrityError("checkpoint truncated inside tensor table")
            (n,) = _U64.unpack_from(body, pos)
            pos += _U64.size
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            if n != dtype.itemsize * int(np.prod(shape)) or pos + n > len(body):
                raise IntegrityError(f"tensor {entry['kind']}[{entry['index']}] has inconsistent length {n}")
            arr = np.frombuffer(body, dtype=dtype, count=int(np.prod(shape)), offset=pos).reshape(shape)
            arr = arr.astype(dtype.newbyteorder("="), copy=True)
            pos += n
            (params if entry["kind"] == "param" else velocities).append(arr)
        if pos != len(body):
            raise IntegrityError("trailing bytes after tensor table")
        return cls(
            spec=ModelSpec.from_dict(meta["spec"]),
            params=params,
            velocities=velocities,
            optimizer=meta["optimizer"],
            rng_state=meta["rng_state"],
            step=meta["step"],
            epoch=meta["epoch"],
            extra=meta.get("extra", {}),
        )

    def save(self, path):
        data = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(data)
        return data[-32:].hex()

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def snapshot(model, optimizer, rng=None, step=0, epoch=0, extra=None):
    return Checkpoint(
        spec=model.spec,
        params=[p.copy() for p in model.parameters()],
        velocities=[v.copy() for v in optimizer.velocity],
        optimizer=optimizer.hyperparameters(),
        rng_state=None if rng is None else rng_mod.get_state(rng),
        step=step,
        epoch=epoch,
        extra=dict(extra or {}),
    )


def restore(checkpoint):
    """Rebuild ``(model, optimizer, rng)`` from a checkpoint."""
    model = build_model(checkpoint.spec, np.random.default_rng(0))
    opt = SGD(model.parameters(), **checkpoint.optimizer)
    restore_into(checkpoint, model, opt)
    gen = None if checkpoint.rng_state is None else rng_mod.from_state(checkpoint.rng_state)
    return model, opt, gen


def restore_into(checkpoint, model, optimizer, rng=None):
    """Overwrite live objects in place with the checkpoint's state."""
    model.set_parameters(checkpoint.params)
    for dst, src in zip(optimizer.velocity, checkpoint.velocities):
        dst[...] = src
    for key, value in checkpoint.optimizer.items():
        setattr(optimizer, key, value)
    if rng is not None and checkpoint.rng_state is not None:
        rng_mod.set_state(rng, checkpoint.rng_state)


def state_hash(model, optimizer):
    """SHA-256 over parameter and velocity bytes."""
    h = hashlib.sha256()
    for t in list(model.parameters()) + list(optimizer.velocity):
        h.update(np.ascontiguousarray(t, dtype=t.dtype.newbyteorder("<")).tobytes())
    return h.hexdigest()
