"""Named parameter arrays with gradient slots, checkpointing, and Adam.

Checkpoint wire format (little-endian throughout):
  magic "LNSCKPT1" | u64 entry count | per entry:
    u32 name length | UTF-8 name | u32 ndim | u64 x ndim dims |
    float64 row-major data
  | u64 manifest length | JSON manifest {"trainable": {name: bool}}
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .diffmath import Var
from .errors import CheckpointError, ContractError

MAGIC = b"LNSCKPT1"


class ParamStore:
    """Map from unique name to (value, gradient, trainable flag)."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> None:
        if name in self._values:
            raise ContractError(f"duplicate parameter name: {name}")
        v = np.asarray(value, dtype=np.float64)
        self._values[name] = v
        self._grads[name] = np.zeros_like(v)
        self._trainable[name] = bool(trainable)

    def names(self) -> list[str]:
        return list(self._values)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def get(self, name: str) -> np.ndarray:
        return self._values[name]

    def set(self, name: str, value) -> None:
        v = np.asarray(value, dtype=np.float64)
        if v.shape != self._values[name].shape:
            raise ContractError(f"shape mismatch for {name}")
        self._values[name] = v

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        self._trainable[name] = bool(flag)

    def freeze_all(self) -> None:
        for name in self._trainable:
            self._trainable[name] = False

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def bind(self) -> dict[str, Var]:
        """Fresh leaf Vars over the current values (one training step)."""
        return {name: Var(value) for name, value in self._values.items()}

    def absorb(self, bound: dict[str, Var]) -> None:
        """Accumulate leaf gradients of trainable parameters.

        Frozen parameters keep all-zero gradient slots regardless of what
        flowed through their graph nodes.
        """
        for name, var in bound.items():
            if self._trainable.get(name) and var.grad is not None:
                self._grads[name] += var.grad

    def copy(self) -> "ParamStore":
        c = ParamStore()
        for name, v in self._values.items():
            c.add(name, v.copy(), self._trainable[name])
        return c

    def merge(self, other: "ParamStore", prefix: str = "") -> None:
        for name in other.names():
            self.add(prefix + name, other.get(name).copy(), other.trainable(name))

    # -- checkpoint I/O ----------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        chunks = [MAGIC, struct.pack("<Q", len(self._values))]
        for name, v in self._values.items():
            nb = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(nb)))
            chunks.append(nb)
            chunks.append(struct.pack("<I", v.ndim))
            chunks.append(struct.pack(f"<{v.ndim}Q", *v.shape) if v.ndim else b"")
            chunks.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
        manifest = json.dumps({"trainable": self._trainable}, sort_keys=True).encode("utf-8")
        chunks.append(struct.pack("<Q", len(manifest)))
        chunks.append(manifest)
        path.write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path) -> "ParamStore":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as e:
            raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
        if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
            raise CheckpointError(f"bad checkpoint magic in {path}: expected {MAGIC!r}")
        off = len(MAGIC)
        try:
            (count,) = struct.unpack_from("<Q", raw, off)
            off += 8
            store = cls()
            for _ in range(count):
                (name_len,) = struct.unpack_from("<I", raw, off)
                off += 4
                name = raw[off : off + name_len].decode("utf-8")
                off += name_len
                (ndim,) = struct.unpack_from("<I", raw, off)
                off += 4
                dims = struct.unpack_from(f"<{ndim}Q", raw, off) if ndim else ()
                off += 8 * ndim
                n = int(np.prod(dims)) if ndim else 1
                data = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(dims)
                off += 8 * n
                store.add(name, np.array(data, dtype=np.float64))
            (mlen,) = struct.unpack_from("<Q", raw, off)
            off += 8
            manifest = json.loads(raw[off : off + mlen].decode("utf-8"))
        except (struct.error, UnicodeDecodeError, ValueError) as e:
            raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e
        for name, flag in manifest.get("trainable", {}).items():
            if name in store:
                store.set_trainable(name, flag)
        return store


class Adam:
    """Adam over the trainable entries of a ParamStore."""

    def __init__(self, store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(store.get(n)) for n in store.names() if store.trainable(n)}
        self.v = {n: np.zeros_like(store.get(n)) for n in store.names() if store.trainable(n)}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name in self.m:
            g = self.store.grad(name)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)
            self.store.set(name, self.store.get(name) - self.lr * update)

    # optimizer state rides inside the same checkpoint under "opt." names
    def export_state(self, store: ParamStore, prefix: str = "opt.") -> None:
        store.add(prefix + "t", np.asarray(float(self.t)), trainable=False)
        for name in self.m:
            store.add(prefix + "m." + name, self.m[name].copy(), trainable=False)
            store.add(prefix + "v." + name, self.v[name].copy(), trainable=False)

    def import_state(self, store: ParamStore, prefix: str = "opt.") -> None:
        if prefix + "t" not in store:
            return
        self.t = int(store.get(prefix + "t"))
        for name in self.m:
            self.m[name] = store.get(prefix + "m." + name).copy()
            self.v[name] = store.get(prefix + "v." + name).copy()
