"""Supernet weight store and the operation / channel / depth weight mapping.

The supernet holds one composite ``(out, in, h, w)`` tensor per
``(stage, slot, op)`` at the widest channels the slot can see, plus the
fixed stem. An individual takes, per stage, the first ``depth`` slots
(depth mapping), the tensor of its chosen op at each slot (operation
mapping), and the output channels with the largest L1 norms (channel
mapping). Input channels follow the previous layer's selected outputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .search_space import Genome, OpKind, SearchSpaceSpec, decode

STEM_KEY = "stem"
MAGIC = b"MNSGAW1\x00"
_DTYPE = np.dtype("<f4")


def slot_key(stage: int, slot: int, op: OpKind) -> str:
    return f"s{stage}/k{slot}/{op.value}"


class MappingError(ValueError):
    pass


class ContainerError(ValueError):
    pass


def l1_channel_norms(t: np.ndarray) -> np.ndarray:
    """Per-output-channel L1 norm of a 4-D weight tensor."""
    t = np.asarray(t)
    if t.ndim != 4:
        raise ValueError(f"expected a 4-D tensor, got shape {t.shape}")
    return np.abs(t.astype(np.float64)).reshape(t.shape[0], -1).sum(axis=1)


def select_channels(t: np.ndarray | None, r: int, norms: np.ndarray | None = None) -> list[int]:
    """Indices of the ``r`` output channels with the largest L1 norm, ascending.

    Ties go to the lower index. Pass precomputed ``norms`` to skip the tensor.
    """
    if norms is None:
        norms = l1_channel_norms(t)
    n = len(norms)
    if not 1 <= r <= n:
        raise MappingError(f"cannot keep {r} of {n} channels")
    order = np.lexsort((np.arange(n), -np.asarray(norms)))
    return sorted(int(i) for i in order[:r])


def channel_map(
    t: np.ndarray,
    r: int,
    s: int | None = None,
    in_indices: Sequence[int] | None = None,
    norms: np.ndarray | None = None,
) -> tuple[np.ndarray, list[int], list[int]]:
    """Slice ``t`` to ``r`` outputs (top-L1) and the given (or lowest ``s``) inputs."""
    out_dim, in_dim = t.shape[:2]
    out_idx = select_channels(t, r, norms)
    if in_indices is None:
        if s is None or not 1 <= s <= in_dim:
            raise MappingError(f"cannot keep {s} of {in_dim} input channels")
        in_idx = list(range(s))
    else:
        in_idx = [int(i) for i in in_indices]
        if s is not None and len(in_idx) != s:
            raise MappingError(f"expected {s} input indices, got {len(in_idx)}")
        if not in_idx or min(in_idx) < 0 or max(in_idx) >= in_dim:
            raise MappingError(f"input indices out of range for {in_dim} channels")
    sliced = t[np.ix_(out_idx, in_idx)]
    return sliced, out_idx, in_idx


def depth_map(slots: Sequence, depth: int) -> list:
    """The first ``depth`` supernet slots of a stage, in order."""
    if not 1 <= depth <= len(slots):
        raise MappingError(f"depth {depth} outside 1..{len(slots)}")
    return list(slots[:depth])


def slot_dims(space: SearchSpaceSpec, kernel_size: int = 3) -> Iterator[tuple[str, tuple[int, int, int, int], int]]:
    """Yield ``(key, dims, hidden)`` for every supernet tensor."""
    k = kernel_size
    yield STEM_KEY, (space.stem_channels, 3, k, k), 0
    prev_max = space.stem_channels
    for stage in space.searched:
        c_max = max(stage.allowed_channels)
        # slots before the transition pass the incoming width through
        wide = max(prev_max, c_max)
        for slot in range(stage.max_slots):
            c_in = prev_max if slot == 0 else (wide if slot <= stage.transition_slot else c_max)
            c_out = wide if slot < stage.transition_slot else c_max
            for op in space.layer_ops:
                yield slot_key(stage.index, slot, op), (c_out, c_in, k, k), op.expansion * c_in
        # a one-layer stage may end on a pass-through slot
        prev_max = wide if stage.transition_slot > 0 else c_max


class SupernetWeights:
    """Immutable full-width, full-depth, all-ops weight store."""

    def __init__(self, space: SearchSpaceSpec, tensors: Mapping[str, np.ndarray], seed: int | None = None,
                 kernel_size: int = 3):
        self.space = space
        self.seed = seed
        self.kernel_size = kernel_size
        self.hidden = {}
        store = {}
        for key, dims, hidden in slot_dims(space, kernel_size):
            if key not in tensors:
                raise ContainerError(f"missing supernet tensor {key}")
            arr = np.asarray(tensors[key], dtype=_DTYPE)
            if arr.shape != dims:
                raise ContainerError(f"tensor {key} has shape {arr.shape}, expected {dims}")
            if not np.all(np.isfinite(arr)):
                raise ContainerError(f"tensor {key} has non-finite values")
            if arr.flags.writeable:
                arr = arr.copy()
                arr.setflags(write=False)
            store[key] = arr
            self.hidden[key] = hidden
        self._tensors = store
        self._norms: dict[str, np.ndarray] = {}

    @classmethod
    def build(cls, space: SearchSpaceSpec, seed: int = 0, kernel_size: int = 3) -> "SupernetWeights":
        tensors = {}
        for i, (key, dims, _) in enumerate(slot_dims(space, kernel_size)):
            rng = np.random.default_rng([seed, i])
            tensors[key] = rng.uniform(-1.0, 1.0, size=dims).astype(_DTYPE)
        return cls(space, tensors, seed=seed, kernel_size=kernel_size)

    @property
    def space_hash(self) -> str:
        return self.space.space_hash()

    def keys(self) -> list[str]:
        return list(self._tensors)

    def __getitem__(self, key: str) -> np.ndarray:
        return self._tensors[key]

    def norms(self, key: str) -> np.ndarray:
        if key not in self._norms:
            self._norms[key] = l1_channel_norms(self._tensors[key])
        return self._norms[key]

    def stage_slots(self, stage: int, op: OpKind) -> list[str]:
        spec = self.space.stages[stage - 1]
        return [slot_key(stage, k, op) for k in range(spec.max_slots)]

    def with_tensor(self, key: str, values: np.ndarray) -> "SupernetWeights":
        """Copy sharing every tensor except ``key``."""
        tensors = dict(self._tensors)
        tensors[key] = np.array(values, dtype=_DTYPE)
        return SupernetWeights(self.space, tensors, seed=self.seed, kernel_size=self.kernel_size)

    def save(self, path: str | Path) -> None:
        write_container(path, self._tensors, {
            "kind": "supernet",
            "space_hash": self.space_hash,
            "seed": self.seed,
            "kernel_size": self.kernel_size,
            "space": self.space.to_dict(),
        })

    @classmethod
    def load(cls, path: str | Path) -> "SupernetWeights":
        header, tensors = read_container(path)
        if header.get("kind") != "supernet":
            raise ContainerError(f"{path} is not a supernet container")
        space = SearchSpaceSpec.from_dict(header["space"])
        if space.space_hash() != header["space_hash"]:
            raise ContainerError("space hash in header does not match embedded space")
        return cls(space, tensors, seed=header.get("seed"), kernel_size=header["kernel_size"])


def operation_map(supernet: SupernetWeights, stage: int, slot: int, op: OpKind) -> np.ndarray:
    if OpKind(op).is_identity:
        raise MappingError("Identity carries no weights")
    if not 2 <= stage <= 6:
        raise MappingError(f"stage {stage} is not searched")
    spec = supernet.space.stages[stage - 1]
    if not 0 <= slot < spec.max_slots:
        raise MappingError(f"slot {slot} out of range for stage {stage} ({spec.max_slots} slots)")
    key = slot_key(stage, slot, op)
    try:
        return supernet[key]
    except KeyError:
        raise MappingError(f"op {op.value} not in the supernet menu") from None


@dataclass(frozen=True)
class MappedLayer:
    source: str
    stage: int
    slot: int
    op: OpKind | None
    weights: np.ndarray
    out_indices: tuple[int, ...]
    in_indices: tuple[int, ...]
    hidden: int


@dataclass(frozen=True)
class MappedWeights:
    space_hash: str
    layers: tuple[MappedLayer, ...]

    def provenance(self) -> dict:
        return {
            "space_hash": self.space_hash,
            "layers": [
                {
                    "source": l.source,
                    "stage": l.stage,
                    "slot": l.slot,
                    "op": l.op.value if l.op else "Conv3",
                    "dims": list(l.weights.shape),
                    "hidden": l.hidden,
                    "out_indices": list(l.out_indices),
                    "in_indices": list(l.in_indices),
                }
                for l in self.layers
            ],
        }

    def save(self, path: str | Path) -> Path:
        """Write the container and its ``.json`` provenance sidecar; return the sidecar path."""
        path = Path(path)
        tensors = {f"{i:03d}:{l.source}": l.weights for i, l in enumerate(self.layers)}
        write_container(path, tensors, {"kind": "mapped", "space_hash": self.space_hash})
        sidecar = path.with_name(path.name + ".json")
        sidecar.write_text(json.dumps(self.provenance(), indent=1) + "\n")
        return sidecar


def map_individual(supernet: SupernetWeights, space: SearchSpaceSpec, genome: Genome) -> MappedWeights:
    if space.space_hash() != supernet.space_hash:
        raise MappingError(f"space hash {space.space_hash()} != supernet {supernet.space_hash}")
    arch = decode(space, genome)
    stem = supernet[STEM_KEY]
    layers = [MappedLayer(STEM_KEY, 1, 0, None, stem, tuple(range(stem.shape[0])),
                          tuple(range(stem.shape[1])), 0)]
    prev_out = layers[0].out_indices
    for stage_spec, stage_layers in zip(space.searched, arch.stages):
        slots = depth_map(range(stage_spec.max_slots), len(stage_layers))
        for slot, layer in zip(slots, stage_layers):
            try:
                t = operation_map(supernet, stage_spec.index, slot, layer.op)
                key = slot_key(stage_spec.index, slot, layer.op)
                w, out_idx, in_idx = channel_map(
                    t, layer.c_out, layer.c_in, in_indices=prev_out, norms=supernet.norms(key)
                )
            except MappingError as exc:
                raise MappingError(f"stage {stage_spec.index}, slot {slot}: {exc}") from None
            layers.append(MappedLayer(key, stage_spec.index, slot, layer.op, w,
                                      tuple(out_idx), tuple(in_idx), layer.hidden))
            prev_out = tuple(out_idx)
    return MappedWeights(supernet.space_hash, tuple(layers))


def write_container(path: str | Path, tensors: Mapping[str, np.ndarray], meta: dict) -> None:
    """Header (magic, u64 length, JSON directory) followed by little-endian f32 data."""
    directory, offset = [], 0
    for key, arr in tensors.items():
        nbytes = int(np.prod(arr.shape)) * _DTYPE.itemsize
        directory.append({"key": key, "dims": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = json.dumps({**meta, "tensors": directory}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes(order="C"))


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ContainerError(f"{path}: bad magic")
    (hlen,) = struct.unpack_from("<Q", blob, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(blob[start : start + hlen])
    data = memoryview(blob)[start + hlen :]
    tensors = {}
    for entry in header["tensors"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(data):
            raise ContainerError(f"{path}: tensor {entry['key']} runs past end of file")
        arr = np.frombuffer(data[lo : lo + n], dtype=_DTYPE).reshape(entry["dims"])
        tensors[entry["key"]] = arr
    return header, tensors


def container_data_size(path: str | Path) -> int:
    blob = Path(path).read_bytes()
    (hlen,) = struct.unpack_from("<Q", blob, len(MAGIC))
    return len(blob) - len(MAGIC) - 8 - hlen
