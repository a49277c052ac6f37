"""GhostNet-based backbone search space: stages, genome encoding and decoding.

A genome holds one operation gene per layer slot and one channel gene per
searched stage (stages 2-6). Decoding drops ``Identity`` genes, so the depth
of a stage is its number of non-identity genes.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


class OpKind(enum.Enum):
    GBe1 = "GBe1"
    GBe2 = "GBe2"
    GBe3 = "GBe3"
    GBe4 = "GBe4"
    GBe5 = "GBe5"
    GBe6 = "GBe6"
    Identity = "Identity"

    @property
    def expansion(self) -> int:
        if self is OpKind.Identity:
            return 0
        return int(self.value[3:])

    @property
    def is_identity(self) -> bool:
        return self is OpKind.Identity

    @property
    def table_name(self) -> str:
        """Name used in the per-layer architecture text format (e.g. ``K3GBe3``)."""
        return "K3" + self.value

    @classmethod
    def parse(cls, name: str) -> "OpKind":
        key = name[2:] if name.startswith("K3") else name
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown operation {name!r}") from None


ALL_OPS = tuple(OpKind)
STEM_OP_NAME = "Conv3"


class GenomeStructureError(ValueError):
    """Genome gene lengths do not match the search space."""


class InvalidGenomeError(ValueError):
    """Genome is well-shaped but violates a search-space rule."""


class ArchitectureError(ValueError):
    """Architecture text or description cannot be expressed in the space."""


@dataclass(frozen=True)
class StageSpec:
    index: int
    allowed_channels: tuple[int, ...]
    max_slots: int
    first_slot_stride: int
    emits_feature: bool
    # layer (within the stage) that switches to the stage's chosen width;
    # earlier layers keep the incoming width
    transition_slot: int = 0

    def __post_init__(self):
        chans = tuple(int(c) for c in self.allowed_channels)
        object.__setattr__(self, "allowed_channels", chans)
        if not chans or any(c <= 0 for c in chans):
            raise ValueError(f"stage {self.index}: channel set must be non-empty and positive")
        if any(b <= a for a, b in zip(chans, chans[1:])):
            raise ValueError(f"stage {self.index}: channels must be strictly increasing")
        if self.max_slots < 1:
            raise ValueError(f"stage {self.index}: max_slots must be >= 1")
        if self.first_slot_stride not in (1, 2):
            raise ValueError(f"stage {self.index}: stride must be 1 or 2")
        if self.transition_slot < 0:
            raise ValueError(f"stage {self.index}: transition_slot must be >= 0")


@dataclass(frozen=True)
class SearchSpaceSpec:
    stages: tuple[StageSpec, ...]
    stem_channels: int = 16
    input_resolution: int = 320
    ops: tuple[OpKind, ...] = ALL_OPS

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "ops", tuple(OpKind(o) for o in self.ops))
        if len(self.stages) != 6:
            raise ValueError("search space needs exactly 6 stages")
        if [s.index for s in self.stages] != list(range(1, 7)):
            raise ValueError("stage indices must be 1..6 in order")
        stem = self.stages[0]
        if stem.max_slots != 1 or stem.allowed_channels != (self.stem_channels,):
            raise ValueError("stage 1 must be the fixed stem")
        if not self.layer_ops:
            raise ValueError("operation menu needs at least one non-identity op")
        if len(set(self.ops)) != len(self.ops):
            raise ValueError("duplicate operations in menu")
        if self.input_resolution < 1:
            raise ValueError("input_resolution must be positive")

    @property
    def searched(self) -> tuple[StageSpec, ...]:
        return self.stages[1:]

    @property
    def layer_ops(self) -> tuple[OpKind, ...]:
        """Ops allowed in the first slot of a stage (identity excluded)."""
        return tuple(o for o in self.ops if not o.is_identity)

    @property
    def feature_taps(self) -> tuple[int, ...]:
        return tuple(s.index for s in self.stages if s.emits_feature)

    def to_dict(self) -> dict:
        return {
            "stem_channels": self.stem_channels,
            "input_resolution": self.input_resolution,
            "ops": [o.value for o in self.ops],
            "stages": [
                {
                    "index": s.index,
                    "allowed_channels": list(s.allowed_channels),
                    "max_slots": s.max_slots,
                    "first_slot_stride": s.first_slot_stride,
                    "emits_feature": s.emits_feature,
                    "transition_slot": s.transition_slot,
                }
                for s in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SearchSpaceSpec":
        return cls(
            stages=tuple(StageSpec(**{**s, "allowed_channels": tuple(s["allowed_channels"])})
                         for s in data["stages"]),
            stem_channels=data["stem_channels"],
            input_resolution=data["input_resolution"],
            ops=tuple(OpKind(o) for o in data["ops"]),
        )

    def space_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


STAGE_CHANNELS = (
    (16,),
    (24, 32),
    (40, 48),
    (56, 64, 72, 80, 88, 96),
    (104, 112, 120, 128),
    (144, 152, 160, 168, 176, 184, 192),
)
DEFAULT_MAX_SLOTS = (4, 4, 6, 9, 12)
STRIDE_PATTERN = (2, 2, 2, 2, 1, 2)
FEATURE_STAGES = (3, 5, 6)


def default_space(
    max_slots: Sequence[int] = DEFAULT_MAX_SLOTS,
    input_resolution: int = 320,
    channels: Sequence[Sequence[int]] | None = None,
    ops: Sequence[OpKind | str] = ALL_OPS,
) -> SearchSpaceSpec:
    """Build the GhostNet search space, optionally truncated for testing.

    ``channels`` overrides the per-stage channel sets of stages 2-6.
    """
    if len(max_slots) != 5:
        raise ValueError("max_slots needs one entry per searched stage (5)")
    chans = list(STAGE_CHANNELS)
    if channels is not None:
        if len(channels) != 5:
            raise ValueError("channels needs one set per searched stage (5)")
        chans[1:] = [tuple(c) for c in channels]
    slots = (1, *max_slots)
    stages = tuple(
        StageSpec(
            index=i + 1,
            allowed_channels=tuple(chans[i]),
            max_slots=int(slots[i]),
            first_slot_stride=STRIDE_PATTERN[i],
            emits_feature=(i + 1) in FEATURE_STAGES,
            # stage 2 keeps stem width through its strided first layer
            transition_slot=1 if i + 1 == 2 else 0,
        )
        for i in range(6)
    )
    return SearchSpaceSpec(
        stages=stages,
        stem_channels=STAGE_CHANNELS[0][0],
        input_resolution=input_resolution,
        ops=tuple(OpKind(o) for o in ops),
    )


@dataclass(frozen=True)
class Genome:
    op_genes: tuple[tuple[OpKind, ...], ...]
    channel_genes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "op_genes", tuple(tuple(OpKind(o) for o in stage) for stage in self.op_genes)
        )
        object.__setattr__(self, "channel_genes", tuple(int(c) for c in self.channel_genes))

    def to_dict(self) -> dict:
        return {
            "op_genes": [[o.value for o in stage] for stage in self.op_genes],
            "channel_genes": list(self.channel_genes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Genome":
        try:
            return cls(
                op_genes=tuple(tuple(OpKind(o) for o in stage) for stage in data["op_genes"]),
                channel_genes=tuple(data["channel_genes"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GenomeStructureError(f"malformed genome document: {exc}") from exc

    def key(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


@dataclass(frozen=True)
class StemDesc:
    c_in: int
    c_out: int
    stride: int
    spatial_in: int

    @property
    def spatial_out(self) -> int:
        return _conv_out(self.spatial_in, self.stride)


@dataclass(frozen=True)
class LayerDesc:
    op: OpKind
    c_in: int
    c_out: int
    stride: int
    spatial_in: int

    def __post_init__(self):
        if self.op.is_identity:
            raise ValueError("decoded layers never carry Identity")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")

    @property
    def spatial_out(self) -> int:
        return _conv_out(self.spatial_in, self.stride)

    @property
    def hidden(self) -> int:
        return self.op.expansion * self.c_in


@dataclass(frozen=True)
class ArchitectureDesc:
    stem: StemDesc
    stages: tuple[tuple[LayerDesc, ...], ...]
    feature_taps: tuple[int, ...] = FEATURE_STAGES

    @property
    def depths(self) -> tuple[int, ...]:
        """Layer counts per stage, stem included as stage 1."""
        return (1, *(len(s) for s in self.stages))

    def layers(self) -> Iterator[tuple[int, LayerDesc]]:
        """Yield ``(stage_index, layer)`` in network order, stem excluded."""
        for offset, stage in enumerate(self.stages):
            for layer in stage:
                yield offset + 2, layer

    def to_text(self) -> str:
        lines = [f"0 {STEM_OP_NAME} {self.stem.c_in} {self.stem.c_out} {self.stem.stride}"]
        for i, (_, layer) in enumerate(self.layers(), start=1):
            lines.append(f"{i} {layer.op.table_name} {layer.c_in} {layer.c_out} {layer.stride}")
        return "\n".join(lines) + "\n"


def _conv_out(spatial: int, stride: int) -> int:
    # 3x3 conv, padding 1
    return -(-spatial // stride)


def random_genome(space: SearchSpaceSpec, rng: np.random.Generator) -> Genome:
    first = space.layer_ops
    ops = []
    for stage in space.searched:
        genes = [first[rng.integers(len(first))]]
        genes += [space.ops[rng.integers(len(space.ops))] for _ in range(stage.max_slots - 1)]
        ops.append(tuple(genes))
    chans = tuple(int(rng.integers(len(s.allowed_channels))) for s in space.searched)
    return Genome(tuple(ops), chans)


def validate(space: SearchSpaceSpec, genome: Genome) -> list[str]:
    """Return the list of rule violations (empty means valid).

    Raises GenomeStructureError when gene counts do not match the space.
    """
    searched = space.searched
    if len(genome.op_genes) != len(searched) or len(genome.channel_genes) != len(searched):
        raise GenomeStructureError(
            f"expected {len(searched)} stages, got {len(genome.op_genes)} op stages "
            f"and {len(genome.channel_genes)} channel genes"
        )
    for stage, genes in zip(searched, genome.op_genes):
        if len(genes) != stage.max_slots:
            raise GenomeStructureError(
                f"stage {stage.index}: expected {stage.max_slots} op genes, got {len(genes)}"
            )

    violations = []
    for stage, genes, ch in zip(searched, genome.op_genes, genome.channel_genes):
        if genes[0].is_identity:
            violations.append(f"first slot identity, stage {stage.index}")
        bad = sorted({g.value for g in genes if g not in space.ops})
        if bad:
            violations.append(f"operation not in menu, stage {stage.index}: {', '.join(bad)}")
        if not 0 <= ch < len(stage.allowed_channels):
            violations.append(f"channel index out of range, stage {stage.index}: {ch}")
    return violations


def check_genome(space: SearchSpaceSpec, genome: Genome) -> None:
    violations = validate(space, genome)
    if violations:
        raise InvalidGenomeError("; ".join(violations))


def decode(space: SearchSpaceSpec, genome: Genome) -> ArchitectureDesc:
    check_genome(space, genome)
    stem = StemDesc(3, space.stem_channels, space.stages[0].first_slot_stride, space.input_resolution)
    spatial = stem.spatial_out
    c_prev = stem.c_out
    stages = []
    for stage, genes, ch in zip(space.searched, genome.op_genes, genome.channel_genes):
        ops = [g for g in genes if not g.is_identity]
        chosen = stage.allowed_channels[ch]
        transition = min(stage.transition_slot, len(ops) - 1)
        layers = []
        for k, op in enumerate(ops):
            c_out = chosen if k >= transition else c_prev
            stride = stage.first_slot_stride if k == 0 else 1
            layer = LayerDesc(op, c_prev, c_out, stride, spatial)
            layers.append(layer)
            spatial = layer.spatial_out
            c_prev = c_out
        stages.append(tuple(layers))
    return ArchitectureDesc(stem, tuple(stages), space.feature_taps)


def encode(space: SearchSpaceSpec, arch: ArchitectureDesc) -> Genome:
    """Inverse of decode; Identity genes are placed in trailing slots."""
    if len(arch.stages) != len(space.searched):
        raise ArchitectureError(f"expected {len(space.searched)} searched stages, got {len(arch.stages)}")
    ops, chans = [], []
    for stage, layers in zip(space.searched, arch.stages):
        if not layers:
            raise ArchitectureError(f"stage {stage.index} is empty")
        if len(layers) > stage.max_slots:
            raise ArchitectureError(
                f"stage {stage.index} has {len(layers)} layers, space allows {stage.max_slots}"
            )
        pad = stage.max_slots - len(layers)
        if pad and OpKind.Identity not in space.ops:
            raise ArchitectureError(f"stage {stage.index}: depth below max_slots needs Identity")
        ops.append(tuple(l.op for l in layers) + (OpKind.Identity,) * pad)
        width = layers[-1].c_out
        if width not in stage.allowed_channels:
            raise ArchitectureError(
                f"stage {stage.index}: {width} channels not in {list(stage.allowed_channels)}"
            )
        chans.append(stage.allowed_channels.index(width))
    genome = Genome(tuple(ops), tuple(chans))
    violations = validate(space, genome)
    if violations:
        raise ArchitectureError("; ".join(violations))
    if decode(space, genome) != arch:
        raise ArchitectureError("architecture wiring is not expressible in this space")
    return genome


def parse_architecture(text: str, space: SearchSpaceSpec | None = None) -> ArchitectureDesc:
    """Parse the per-layer ``index op c_in c_out stride`` text format.

    Stage boundaries are inferred: a layer opens a new stage when it is
    strided or when its output width leaves the current stage's channel set.
    """
    space = space or default_space()
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ArchitectureError(f"line {lineno}: expected 5 fields, got {len(fields)}")
        _, op_name, c_in, c_out, stride = fields
        try:
            c_in, c_out, stride = int(c_in), int(c_out), int(stride)
        except ValueError:
            raise ArchitectureError(f"line {lineno}: non-integer channel or stride field") from None
        if op_name == STEM_OP_NAME:
            op = None
        else:
            try:
                op = OpKind.parse(op_name)
            except ValueError:
                raise ArchitectureError(f"unknown operation at line {lineno}: {op_name!r}") from None
            if op.is_identity:
                raise ArchitectureError(f"unknown operation at line {lineno}: {op_name!r}")
        rows.append((lineno, op, c_in, c_out, stride))

    if not rows or rows[0][1] is not None:
        raise ArchitectureError("first layer must be the Conv3 stem")
    lineno, _, c_in, c_out, stride = rows[0]
    stem_spec = space.stages[0]
    if (c_in, c_out, stride) != (3, space.stem_channels, stem_spec.first_slot_stride):
        raise ArchitectureError(f"line {lineno}: stem must be 3 -> {space.stem_channels}, stride 2")
    stem = StemDesc(c_in, c_out, stride, space.input_resolution)

    grouped: list[list[LayerDesc]] = []
    spatial, c_prev, stage_pos = stem.spatial_out, stem.c_out, 0
    for lineno, op, c_in, c_out, stride in rows[1:]:
        if op is None:
            raise ArchitectureError(f"line {lineno}: Conv3 only allowed as the stem")
        if c_in != c_prev:
            raise ArchitectureError(f"line {lineno}: input channels {c_in} != previous output {c_prev}")
        current = space.stages[stage_pos]
        leaves = c_out not in current.allowed_channels and c_out != c_in
        if stride == 2 or leaves or stage_pos == 0:
            stage_pos += 1
            if stage_pos >= len(space.stages):
                raise ArchitectureError(f"line {lineno}: more stages than the space has")
            expected = space.stages[stage_pos].first_slot_stride
            if stride != expected:
                raise ArchitectureError(
                    f"line {lineno}: stage {stage_pos + 1} must open with stride {expected}"
                )
            grouped.append([])
        try:
            layer = LayerDesc(op, c_in, c_out, stride, spatial)
        except ValueError as exc:
            raise ArchitectureError(f"line {lineno}: {exc}") from None
        grouped[-1].append(layer)
        spatial, c_prev = layer.spatial_out, c_out
    if len(grouped) != len(space.searched):
        raise ArchitectureError(f"found {len(grouped)} searched stages, expected {len(space.searched)}")
    for stage, layers in zip(space.searched, grouped):
        if layers[-1].c_out not in stage.allowed_channels:
            raise ArchitectureError(
                f"stage {stage.index}: {layers[-1].c_out} channels not in {list(stage.allowed_channels)}"
            )
    return ArchitectureDesc(stem, tuple(tuple(g) for g in grouped), space.feature_taps)


def space_size(space: SearchSpaceSpec) -> int:
    """Number of distinct genomes (Identity placements counted separately)."""
    n_first, n_all = len(space.layer_ops), len(space.ops)
    total = 1
    for stage in space.searched:
        total *= n_first * n_all ** (stage.max_slots - 1) * len(stage.allowed_channels)
    return total


def iter_genomes(space: SearchSpaceSpec) -> Iterator[Genome]:
    per_stage = []
    for stage in space.searched:
        ops = [
            (first, *rest)
            for first in space.layer_ops
            for rest in itertools.product(space.ops, repeat=stage.max_slots - 1)
        ]
        per_stage.append([(o, c) for o in ops for c in range(len(stage.allowed_channels))])
    for combo in itertools.product(*per_stage):
        yield Genome(tuple(o for o, _ in combo), tuple(c for _, c in combo))


def extreme_genomes(space: SearchSpaceSpec) -> tuple[Genome, Genome]:
    """(cheapest, most expensive) genomes: shallowest/narrowest vs deepest/widest."""
    small = min(space.layer_ops, key=lambda o: o.expansion)
    big = max(space.layer_ops, key=lambda o: o.expansion)
    pad = OpKind.Identity if OpKind.Identity in space.ops else small
    lo = Genome(
        tuple((small,) + (pad,) * (s.max_slots - 1) for s in space.searched),
        (0,) * len(space.searched),
    )
    hi = Genome(
        tuple((big,) * s.max_slots for s in space.searched),
        tuple(len(s.allowed_channels) - 1 for s in space.searched),
    )
    return lo, hi


__all__ = [
    "ALL_OPS", "ArchitectureDesc", "ArchitectureError", "Genome", "GenomeStructureError",
    "InvalidGenomeError", "LayerDesc", "OpKind", "SearchSpaceSpec", "StageSpec", "StemDesc",
    "check_genome", "decode", "default_space", "encode", "extreme_genomes", "iter_genomes",
    "parse_architecture", "random_genome", "space_size", "validate",
]
