"""Analytic MACs / parameter counts for decoded GhostNet backbones.

Conventions: a ghost module emits half its channels with a 1x1 conv and the
other half with a 3x3 depthwise conv on those; bias, batch-norm and
activations are not counted. ``flops`` is defined as ``2 * macs``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .search_space import (
    ArchitectureDesc,
    Genome,
    LayerDesc,
    SearchSpaceSpec,
    StemDesc,
    decode,
    extreme_genomes,
)

DW_KERNEL = 9  # 3x3 depthwise taps


@dataclass(frozen=True)
class LayerCost:
    layer_id: int
    macs: int
    params: int


@dataclass(frozen=True)
class CostReport:
    macs: int
    params: int
    per_layer: tuple[LayerCost, ...] = field(default=())

    @property
    def flops(self) -> int:
        return 2 * self.macs

    def to_dict(self) -> dict:
        return {
            "macs": self.macs,
            "flops": self.flops,
            "params": self.params,
            "per_layer": [
                {"layer": c.layer_id, "macs": c.macs, "params": c.params} for c in self.per_layer
            ],
        }


def ghost_module_cost(c_in: int, c_out: int, spatial_out: int) -> tuple[int, int]:
    """Cost of one ghost module (ratio 2) producing ``c_out`` channels."""
    if c_out % 2:
        raise ValueError(f"ghost module needs an even output width, got {c_out}")
    if spatial_out < 1:
        raise ValueError("spatial_out must be >= 1")
    half = c_out // 2
    area = spatial_out * spatial_out
    macs = area * c_in * half + area * half * DW_KERNEL
    params = c_in * half + DW_KERNEL * half
    return macs, params


def ghost_bottleneck_cost(layer: LayerDesc) -> tuple[int, int]:
    """Expansion ghost module -> optional strided depthwise -> projection ghost module.

    The expansion runs at the input resolution; the stride lands on the
    depthwise conv, so the projection and shortcut run at the output size.
    """
    if layer.op.is_identity:
        raise ValueError("Identity has no bottleneck cost")
    hidden = layer.hidden
    s_in, s_out = layer.spatial_in, layer.spatial_out
    macs, params = ghost_module_cost(layer.c_in, hidden, s_in)
    if layer.stride == 2:
        macs += s_out * s_out * hidden * DW_KERNEL
        params += hidden * DW_KERNEL
    m, p = ghost_module_cost(hidden, layer.c_out, s_out)
    macs, params = macs + m, params + p
    if layer.stride == 2 or layer.c_in != layer.c_out:
        area = s_out * s_out
        macs += area * layer.c_in * DW_KERNEL + area * layer.c_in * layer.c_out
        params += layer.c_in * DW_KERNEL + layer.c_in * layer.c_out
    return macs, params


def stem_cost(stem: StemDesc) -> tuple[int, int]:
    area = stem.spatial_out * stem.spatial_out
    params = DW_KERNEL * stem.c_in * stem.c_out
    return area * params, params


def backbone_cost(arch: ArchitectureDesc) -> CostReport:
    macs, params = stem_cost(arch.stem)
    per_layer = [LayerCost(0, macs, params)]
    for i, (_, layer) in enumerate(arch.layers(), start=1):
        m, p = ghost_bottleneck_cost(layer)
        per_layer.append(LayerCost(i, m, p))
    return CostReport(
        macs=sum(c.macs for c in per_layer),
        params=sum(c.params for c in per_layer),
        per_layer=tuple(per_layer),
    )


def genome_cost(space: SearchSpaceSpec, genome: Genome) -> tuple[int, int]:
    report = backbone_cost(decode(space, genome))
    return report.macs, report.params


def space_cost_bounds(space: SearchSpaceSpec) -> tuple[tuple[int, int], tuple[int, int]]:
    """((min_macs, min_params), (max_macs, max_params)) over the space."""
    lo, hi = extreme_genomes(space)
    return genome_cost(space, lo), genome_cost(space, hi)


def format_cost_table(arch: ArchitectureDesc, report: CostReport) -> str:
    rows = arch.to_text().splitlines()
    out = [f"{'No.':>3} {'Operation':<8} {'In':>5} {'Out':>5} {'Stride':>6} {'MACs':>12} {'Params':>10}"]
    for row, cost in zip(rows, report.per_layer):
        idx, op, c_in, c_out, stride = row.split()
        out.append(f"{idx:>3} {op:<8} {c_in:>5} {c_out:>5} {stride:>6} {cost.macs:>12} {cost.params:>10}")
    out.append(f"total macs={report.macs} flops={report.flops} params={report.params}")
    return "\n".join(out)
