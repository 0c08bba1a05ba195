"""Static parameter and MAC counting over the model graph.

Counts are exact integers derived from the layer table: a convolution costs
C_out * (C_in / groups) * kH * kW MACs per output pixel, norms contribute
parameters but no MACs, and elementwise stages (attention score/gating,
masking, soft-argmax) are counted as zero MACs. GFLOPs are reported as
2 * MACs / 1e9.
"""

from __future__ import annotations

from dataclasses import dataclass

from .arch import LayerSpec, build_graph
from .config import ModelConfig


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    macs: int


@dataclass(frozen=True)
class CostReport:
    layers: tuple[LayerCost, ...]

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def gflops(self) -> float:
        return 2 * self.total_macs / 1e9

    @property
    def mmacs(self) -> float:
        return self.total_macs / 1e6

    def as_records(self) -> list[dict]:
        return [{"name": l.name, "params": l.params, "macs": l.macs} for l in self.layers]

    def as_table(self) -> str:
        width = max(len(l.name) for l in self.layers)
        lines = [f"{'layer':<{width}}  {'params':>10}  {'macs':>12}"]
        lines.append("-" * (width + 26))
        for l in self.layers:
            lines.append(f"{l.name:<{width}}  {l.params:>10}  {l.macs:>12}")
        lines.append("-" * (width + 26))
        lines.append(f"{'total':<{width}}  {self.total_params:>10}  {self.total_macs:>12}")
        lines.append(
            f"params {self.total_params / 1e6:.4f} M | {self.mmacs:.3f} MMACs "
            f"| {self.gflops:.4f} GFLOPs (2 x MACs)")
        return "\n".join(lines)


def _report(layers: list[LayerSpec]) -> CostReport:
    return CostReport(tuple(LayerCost(l.name, l.param_count, l.macs) for l in layers))


def count_params(config: ModelConfig) -> CostReport:
    return _report(build_graph(config))


def count_macs(config: ModelConfig, input_size: tuple[int, int] | None = None) -> CostReport:
    if input_size is not None and tuple(input_size) != tuple(config.input_size):
        config = config.with_(input_size=tuple(input_size))
    return _report(build_graph(config))


def profile(config: ModelConfig) -> CostReport:
    """Single walk returning both parameter and MAC columns."""
    return _report(build_graph(config))
