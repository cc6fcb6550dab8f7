"""Static parameter and FLOPs accounting.

Costs are derived analytically from each module's ``cost`` walk; no forward
pass is executed, so any input shape can be costed, including extents the
executable forward rejects (strided layers round up, as if padded).

MAC-type layers (convolutions, attention products) contribute ``macs``;
norms, activations, pooling, residual adds and gating contribute
``elementwise`` operations at one FLOP per element. Under ``mac2`` a MAC is
two FLOPs, under ``mac1`` one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

CONVENTIONS = ("mac1", "mac2")


@dataclass
class CostRow:
    name: str
    kind: str
    params: int
    macs: int = 0
    elementwise: int = 0

    def flops(self, convention: str = "mac2") -> int:
        return (2 if convention == "mac2" else 1) * self.macs + self.elementwise


@dataclass
class CostReport:
    input_shape: tuple = ()
    rows: List[CostRow] = field(default_factory=list)

    def add(self, name: str, kind: str, params: int, macs: int = 0, elementwise: int = 0) -> None:
        self.rows.append(CostRow(name, kind, int(params), int(macs), int(elementwise)))

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def total_flops(self, convention: str = "mac2") -> int:
        _check_convention(convention)
        return sum(r.flops(convention) for r in self.rows)

    def summary(self, convention: str = "mac2") -> str:
        shape = ",".join(str(s) for s in self.input_shape)
        return f"params={self.total_params} flops={self.total_flops(convention)}@{shape} convention={convention}"

    def to_tsv(self, convention: str = "mac2") -> str:
        lines = ["name\tkind\tparams\tflops"]
        for r in self.rows:
            lines.append(f"{r.name}\t{r.kind}\t{r.params}\t{r.flops(convention)}")
        return "\n".join(lines)


def _check_convention(convention: str) -> None:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown FLOPs convention {convention!r}; expected one of {CONVENTIONS}")


def count_params(model) -> int:
    return sum(p.size for p in model.parameters())


def cost_report(model, input_shape) -> CostReport:
    """Per-layer cost breakdown for one sample of spatial extents ``input_shape``."""
    spatial = tuple(int(s) for s in input_shape)
    if len(spatial) != 3 or any(s < 1 for s in spatial):
        raise ValueError(f"input shape must be three positive extents, got {input_shape}")
    report = CostReport(input_shape=spatial)
    model.cost((model.config.in_channels,) + spatial, report)
    return report


def count_flops(model, input_shape, convention: str = "mac2") -> int:
    _check_convention(convention)
    return cost_report(model, input_shape).total_flops(convention)
