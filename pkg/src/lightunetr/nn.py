"""Module system and the basic parameterized layers.

Parameters and submodules are registered in attribute-assignment order, which
fixes the flat parameter order used by checkpoints and cost reports.

Every module also implements ``cost(shape, report, prefix)``: an analytic
walk that takes a per-sample shape ``(C, Z, Y, X)``, appends rows to a
:class:`~lightunetr.analysis.CostReport` and returns the output shape. The
walk uses ceil-rounding for strided layers so that it is defined even for
extents the executable forward rejects.
"""
from __future__ import annotations

import contextlib
import math
from typing import Iterator, List, Optional, Tuple

import numpy as np

from lightunetr.tensor import Tensor, get_default_dtype, is_grad_enabled, ops
from lightunetr.tensor.ops import triple


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) samples redrawn until inside +-2 std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(get_default_dtype())


class Module:
    def __init__(self):
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, (Parameter, Module)):
            self._children[name] = value
        elif name in self._children:
            del self._children[name]
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, child in self._children.items():
            full = f"{prefix}{name}"
            if isinstance(child, Parameter):
                yield full, child
            else:
                yield from child.named_parameters(full + ".")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, buf in self._buffers.items():
            yield f"{prefix}{name}", buf
        for name, child in self._children.items():
            if isinstance(child, Module):
                yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            if isinstance(child, Module):
                yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def cost(self, shape, report, prefix: str = ""):
        raise NotImplementedError(type(self).__name__)


def _param_count(module: Module) -> int:
    return sum(p.size for p in module._children.values() if isinstance(p, Parameter))


def ceil_div(n: int, d: int) -> int:
    return -(-n // d)


class Conv3d(Module):
    def __init__(self, cin: int, cout: int, kernel=1, stride=1, padding=0, groups: int = 1,
                 bias: bool = True, rng: Optional[np.random.Generator] = None, std: float = 0.02):
        super().__init__()
        if cin % groups or cout % groups:
            raise ValueError(f"Conv3d channels {cin}->{cout} not divisible by groups={groups}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cin, self.cout, self.groups = cin, cout, groups
        self.kernel, self.stride, self.padding = triple(kernel), triple(stride), triple(padding)
        self.weight = Parameter(trunc_normal(rng, (cout, cin // groups) + self.kernel, std))
        self.bias = Parameter(np.zeros(cout, dtype=get_default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def out_extent(self, spatial):
        return tuple(ceil_div(n + 2 * p - k + 1, s) for n, k, s, p in
                     zip(spatial, self.kernel, self.stride, self.padding))

    def cost(self, shape, report, prefix=""):
        out_sp = self.out_extent(shape[1:])
        macs = math.prod(out_sp) * self.cout * (self.cin // self.groups) * math.prod(self.kernel)
        report.add(prefix.rstrip("."), "conv", _param_count(self), macs=macs)
        return (self.cout,) + out_sp


class ConvTranspose3d(Module):
    """Weight layout (Cin, Cout/groups, kz, ky, kx)."""

    def __init__(self, cin: int, cout: int, kernel=2, stride=2, padding=0, groups: int = 1,
                 bias: bool = True, rng: Optional[np.random.Generator] = None, std: float = 0.02):
        super().__init__()
        if cin % groups or cout % groups:
            raise ValueError(f"ConvTranspose3d channels {cin}->{cout} not divisible by groups={groups}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cin, self.cout, self.groups = cin, cout, groups
        self.kernel, self.stride, self.padding = triple(kernel), triple(stride), triple(padding)
        self.weight = Parameter(trunc_normal(rng, (cin, cout // groups) + self.kernel, std))
        self.bias = Parameter(np.zeros(cout, dtype=get_default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d_transposed(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def cost(self, shape, report, prefix=""):
        in_sp = shape[1:]
        out_sp = tuple((n - 1) * s + k - 2 * p for n, k, s, p in
                       zip(in_sp, self.kernel, self.stride, self.padding))
        # every input voxel scatters a full kernel: MACs are counted on the input grid
        macs = math.prod(in_sp) * self.cin * (self.cout // self.groups) * math.prod(self.kernel)
        report.add(prefix.rstrip("."), "conv_transposed", _param_count(self), macs=macs)
        return (self.cout,) + out_sp


class LayerNorm3d(Module):
    """Layer norm over the channel axis at each voxel."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        dt = get_default_dtype()
        self.eps = eps
        self.weight = Parameter(np.ones(channels, dtype=dt))
        self.bias = Parameter(np.zeros(channels, dtype=dt))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)

    def cost(self, shape, report, prefix=""):
        report.add(prefix.rstrip("."), "norm", _param_count(self), elementwise=math.prod(shape))
        return shape


_STATS_FROZEN = False


@contextlib.contextmanager
def frozen_running_stats() -> Iterator[None]:
    """Training-mode forwards inside this block use batch statistics but do not update running ones."""
    global _STATS_FROZEN
    prev, _STATS_FROZEN = _STATS_FROZEN, True
    try:
        yield
    finally:
        _STATS_FROZEN = prev


class BatchNorm3d(Module):
    """Batch norm with exponential running statistics.

    Running statistics are only updated while gradient recording is enabled
    and not frozen, so pseudo-labelling and perturbed-view forwards leave them
    alone.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dt = get_default_dtype()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(channels, dtype=dt))
        self.bias = Parameter(np.zeros(channels, dtype=dt))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dt))
        self.register_buffer("running_var", np.ones(channels, dtype=dt))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps, update_running=is_grad_enabled() and not _STATS_FROZEN)

    def cost(self, shape, report, prefix=""):
        report.add(prefix.rstrip("."), "norm", _param_count(self), elementwise=math.prod(shape))
        return shape


class Activation(Module):
    def __init__(self, kind: str):
        super().__init__()
        self.kind = kind

    def forward(self, x: Tensor) -> Tensor:
        return ops.activation(x, self.kind)

    def cost(self, shape, report, prefix=""):
        report.add(prefix.rstrip("."), "activation", 0, elementwise=math.prod(shape))
        return shape


class SqueezeExcite(Module):
    """Channel gating: global average pool, bottleneck, sigmoid gates."""

    def __init__(self, channels: int, reduction: int = 4, rng: Optional[np.random.Generator] = None):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.reduce = Conv3d(channels, hidden, 1, rng=rng)
        self.expand = Conv3d(hidden, channels, 1, rng=rng)

    def gates(self, x: Tensor) -> Tensor:
        s = x.mean(axis=(2, 3, 4), keepdims=True)
        return ops.sigmoid(self.expand(ops.gelu(self.reduce(s))))

    def forward(self, x: Tensor) -> Tensor:
        return x * self.gates(x)

    def cost(self, shape, report, prefix=""):
        c = shape[0]
        report.add(prefix + "pool", "pool", 0, elementwise=math.prod(shape))
        s = self.reduce.cost((c, 1, 1, 1), report, prefix + "reduce.")
        s = self.expand.cost(s, report, prefix + "expand.")
        report.add(prefix + "gate", "elementwise", 0, elementwise=math.prod(shape) + 2 * c)
        return shape


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: List[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]
