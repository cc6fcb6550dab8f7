"""Finite-difference gradient suite over the differentiable primitives and a tiny model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from lightunetr.model import build_model, tiny_config
from lightunetr.tensor import (
    Tensor,
    avg_pool3d,
    batch_norm,
    check_gradients,
    concat,
    conv3d,
    conv3d_transposed,
    default_dtype,
    gelu,
    layer_norm,
    numeric_grad,
    relative_error,
    sigmoid,
    softmax,
    trilinear_resize,
)

PRIMITIVE_TOL = 1e-4
MODEL_TOL = 1e-3
EPS = 1e-4


def _rand(rng, shape, positive=False):
    a = rng.standard_normal(shape)
    return np.abs(a) + 0.5 if positive else a


SHAPES = [(2, 3, 2, 2, 2), (1, 6, 3, 2, 4), (3, 3, 4, 4, 2)]


def primitive_case(name, rng, shape):
    c = shape[1]
    t = lambda a: Tensor(a, requires_grad=True)  # noqa: E731
    proj = rng.standard_normal(shape)
    if name == "add":
        a, b = t(_rand(rng, shape)), t(_rand(rng, (1, c, 1, 1, 1)))
        return lambda: ((a + b) * proj).sum(), [a, b]
    if name == "sub":
        a, b = t(_rand(rng, shape)), t(_rand(rng, shape))
        return lambda: ((a - b) * proj).sum(), [a, b]
    if name == "mul":
        a, b = t(_rand(rng, shape)), t(_rand(rng, shape[-1:]))
        return lambda: ((a * b) * proj).sum(), [a, b]
    if name == "div":
        a, b = t(_rand(rng, shape)), t(_rand(rng, shape, positive=True))
        return lambda: ((a / b) * proj).sum(), [a, b]
    if name == "power_exp_log":
        a = t(_rand(rng, shape, positive=True))
        return lambda: ((a ** 1.5).exp().log() * proj).sum(), [a]
    if name == "mean_reshape_transpose":
        a = t(_rand(rng, shape))
        return lambda: (a.reshape(shape[0], -1).transpose(1, 0).mean(axis=1) * proj.reshape(-1)[:a.size // shape[0]]).sum(), [a]
    if name == "getitem_concat":
        a, b = t(_rand(rng, shape)), t(_rand(rng, shape))
        return lambda: (concat([a[:, :1], b], axis=1)[:, 1:] * proj).sum(), [a, b]
    if name == "matmul":
        a, b = t(_rand(rng, (shape[0], 3, 4))), t(_rand(rng, (4, 5)))
        p = rng.standard_normal((shape[0], 3, 5))
        return lambda: ((a @ b) * p).sum(), [a, b]
    if name == "sigmoid":
        a = t(_rand(rng, shape))
        return lambda: (sigmoid(a) * proj).sum(), [a]
    if name == "gelu":
        a = t(_rand(rng, shape))
        return lambda: (gelu(a) * proj).sum(), [a]
    if name == "softmax":
        a = t(_rand(rng, shape))
        return lambda: (softmax(a, axis=1) * proj).sum(), [a]
    if name == "layer_norm":
        a, g, b = t(_rand(rng, shape)), t(_rand(rng, (c,))), t(_rand(rng, (c,)))
        return lambda: (layer_norm(a, g, b) * proj).sum(), [a, g, b]
    if name == "batch_norm":
        a, g, b = t(_rand(rng, shape)), t(_rand(rng, (c,))), t(_rand(rng, (c,)))
        rm, rv = np.zeros(c), np.ones(c)
        return lambda: (batch_norm(a, g, b, rm, rv, True) * proj).sum(), [a, g, b]
    if name == "batch_norm_eval":
        a, g, b = t(_rand(rng, shape)), t(_rand(rng, (c,))), t(_rand(rng, (c,)))
        rm, rv = rng.standard_normal(c), _rand(rng, (c,), positive=True)
        return lambda: (batch_norm(a, g, b, rm, rv, False) * proj).sum(), [a, g, b]
    if name == "conv3d":
        groups = 3
        a = t(_rand(rng, shape))
        w = t(_rand(rng, (6, c // groups, 3, 3, 3)))
        b = t(_rand(rng, (6,)))
        out_shape = conv3d(a, w, b, stride=2, padding=1, groups=groups).shape
        p = rng.standard_normal(out_shape)
        return lambda: (conv3d(a, w, b, stride=2, padding=1, groups=groups) * p).sum(), [a, w, b]
    if name == "conv3d_transposed":
        a = t(_rand(rng, shape))
        w = t(_rand(rng, (c, 2, 3, 3, 3)))
        b = t(_rand(rng, (2 * c,)))
        out_shape = conv3d_transposed(a, w, b, stride=2, padding=1, groups=c).shape
        p = rng.standard_normal(out_shape)
        return lambda: (conv3d_transposed(a, w, b, stride=2, padding=1, groups=c) * p).sum(), [a, w, b]
    if name == "avg_pool3d":
        a = t(_rand(rng, (shape[0], c, 4, 4, 2)))
        p = rng.standard_normal((shape[0], c, 2, 2, 1))
        return lambda: (avg_pool3d(a, 2) * p).sum(), [a]
    if name == "trilinear_resize":
        a = t(_rand(rng, shape))
        target = (5, 3, 7)
        p = rng.standard_normal(shape[:2] + target)
        return lambda: (trilinear_resize(a, target) * p).sum(), [a]
    raise KeyError(name)


PRIMITIVES = [
    "add", "sub", "mul", "div", "power_exp_log", "mean_reshape_transpose", "getitem_concat", "matmul",
    "sigmoid", "gelu", "softmax", "layer_norm", "batch_norm", "batch_norm_eval", "conv3d",
    "conv3d_transposed", "avg_pool3d", "trilinear_resize",
]


@dataclass
class GradResult:
    name: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.error < self.tolerance

    def line(self) -> str:
        return f"{'ok' if self.ok else 'FAIL'} {self.name} rel_err={self.error:.3e} tol={self.tolerance:g}"


def primitive_errors(name: str, shape, seed: int = 0) -> List[float]:
    """Relative error per input of one primitive case, in float64."""
    rng = np.random.default_rng([seed, PRIMITIVES.index(name), *shape])
    with default_dtype(np.float64):
        fn, inputs = primitive_case(name, rng, shape)
        return check_gradients(fn, inputs, eps=EPS)


def model_gradient_error(samples: int = 20, seed: int = 0) -> float:
    """Sampled-parameter check of the tiny model end to end (softmax output, random projection)."""
    with default_dtype(np.float64):
        model = build_model(tiny_config(), seed)
        x = Tensor(np.random.default_rng(seed + 1).standard_normal((2, 1, 16, 16, 16)))
        w = Tensor(np.random.default_rng(seed + 2).standard_normal((2, 2, 16, 16, 16)))

        def loss():
            return (softmax(model(x, with_attention=False).logits, axis=1) * w).sum()

        loss().backward()
        rng = np.random.default_rng(seed + 3)
        params = model.parameters()
        analytic, numeric = [], []
        for k in rng.choice(len(params), size=samples, replace=False):
            p = params[k]
            idx = tuple(int(rng.integers(0, n)) for n in p.shape)
            analytic.append(p.grad[idx])
            numeric.append(numeric_grad(loss, p, EPS, [idx])[0])
    return relative_error(np.array(analytic), np.array(numeric))


def run_suite(seed: int = 0, samples: int = 20) -> List[GradResult]:
    results = []
    for name in PRIMITIVES:
        for shape in SHAPES:
            err = max(primitive_errors(name, shape, seed))
            results.append(GradResult(f"{name}[{'x'.join(map(str, shape))}]", err, PRIMITIVE_TOL))
    results.append(GradResult("tiny_model", model_gradient_error(samples, seed), MODEL_TOL))
    return results
