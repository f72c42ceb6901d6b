"""Dense differentiable layers with hand-written backward passes.

Every forward returns ``(output, cache)``; :func:`backward` turns a cache and the
upstream gradient into the input gradient, accumulating parameter gradients
additively into the layer's :class:`Param` slots. Inputs are never mutated.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from typing import Literal, Protocol

import numpy as np
import numpy.typing as npt

from disn.exceptions import DegenerateBatchError, NumericError, ShapeError

Tensor = npt.NDArray[np.floating]
Mode = Literal["train", "eval"]

EPS_NORM = 1e-12
DEFAULT_H = 1e-5


def ensure_tensor(x: np.ndarray, cols: int | None = None, name: str = "input") -> Tensor:
    """Validate a row-batch tensor.

    Args:
        x: Candidate tensor.
        cols: Required column count, if any.
        name: Name used in error messages.

    Returns:
        The same array.

    Raises:
        ShapeError: If x is not 2-D, empty, or has the wrong column count.
        NumericError: If x contains NaN or Inf.
    """
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D tensor, got shape {x.shape}")
    if cols is not None and x.shape[1] != cols:
        raise ShapeError(f"{name} has {x.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite values")
    return x


@dataclass
class Param:
    """A trainable tensor with its gradient and Adam moment slots."""

    value: Tensor
    grad: Tensor = field(init=False)
    m1: Tensor = field(init=False)
    m2: Tensor = field(init=False)

    def __post_init__(self) -> None:
        self.grad = np.zeros_like(self.value)
        self.m1 = np.zeros_like(self.value)
        self.m2 = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        """Reset the gradient slot."""
        self.grad[...] = 0.0

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the value tensor."""
        return self.value.shape


class Cache(Protocol):
    """Anything :func:`backward` can differentiate through."""

    def backward(self, grad_out: Tensor | float) -> Tensor: ...


class FcLayer:
    """Fully-connected layer ``y = x @ W + b``."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype: str = "float32"):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Param(rng.uniform(-bound, bound, size=(in_dim, out_dim)).astype(dtype))
        self.bias = Param(rng.uniform(-bound, bound, size=(out_dim,)).astype(dtype))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def named_params(self, prefix: str) -> Iterator[tuple[str, Param]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias

    def named_buffers(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        del prefix
        yield from ()


class BnLayer:
    """Batch normalization over the feature columns of a row batch."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5, dtype: str = "float32"):
        self.gamma = Param(np.ones(dim, dtype=dtype))
        self.beta = Param(np.zeros(dim, dtype=dtype))
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        # Gradient checks re-run forwards many times; they must not drift the statistics.
        self.frozen_stats = False

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    def named_params(self, prefix: str) -> Iterator[tuple[str, Param]]:
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_buffers(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var


@dataclass
class FcCache:
    layer: FcLayer
    x: Tensor

    def backward(self, grad_out: Tensor) -> Tensor:
        self.layer.weight.grad += self.x.T @ grad_out
        self.layer.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.layer.weight.value.T


@dataclass
class BnCache:
    layer: BnLayer
    x_hat: Tensor
    inv_std: Tensor
    mode: Mode

    def backward(self, grad_out: Tensor) -> Tensor:
        gamma = self.layer.gamma
        self.layer.gamma.grad += np.sum(grad_out * self.x_hat, axis=0)
        self.layer.beta.grad += grad_out.sum(axis=0)
        if self.mode == "eval":
            return grad_out * gamma.value * self.inv_std
        n = grad_out.shape[0]
        return (gamma.value * self.inv_std / n) * (
            n * grad_out
            - grad_out.sum(axis=0)
            - self.x_hat * np.sum(grad_out * self.x_hat, axis=0)
        )


@dataclass
class EluCache:
    x: Tensor

    def backward(self, grad_out: Tensor) -> Tensor:
        slope = np.where(self.x > 0, 1.0, np.exp(np.minimum(self.x, 0.0)))
        return grad_out * slope.astype(grad_out.dtype, copy=False)


@dataclass
class L1Cache:
    x: Tensor
    denom: Tensor  # (rows, 1): ||x||_1 + EPS_NORM

    def backward(self, grad_out: Tensor) -> Tensor:
        proj = np.sum(grad_out * self.x, axis=1, keepdims=True)
        return grad_out / self.denom - np.sign(self.x) * proj / self.denom**2


@dataclass
class ChainCache:
    """Caches of sequentially composed forwards, replayed in reverse."""

    caches: list[Cache]

    def backward(self, grad_out: Tensor) -> Tensor:
        grad = grad_out
        for cache in reversed(self.caches):
            grad = backward(cache, grad)
        return grad


def fc_forward(layer: FcLayer, x: Tensor) -> tuple[Tensor, FcCache]:
    """Fully-connected forward.

    Args:
        layer: Layer with weight (in_dim x out_dim) and bias (out_dim).
        x: Row batch with in_dim columns.

    Returns:
        Tuple of (x @ W + b, cache).
    """
    ensure_tensor(x, layer.in_dim)
    y = x @ layer.weight.value + layer.bias.value
    return y, FcCache(layer, x)


def bn_forward(
    layer: BnLayer,
    x: Tensor,
    mode: Mode,
) -> tuple[Tensor, BnCache]:
    """Batch-normalization forward.

    Train mode normalizes by the batch mean and (biased) variance and updates the
    running statistics with the layer momentum, using the unbiased variance.
    Eval mode normalizes by the running statistics only.

    Args:
        layer: Batch-norm layer.
        x: Row batch with layer.dim columns.
        mode: "train" or "eval".

    Returns:
        Tuple of (normalized output, cache).

    Raises:
        DegenerateBatchError: If train mode receives fewer than two rows.
    """
    ensure_tensor(x, layer.dim)
    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise DegenerateBatchError(
                f"Batch normalization in train mode needs >= 2 rows, got {n}"
            )
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if not layer.frozen_stats:
            m = layer.momentum
            layer.running_mean[...] = (1 - m) * layer.running_mean + m * mean
            layer.running_var[...] = (1 - m) * layer.running_var + m * var * n / (n - 1)
    else:
        mean = layer.running_mean
        var = layer.running_var
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    x_hat = (x - mean) * inv_std
    y = layer.gamma.value * x_hat + layer.beta.value
    return y, BnCache(layer, x_hat, inv_std, mode)


def elu_forward(x: Tensor) -> tuple[Tensor, EluCache]:
    """ELU activation with alpha = 1."""
    ensure_tensor(x)
    y = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0))).astype(x.dtype, copy=False)
    return y, EluCache(x)


def l1_normalize_forward(x: Tensor) -> tuple[Tensor, L1Cache]:
    """Row-wise L1 normalization ``y = x / (||x||_1 + EPS_NORM)``."""
    ensure_tensor(x)
    denom = np.sum(np.abs(x), axis=1, keepdims=True) + EPS_NORM
    return x / denom, L1Cache(x, denom)


def backward(cache: Cache, grad_out: Tensor | float) -> Tensor:
    """Reverse-mode step through one recorded forward.

    Args:
        cache: Cache produced by a forward in the current step.
        grad_out: Gradient w.r.t. the forward output (a float for scalar losses).

    Returns:
        Gradient w.r.t. the forward input.

    Raises:
        ShapeError: If grad_out does not match the forward output shape.
    """
    expected = _output_shape(cache)
    if expected is not None:
        grad = np.asarray(grad_out)
        if grad.shape != expected:
            raise ShapeError(f"Upstream gradient shape {grad.shape} != forward output {expected}")
    return cache.backward(grad_out)


def _output_shape(cache: Cache) -> tuple[int, ...] | None:
    match cache:
        case FcCache(layer=layer, x=x):
            return (x.shape[0], layer.out_dim)
        case BnCache(x_hat=x_hat):
            return x_hat.shape
        case EluCache(x=x) | L1Cache(x=x):
            return x.shape
        case _:
            return None


# -- gradient checking ------------------------------------------------------


@dataclass
class GradProblem:
    """A scalar objective over named arrays plus its analytic gradient.

    ``objective`` recomputes the scalar from the current contents of ``arrays``;
    ``analytic`` returns gradients keyed like ``arrays`` at the current point.
    """

    name: str
    arrays: dict[str, np.ndarray]
    objective: Callable[[], float]
    analytic: Callable[[], dict[str, np.ndarray]]


ProblemBuilder = Callable[[np.random.Generator], GradProblem]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    """Norm-based relative error between two gradient arrays."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return diff / max(scale, floor)


def numeric_gradient(problem: GradProblem, name: str, h: float = DEFAULT_H) -> np.ndarray:
    """Central finite differences of the objective w.r.t. one array.

    Raises:
        NumericError: If the objective is non-finite at a perturbed point.
    """
    array = problem.arrays[name]
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = problem.objective()
        flat[i] = original - h
        minus = problem.objective()
        flat[i] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericError(f"{problem.name}: non-finite loss when perturbing {name}[{i}]")
        grad.reshape(-1)[i] = (plus - minus) / (2 * h)
    return grad


def gradcheck(build: ProblemBuilder, seed: int = 0, h: float = DEFAULT_H) -> float:
    """Worst relative error between analytic and finite-difference gradients.

    Arrays whose gradients are tiny compared with the largest one in the problem
    are compared on that problem-wide scale.

    Args:
        build: Builder creating a float64 problem from a generator.
        seed: Seed for the builder's generator.
        h: Perturbation size.

    Returns:
        Maximum relative error over all arrays.
    """
    problem = build(np.random.default_rng(seed))
    for name, array in problem.arrays.items():
        if array.dtype != np.float64:
            raise NumericError(
                f"{problem.name}: gradient checks need float64, {name} is {array.dtype}"
            )
    analytic = {k: np.array(v, dtype=np.float64) for k, v in problem.analytic().items()}
    numeric = {name: numeric_gradient(problem, name, h) for name in problem.arrays}
    scale = max((float(np.linalg.norm(g)) for g in analytic.values()), default=0.0)
    floor = max(1e-4 * scale, 1e-12)
    return max(
        (relative_error(analytic[name], numeric[name], floor) for name in problem.arrays),
        default=0.0,
    )


def corrupt_gradient(build: ProblemBuilder) -> ProblemBuilder:
    """Wrap a builder so its analytic gradient has the wrong sign (checker self-test)."""

    def corrupted(rng: np.random.Generator) -> GradProblem:
        problem = build(rng)
        inner = problem.analytic
        problem.analytic = lambda: {k: -v for k, v in inner().items()}
        return problem

    return corrupted


def projected_problem(
    name: str,
    arrays: dict[str, np.ndarray],
    forward: Callable[[], tuple[Tensor, Cache]],
    grads: Callable[[Tensor], dict[str, np.ndarray]],
    rng: np.random.Generator,
    params: tuple[Param, ...] = (),
) -> GradProblem:
    """Turn a tensor-valued forward into a scalar problem via a random projection.

    Args:
        name: Problem name.
        arrays: Arrays to perturb (parameter values and inputs).
        forward: Runs the forward on the current arrays.
        grads: Given the input gradient, collects gradients keyed like ``arrays``.
        rng: Generator for the projection.
        params: Params whose gradient slots are zeroed before the backward.

    Returns:
        GradProblem with objective ``sum(forward() * R)``.
    """
    out, _ = forward()
    projection = rng.standard_normal(out.shape)

    def objective() -> float:
        y, _ = forward()
        return float(np.sum(y * projection))

    def analytic() -> dict[str, np.ndarray]:
        for param in params:
            param.zero_grad()
        _, cache = forward()
        return grads(backward(cache, projection))

    return GradProblem(name, arrays, objective, analytic)
