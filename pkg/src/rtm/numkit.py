"""Dense float64 tensor arithmetic, activations, Adam, and gradient checking.

Every array flowing through the model is a plain numpy float64 ndarray.
Trainable weights are wrapped in :class:`Param` (value + accumulated grad);
differentiation is done by explicit forward/backward pairs in the consuming
modules, and validated here by :func:`grad_check`.
"""

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent."""


class OptimizationError(RuntimeError):
    """Raised when an optimizer update cannot proceed (e.g. non-finite grad)."""


class GradCheckError(RuntimeError):
    """Raised when a gradient check cannot be evaluated (non-finite loss)."""


def as_tensor(data):
    """Coerce to a float64 ndarray."""
    return np.asarray(data, dtype=np.float64)


def check_finite(x, context="tensor"):
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise OptimizationError(f"non-finite values in {context}")
    return x


def make_rng(seed):
    """Seeded generator; identical seeds give identical draws on any platform."""
    return np.random.default_rng(int(seed))


def uniform_init(rng, shape, fan_in, fan_out):
    """Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out))."""
    r = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape).astype(np.float64)


@dataclass
class Param:
    """A named trainable tensor with an accumulated gradient of equal shape."""

    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = as_tensor(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad = as_tensor(self.grad)
        if self.grad.shape != self.value.shape:
            raise ShapeError(
                f"param {self.name}: grad shape {self.grad.shape} != "
                f"value shape {self.value.shape}"
            )

    def zero_grad(self):
        self.grad[...] = 0.0


def zero_grads(params):
    for p in params:
        p.zero_grad()


def matmul(a, b):
    """Matrix product with an explicit shape check."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return a @ b


def bilinear(x, slices, y):
    """Stack of bilinear forms: out[i] = x^T slices[i] y.

    ``slices`` holds k square matrices on the leading axis, shape (k, d, d).
    """
    x = as_tensor(x)
    y = as_tensor(y)
    slices = as_tensor(slices)
    if x.ndim != 1 or y.ndim != 1 or slices.ndim != 3:
        raise ShapeError(
            f"bilinear: expected vector, (k,d,d), vector; got "
            f"{x.shape}, {slices.shape}, {y.shape}"
        )
    d = x.shape[0]
    if y.shape[0] != d or slices.shape[1] != d or slices.shape[2] != d:
        raise ShapeError(
            f"bilinear: dimension mismatch x={x.shape} M={slices.shape} y={y.shape}"
        )
    return np.einsum("i,kij,j->k", x, slices, y)


ACTIVATIONS = ("tanh", "sigmoid", "relu")


def activation(x, kind):
    """Elementwise nonlinearity."""
    x = as_tensor(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise ValueError(f"unknown activation kind {kind!r}")


def activation_backward(x, upstream, kind):
    """Exact derivative of :func:`activation` at x, times upstream."""
    x = as_tensor(x)
    upstream = as_tensor(upstream)
    if kind == "tanh":
        t = np.tanh(x)
        return (1.0 - t * t) * upstream
    if kind == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-x))
        return s * (1.0 - s) * upstream
    if kind == "relu":
        return np.where(x > 0.0, upstream, 0.0)
    raise ValueError(f"unknown activation kind {kind!r}")


def softmax(logits):
    """Numerically stable softmax over a 1-d array of logits."""
    logits = as_tensor(logits)
    if logits.size == 0:
        raise ValueError("softmax: empty input")
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / e.sum()


@dataclass
class AdamState:
    """Per-parameter Adam moment estimates and hyper-parameters."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 0.001


def adam_init(param, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
    return AdamState(
        m=np.zeros_like(param.value),
        v=np.zeros_like(param.value),
        step_count=0,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        learning_rate=learning_rate,
    )


def adam_step(param, state):
    """One in-place Adam update with bias correction. Leaves param.grad alone."""
    g = param.grad
    if not np.all(np.isfinite(g)):
        raise OptimizationError(f"non-finite gradient for parameter {param.name!r}")
    if state.m.shape != param.value.shape:
        raise ShapeError(
            f"adam_step: state shape {state.m.shape} != param shape "
            f"{param.value.shape} for {param.name!r}"
        )
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    param.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def l2_penalty(params, lam):
    """lam * sum of squared entries over the given parameter subset."""
    if lam < 0:
        raise ValueError("l2_penalty: lambda must be non-negative")
    return lam * float(sum(np.sum(p.value * p.value) for p in params))


def l2_gradient(params, lam):
    """Accumulate the 2*lam*theta contribution into each param's grad."""
    for p in params:
        p.grad += 2.0 * lam * p.value


def grad_check(loss_fn, params, eps=1e-5):
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` takes no arguments, returns a scalar loss, and fills the
    ``grad`` of every param in ``params`` as a side effect (it must zero and
    recompute them on each call, and must be deterministic).  Returns a dict
    mapping parameter name to its max relative error
    |a - n| / max(|a|, |n|, 1e-8) over all coordinates.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"grad_check: eps {eps} outside [1e-7, 1e-3]")
    base = float(loss_fn())
    if not math.isfinite(base):
        raise GradCheckError(f"loss is non-finite ({base}) at the check point")
    analytic = {p.name: p.grad.copy() for p in params}
    errors = {}
    for p in params:
        flat = p.value.reshape(-1)
        a_flat = analytic[p.name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(loss_fn())
            flat[i] = orig - eps
            f_minus = float(loss_fn())
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise GradCheckError(
                    f"loss became non-finite while perturbing {p.name!r}[{i}]"
                )
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
        errors[p.name] = worst
    # restore the analytic grads clobbered by the perturbed evaluations
    loss_fn()
    return errors
