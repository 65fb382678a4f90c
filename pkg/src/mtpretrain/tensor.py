"""Dense tensors with reverse-mode autodiff, Adam, and the LR schedule.

Everything is numpy under the hood. Training runs in float32; gradient
checking switches the whole stack to float64 via set_default_dtype so
central differences have enough headroom.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32

GELU_COEFF = 0.7978845608028654  # sqrt(2 / pi)


def set_default_dtype(dtype) -> None:
    """Switch the dtype used for newly created tensors ("float32"/"float64")."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported default dtype: {dtype}")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


class ShapeError(ValueError):
    """Raised when an op receives incompatible shapes."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus an optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    # ------------------------------------------------------------- basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None}{tag})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ----------------------------------------------------------- backward
    def backward(self) -> None:
        """Backpropagate from this scalar, accumulating into .grad buffers."""
        if self.data.ndim != 0:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones((), dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ------------------------------------------------------- op plumbing
    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"],
                backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = ""
        needs = any(p.requires_grad or p.parents for p in parents)
        if needs:
            out.requires_grad = True
            out.parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out.parents = ()
            out._backward = None
        return out

    @staticmethod
    def _wrap(other, like: "Tensor") -> "Tensor":
        if isinstance(other, Tensor):
            return other
        t = Tensor.__new__(Tensor)
        t.data = np.asarray(other, dtype=like.data.dtype)
        t.grad = None
        t.requires_grad = False
        t.parents = ()
        t._backward = None
        t.name = ""
        return t

    # ---------------------------------------------------------- arithmetic
    def __add__(self, other):
        other = Tensor._wrap(other, self)
        data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._result(data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._wrap(other, self)
        data = self.data - other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(-g, other.data.shape))

        return Tensor._result(data, (self, other), backward)

    def __rsub__(self, other):
        return Tensor._wrap(other, self) - self

    def __mul__(self, other):
        other = Tensor._wrap(other, self)
        data = self.data * other.data

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._result(data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._wrap(other, self)
        data = self.data / other.data

        def backward(g):
            self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            other._accumulate(_unbroadcast(
                -g * self.data / (other.data * other.data), other.data.shape))

        return Tensor._result(data, (self, other), backward)

    def __rtruediv__(self, other):
        return Tensor._wrap(other, self) / self

    def __neg__(self):
        data = -self.data

        def backward(g):
            self._accumulate(-g)

        return Tensor._result(data, (self,), backward)

    def __pow__(self, exponent):
        c = float(exponent)
        data = self.data ** c

        def backward(g):
            self._accumulate(g * c * self.data ** (c - 1.0))

        return Tensor._result(data, (self,), backward)

    # ------------------------------------------------------ elementwise fns
    def exp(self):
        data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * data)

        return Tensor._result(data, (self,), backward)

    def log(self):
        data = np.log(self.data)

        def backward(g):
            self._accumulate(g / self.data)

        return Tensor._result(data, (self,), backward)

    def tanh(self):
        data = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - data * data))

        return Tensor._result(data, (self,), backward)

    def clamp(self, lo: float, hi: float):
        data = np.clip(self.data, lo, hi)
        inside = (self.data > lo) & (self.data < hi)

        def backward(g):
            self._accumulate(g * inside)

        return Tensor._result(data, (self,), backward)

    # -------------------------------------------------------- shape movers
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        data = self.data.reshape(shape)

        def backward(g):
            self._accumulate(g.reshape(old))

        return Tensor._result(data, (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inverse = np.argsort(axes)
        data = self.data.transpose(axes)

        def backward(g):
            self._accumulate(g.transpose(inverse))

        return Tensor._result(data, (self,), backward)

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, shape).copy())
                return
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, axes)
            self._accumulate(np.broadcast_to(g, shape).copy())

        return Tensor._result(data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def matmul(self, other: "Tensor"):
        other = Tensor._wrap(other, self)
        try:
            data = np.matmul(self.data, other.data)
        except ValueError as exc:
            raise ShapeError(
                f"matmul shapes {self.data.shape} x {other.data.shape}") from exc

        def backward(g):
            a, b = self.data, other.data
            ga = np.matmul(g, np.swapaxes(b, -1, -2))
            gb = np.matmul(np.swapaxes(a, -1, -2), g)
            self._accumulate(_unbroadcast(ga, a.shape))
            other._accumulate(_unbroadcast(gb, b.shape))

        return Tensor._result(data, (self, other), backward)

    __matmul__ = matmul


def constant(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return Tensor._result(data, tensors, backward)


def index_rows(table: Tensor, indices) -> Tensor:
    """Gather rows: out[..., :] = table[indices[...], :] with scatter-add grad."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"index_rows needs integer indices, got {idx.dtype}")
    data = table.data[idx]

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return Tensor._result(data, (table,), backward)


embedding_lookup = index_rows


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood over rows of (N, K) logits.

    The backward pass uses the fused softmax-minus-onehot form rather than
    differentiating through an explicit log-softmax graph.
    """
    t = np.asarray(targets)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects 2-d logits, got {logits.data.shape}")
    if t.ndim != 1 or t.shape[0] != logits.data.shape[0]:
        raise ShapeError(
            f"cross_entropy targets {t.shape} vs logits {logits.data.shape}")
    n = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    denom = expd.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    data = np.asarray(-log_probs[np.arange(n), t].mean(), dtype=logits.data.dtype)

    def backward(g):
        probs = expd / denom
        probs[np.arange(n), t] -= 1.0
        logits._accumulate(probs * (g / n))

    return Tensor._result(data, (logits,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = constant(x.data.max(axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               axis: int = -1, eps: float = 1e-12) -> Tensor:
    mu = x.mean(axis=axis, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gamma + beta


def gelu(x: Tensor) -> Tensor:
    inner = GELU_COEFF * (x + 0.044715 * x * x * x)
    return 0.5 * x * (1.0 + inner.tanh())


def dropout(x: Tensor, p: float, rng: np.random.Generator,
            training: bool = True) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = 1.0 - p
    mask = (rng.random(x.data.shape) < keep).astype(x.data.dtype) / keep
    return x * constant(mask)


def mse(pred: Tensor, target) -> Tensor:
    target = Tensor._wrap(target, pred)
    diff = pred - target
    return (diff * diff).mean()


def normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    sq = (x * x).sum(axis=-1, keepdims=True)
    return x * (sq + eps) ** -0.5


def cosine_similarity(u: Tensor, v: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine of the angle between matching rows (last axis)."""
    return (normalize_rows(u, eps) * normalize_rows(v, eps)).sum(axis=-1)


# ------------------------------------------------------------------ Adam

DECAY_EXEMPT_SUFFIXES = (".bias", ".gamma", ".beta")


def decays(name: str) -> bool:
    return not name.endswith(DECAY_EXEMPT_SUFFIXES)


class Adam:
    """Adam with L2 decay folded into the gradient (skipped for bias/norm)."""

    def __init__(self, params: "dict[str, Tensor]", beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-6,
                 weight_decay: float = 0.01):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and decays(name):
                g = g + self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def lr_at(tokens_seen: float, total_tokens: float, base_lr: float = 1e-4,
          warmup_frac: float = 0.01) -> float:
    """Linear warmup to base_lr over the first warmup_frac of tokens,
    then linear decay to zero at total_tokens."""
    if total_tokens <= 0:
        raise ValueError("total_tokens must be positive")
    if not 0 <= tokens_seen <= total_tokens:
        raise ValueError(
            f"tokens_seen {tokens_seen} outside [0, {total_tokens}]")
    warmup = warmup_frac * total_tokens
    if warmup > 0 and tokens_seen < warmup:
        return base_lr * tokens_seen / warmup
    if total_tokens == warmup:
        return base_lr
    return base_lr * (total_tokens - tokens_seen) / (total_tokens - warmup)


# --------------------------------------------------------- gradient check

@dataclass
class GradCheckResult:
    max_error: float
    worst_param: str
    per_param: "dict[str, float]" = field(default_factory=dict)


def check_gradients(loss_fn: Callable[[], Tensor], params: "dict[str, Tensor]",
                    eps: float = 1e-5, max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    The relative error uses a 1e-4 floor in the denominator so near-zero
    gradient pairs are judged on absolute terms. Requires float64 tensors;
    float32 does not give the differences enough precision to mean anything.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ValueError(
                f"gradient check needs float64 parameters ({name} is "
                f"{p.data.dtype}); call set_default_dtype('float64') first")
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}
    if rng is None:
        rng = np.random.default_rng(0)
    per_param = {}
    worst = ("", 0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
        else:
            idx = np.arange(n)
        worst_here = 0.0
        for i in idx:
            saved = flat[i]
            flat[i] = saved + eps
            up = loss_fn().item()
            flat[i] = saved - eps
            down = loss_fn().item()
            flat[i] = saved
            numeric = (up - down) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            worst_here = max(worst_here, err)
        per_param[name] = worst_here
        if worst_here >= worst[1]:
            worst = (name, worst_here)
    return GradCheckResult(max_error=worst[1], worst_param=worst[0],
                           per_param=per_param)


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"MTPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    train_state: dict
    params: "dict[str, np.ndarray]"
    adam_m: "Optional[dict[str, np.ndarray]]" = None
    adam_v: "Optional[dict[str, np.ndarray]]" = None
    adam_t: int = 0


def save_checkpoint(path, params: "dict[str, Tensor]", config: dict,
                    train_state: dict, optimizer: Optional[Adam] = None) -> None:
    manifest = [{"name": k, "shape": list(p.data.shape)}
                for k, p in params.items()]
    header = {
        "config": config,
        "train_state": dict(train_state),
        "params": manifest,
        "has_optimizer": optimizer is not None,
        "adam_t": optimizer.t if optimizer is not None else 0,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for m in manifest:
            fh.write(np.ascontiguousarray(
                params[m["name"]].data, dtype="<f4").tobytes())
        if optimizer is not None:
            for m in manifest:
                fh.write(np.ascontiguousarray(
                    optimizer.m[m["name"]], dtype="<f4").tobytes())
            for m in manifest:
                fh.write(np.ascontiguousarray(
                    optimizer.v[m["name"]], dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<IQ", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 4 + 12
    header = json.loads(raw[off:off + header_len].decode("utf-8"))
    off += header_len

    def read_block(shape):
        nonlocal off
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off)
        off += 4 * n
        return arr.reshape(shape).copy()

    params = {}
    for m in header["params"]:
        params[m["name"]] = read_block(m["shape"])
    adam_m = adam_v = None
    if header.get("has_optimizer"):
        adam_m = {m["name"]: read_block(m["shape"]) for m in header["params"]}
        adam_v = {m["name"]: read_block(m["shape"]) for m in header["params"]}
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return Checkpoint(config=header["config"], train_state=header["train_state"],
                      params=params, adam_m=adam_m, adam_v=adam_v,
                      adam_t=int(header.get("adam_t", 0)))
