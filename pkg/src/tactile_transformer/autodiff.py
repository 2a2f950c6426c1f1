"""Minimal reverse-mode automatic differentiation over numpy arrays.

Everything is float64: training at desk scale is cheap, and central
finite-difference gradient checks stay far inside tolerance without any
mixed-precision care.
"""
from __future__ import annotations

from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (the adjoint of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeezed:
        grad = grad.sum(axis=squeezed, keepdims=True)
    return grad.reshape(shape)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


class Tensor:
    """A numpy array plus the tape needed for reverse-mode differentiation.

    Nodes record their parents and a backward closure only while at least one
    parent requires gradients, so constant subgraphs cost nothing at backward
    time.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # Make numpy defer mixed ndarray/Tensor arithmetic to the reflected
    # operators below instead of building object arrays.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # ------------------------------------------------------------------
    # graph plumbing

    @staticmethod
    def _node(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # own copy: g may be a read-only broadcast view or a buffer the
            # producer reuses, and later consumers add into this array
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def _topo_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Populate ``.grad`` on every upstream tensor that requires it."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        order = self._topo_order()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # introspection helpers

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # ------------------------------------------------------------------
    # arithmetic

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        data = a.data + b.data

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._node(data, (a, b), backward)

    def __radd__(self, other) -> "Tensor":
        return as_tensor(other).__add__(self)

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        data = a.data - b.data

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.data.shape))

        return Tensor._node(data, (a, b), backward)

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other).__sub__(self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        data = a.data * b.data

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._node(data, (a, b), backward)

    def __rmul__(self, other) -> "Tensor":
        return as_tensor(other).__mul__(self)

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        data = a.data / b.data

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._node(data, (a, b), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other).__truediv__(self)

    def __neg__(self) -> "Tensor":
        a = self

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._node(-a.data, (a,), backward)

    def __pow__(self, exponent: float) -> "Tensor":
        p = float(exponent)
        a = self
        data = a.data ** p

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g * p * a.data ** (p - 1.0))

        return Tensor._node(data, (a,), backward)

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ValueError("matmul operands must have at least 2 dimensions")
        if a.data.ndim > 2 and b.data.ndim == 2:
            # collapse leading dims into one GEMM instead of many small ones
            lead = a.data.shape[:-1]
            a2 = a.data.reshape(-1, a.data.shape[-1])
            data = (a2 @ b.data).reshape(*lead, b.data.shape[-1])

            def backward(g: np.ndarray) -> None:
                g2 = g.reshape(-1, g.shape[-1])
                if a.requires_grad:
                    a._accumulate((g2 @ b.data.T).reshape(a.data.shape))
                if b.requires_grad:
                    b._accumulate(a2.T @ g2)

            return Tensor._node(data, (a, b), backward)
        data = a.data @ b.data

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

        return Tensor._node(data, (a, b), backward)

    def __rmatmul__(self, other) -> "Tensor":
        return as_tensor(other).__matmul__(self)

    # ------------------------------------------------------------------
    # shape ops

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        original = a.data.shape
        data = a.data.reshape(shape)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g.reshape(original))

        return Tensor._node(data, (a,), backward)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        a = self
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        data = a.data.transpose(axes)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g.transpose(inverse))

        return Tensor._node(data, (a,), backward)

    def __getitem__(self, key) -> "Tensor":
        a = self
        data = a.data[key]

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.add.at(full, key, g)
                a._accumulate(full)

        return Tensor._node(data, (a,), backward)

    # ------------------------------------------------------------------
    # reductions

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)
        axes = _normalize_axes(axis, a.data.ndim)

        def backward(g: np.ndarray) -> None:
            if not a.requires_grad:
                return
            gg = g
            if not keepdims and axes:
                gg = np.expand_dims(gg, axes)
            a._accumulate(np.broadcast_to(gg, a.data.shape))

        return Tensor._node(data, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        axes = _normalize_axes(axis, a.data.ndim)
        count = int(np.prod([a.data.shape[i] for i in axes])) if axes else 1
        data = a.data.mean(axis=axis, keepdims=keepdims)

        def backward(g: np.ndarray) -> None:
            if not a.requires_grad:
                return
            gg = g / count
            if not keepdims and axes:
                gg = np.expand_dims(gg, axes)
            a._accumulate(np.broadcast_to(gg, a.data.shape))

        return Tensor._node(data, (a,), backward)

    # ------------------------------------------------------------------
    # pointwise nonlinearities

    def exp(self) -> "Tensor":
        a = self
        data = np.exp(a.data)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g * data)

        return Tensor._node(data, (a,), backward)

    def log(self) -> "Tensor":
        a = self
        data = np.log(a.data)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g / a.data)

        return Tensor._node(data, (a,), backward)

    def sigmoid(self) -> "Tensor":
        a = self
        x = a.data
        data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g * data * (1.0 - data))

        return Tensor._node(data, (a,), backward)

    def softmax(self, axis: int = -1) -> "Tensor":
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        data = e / e.sum(axis=axis, keepdims=True)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                inner = (g * data).sum(axis=axis, keepdims=True)
                a._accumulate(data * (g - inner))

        return Tensor._node(data, (a,), backward)

    def gelu(self) -> "Tensor":
        a = self
        x = a.data
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        data = x * cdf

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
                a._accumulate(g * (cdf + x * pdf))

        return Tensor._node(data, (a,), backward)

    def clip(self, lo: float, hi: float) -> "Tensor":
        a = self
        data = np.clip(a.data, lo, hi)

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                inside = (a.data >= lo) & (a.data <= hi)
                a._accumulate(g * inside)

        return Tensor._node(data, (a,), backward)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate tensors along `axis`, splitting gradients back apart."""
    parts = [as_tensor(t) for t in tensors]
    datas = [p.data for p in parts]
    data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> None:
        pieces = np.split(g, cuts, axis=axis)
        for part, piece in zip(parts, pieces):
            if part.requires_grad:
                part._accumulate(piece)

    return Tensor._node(data, tuple(parts), backward)


class ParameterStore:
    """Registry of named trainable arrays.

    Each parameter is registered exactly once; after ``freeze()`` the set and
    shapes are fixed. Iteration order is registration order, which callers
    keep deterministic.
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._frozen = False

    def register(self, name: str, value: np.ndarray) -> Tensor:
        if self._frozen:
            raise ValueError(f"parameter store is frozen, cannot register {name!r}")
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice")
        tensor = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = tensor
        return tensor

    def freeze(self) -> None:
        self._frozen = True

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Current gradients; parameters off the loss path report exact zeros."""
        out: dict[str, np.ndarray] = {}
        for name, tensor in self._params.items():
            grad = tensor.grad
            out[name] = np.zeros_like(tensor.data) if grad is None else grad.copy()
        return out

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        for name, value in arrays.items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"unknown parameter {name!r}")
                continue
            tensor = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != tensor.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: stored {value.shape}, expected {tensor.data.shape}"
                )
            tensor.data = value.copy()
        if strict:
            missing = [n for n in self._params if n not in arrays]
            if missing:
                raise KeyError(f"missing parameters: {missing}")


class Adam:
    """Adam with L2 weight decay folded into the gradient (torch semantics)."""

    def __init__(
        self,
        store: ParameterStore,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        self.store = store
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, param in self.store.items():
            grad = param.grad
            grad = np.zeros_like(param.data) if grad is None else grad
            if self.weight_decay:
                grad = grad + self.weight_decay * param.data
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in self.store.names():
            out[f"m::{name}"] = self._m[name].copy()
            out[f"v::{name}"] = self._v[name].copy()
        return out

    def load_state(self, t: int, arrays: Mapping[str, np.ndarray]) -> None:
        self.t = int(t)
        for name in self.store.names():
            for prefix, slot in (("m", self._m), ("v", self._v)):
                key = f"{prefix}::{name}"
                value = np.asarray(arrays[key], dtype=np.float64)
                if value.shape != slot[name].shape:
                    raise ValueError(f"optimizer slot shape mismatch for {key!r}")
                slot[name] = value.copy()
