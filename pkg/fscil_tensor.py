"""
FSCIL Tensor - Dense float64 tensors with reverse-mode gradients.

Every differentiable operation is a module-level function that builds an
output Tensor holding references to its parents and a closure that pushes
the output gradient back to them. Tensor.backward() walks the graph in
reverse topological order.

Also provides the parameter store shared by the optimizer and the network,
Xavier initialization and the finite-difference gradient checker.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from fscil_base import (
    ConfigurationError,
    ConflictError,
    DegenerateBatchError,
    DegenerateVectorError,
    DimensionError,
    NumericError,
)
from fscil_constants import GRADCHECK_ABS_FLOOR, GRADCHECK_DENOM_FLOOR, NORM_EPS

logger = logging.getLogger(__name__)

Seed = Union[int, Sequence[int]]


# =============================================================================
# TENSOR
# =============================================================================

class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode gradients."""

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        _parents: Tuple['Tensor', ...] = (),
        _op: str = '',
        name: Optional[str] = None,
    ):
        self.value: np.ndarray = np.ascontiguousarray(np.array(value, dtype=np.float64))
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[], None] = lambda: None
        self._op = _op
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError('item() needs a single-element tensor', shape=self.shape)
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the values, detached from the graph."""
        return self.value.copy()

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient."""
        if self.value.size != 1:
            raise DimensionError('backward() needs a scalar output', shape=self.shape)

        topo: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        _accumulate(self, np.ones_like(self.value))
        for node in reversed(topo):
            if node.grad is not None:
                node._backward()

    def __add__(self, other: 'Tensor') -> 'Tensor':
        return add(self, as_tensor(other))

    def __mul__(self, factor: float) -> 'Tensor':
        return scale(self, factor)

    __rmul__ = __mul__

    def __neg__(self) -> 'Tensor':
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f'Tensor(shape={self.shape}, op={self._op or "leaf"}, requires_grad={self.requires_grad})'


def as_tensor(value) -> Tensor:
    """Wrap arrays and numbers as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64)
    else:
        tensor.grad = tensor.grad + grad


def _make(value: np.ndarray, parents: Tuple[Tensor, ...], op: str) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericError(f'non-finite values produced by {op}')
    return Tensor(value, requires_grad=any(p.requires_grad for p in parents), _parents=parents, _op=op)


def _require_2d(x: Tensor, op: str) -> None:
    if x.value.ndim != 2:
        raise DimensionError(f'{op} expects a matrix', shape=x.shape)


# =============================================================================
# DIFFERENTIABLE OPERATIONS
# =============================================================================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m×k and a k×n tensor."""
    a, b = as_tensor(a), as_tensor(b)
    _require_2d(a, 'matmul')
    _require_2d(b, 'matmul')
    if a.shape[1] != b.shape[0]:
        raise DimensionError('inner dimensions do not match', left=a.shape, right=b.shape)
    out = _make(a.value @ b.value, (a, b), 'matmul')

    def _backward():
        _accumulate(a, out.grad @ b.value.T)
        _accumulate(b, a.value.T @ out.grad)
    out._backward = _backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two tensors of the same shape."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError('add expects equal shapes', left=a.shape, right=b.shape)
    out = _make(a.value + b.value, (a, b), 'add')

    def _backward():
        _accumulate(a, out.grad)
        _accumulate(b, out.grad)
    out._backward = _backward
    return out


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-n bias vector to every row of a B×n tensor."""
    x, bias = as_tensor(x), as_tensor(bias)
    _require_2d(x, 'add_bias')
    if bias.value.ndim != 1 or bias.shape[0] != x.shape[1]:
        raise DimensionError('bias length must equal the column count', rows=x.shape, bias=bias.shape)
    out = _make(x.value + bias.value, (x, bias), 'add_bias')

    def _backward():
        _accumulate(x, out.grad)
        _accumulate(bias, out.grad.sum(axis=0))
    out._backward = _backward
    return out


def add_scalar(x: Tensor, constant: float) -> Tensor:
    x = as_tensor(x)
    out = _make(x.value + constant, (x,), 'add_scalar')

    def _backward():
        _accumulate(x, out.grad)
    out._backward = _backward
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    x = as_tensor(x)
    out = _make(x.value * factor, (x,), 'scale')

    def _backward():
        _accumulate(x, out.grad * factor)
    out._backward = _backward
    return out


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    x = as_tensor(x)
    mask = x.value > 0
    out = _make(np.where(mask, x.value, 0.0), (x,), 'relu')

    def _backward():
        _accumulate(x, out.grad * mask)
    out._backward = _backward
    return out


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    _require_2d(x, 'transpose')
    out = _make(x.value.T, (x,), 'transpose')

    def _backward():
        _accumulate(x, out.grad.T)
    out._backward = _backward
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a k×D matrix."""
    rows = [as_tensor(r) for r in rows]
    if not rows:
        raise DimensionError('stack_rows needs at least one row')
    width = rows[0].shape
    if any(r.value.ndim != 1 or r.shape != width for r in rows):
        raise DimensionError('stack_rows expects vectors of one length')
    out = _make(np.stack([r.value for r in rows]), tuple(rows), 'stack_rows')

    def _backward():
        for i, r in enumerate(rows):
            _accumulate(r, out.grad[i])
    out._backward = _backward
    return out


def take_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows by index; repeated indices accumulate on the way back."""
    x = as_tensor(x)
    _require_2d(x, 'take_rows')
    idx = np.asarray(indices, dtype=np.int64)
    out = _make(x.value[idx], (x,), 'take_rows')

    def _backward():
        grad = np.zeros_like(x.value)
        np.add.at(grad, idx, out.grad)
        _accumulate(x, grad)
    out._backward = _backward
    return out


def l2_normalize(v: Tensor) -> Tensor:
    """Scale a vector to unit length."""
    v = as_tensor(v)
    if v.value.ndim != 1:
        raise DimensionError('l2_normalize expects a vector', shape=v.shape)
    norm = float(np.linalg.norm(v.value))
    if norm <= NORM_EPS:
        raise DegenerateVectorError('cannot normalize a near-zero vector', norm=norm)
    unit = v.value / norm
    out = _make(unit, (v,), 'l2_normalize')

    def _backward():
        g = out.grad
        _accumulate(v, (g - unit * np.dot(unit, g)) / norm)
    out._backward = _backward
    return out


def l2_normalize_rows(x: Tensor, floor: Optional[float] = None) -> Tensor:
    """
    Normalize every row of a matrix to unit length.

    Args:
        x: B×n tensor
        floor: When given, rows are divided by max(norm, floor) instead of
            raising on near-zero rows

    Returns:
        Tensor with unit rows
    """
    x = as_tensor(x)
    _require_2d(x, 'l2_normalize_rows')
    norms = np.linalg.norm(x.value, axis=1)
    if floor is None:
        if np.any(norms <= NORM_EPS):
            bad = int(np.argmin(norms))
            raise DegenerateVectorError('cannot normalize a near-zero row', row=bad, norm=float(norms[bad]))
        denom = norms
        clipped = np.zeros_like(norms, dtype=bool)
    else:
        clipped = norms < floor
        denom = np.where(clipped, floor, norms)
    unit = x.value / denom[:, None]
    out = _make(unit, (x,), 'l2_normalize_rows')

    def _backward():
        g = out.grad
        projected = g - unit * np.sum(unit * g, axis=1, keepdims=True)
        grad = np.where(clipped[:, None], g, projected) / denom[:, None]
        _accumulate(x, grad)
    out._backward = _backward
    return out


def log_softmax_rows(values: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Row-wise log-softmax with max subtraction, restricted to masked entries.

    Entries outside the mask are excluded from the normalizer and returned as 0.
    """
    values = np.asarray(values, dtype=np.float64)
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    if np.any(mask.sum(axis=1) == 0):
        raise DegenerateBatchError('a softmax row has no admissible entries')
    masked = np.where(mask, values, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    shifted = masked - row_max
    log_norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    return np.where(mask, shifted - log_norm, 0.0)


def masked_log_softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Differentiable row-wise log-softmax over the entries selected by mask."""
    x = as_tensor(x)
    _require_2d(x, 'masked_log_softmax')
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError('mask shape must match', values=x.shape, mask=mask.shape)
    log_probs = log_softmax_rows(x.value, mask)
    probs = np.where(mask, np.exp(log_probs), 0.0)
    out = _make(log_probs, (x,), 'masked_log_softmax')

    def _backward():
        g = np.where(mask, out.grad, 0.0)
        _accumulate(x, g - probs * g.sum(axis=1, keepdims=True))
    out._backward = _backward
    return out


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar Σ weights·x with constant weights of the same shape."""
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != x.shape:
        raise DimensionError('weights shape must match', values=x.shape, weights=weights.shape)
    out = _make(np.array(np.sum(x.value * weights)), (x,), 'weighted_sum')

    def _backward():
        _accumulate(x, out.grad * weights)
    out._backward = _backward
    return out


def cosine_sim(u, v) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1]."""
    u = u.value if isinstance(u, Tensor) else np.asarray(u, dtype=np.float64)
    v = v.value if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError('cosine_sim expects equal shapes', left=u.shape, right=v.shape)
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu <= NORM_EPS or nv <= NORM_EPS:
        raise DegenerateVectorError('cosine similarity of a near-zero vector', norms=(nu, nv))
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


# =============================================================================
# INITIALIZATION
# =============================================================================

def xavier_uniform_init(shape: Sequence[int], seed: Seed) -> Tensor:
    """
    Draw values uniformly in ±sqrt(6 / (fan_in + fan_out)).

    Args:
        shape: Tensor shape, at least two dimensions
        seed: Integer seed or sequence of integers

    Returns:
        Tensor of the given shape
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise DimensionError('xavier init needs at least two dimensions', shape=shape)
    if any(s <= 0 for s in shape):
        raise DimensionError('shape entries must be positive', shape=shape)
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in, fan_out = shape[0] * receptive, shape[1] * receptive
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-bound, bound, size=shape))


# =============================================================================
# PARAMETER STORE
# =============================================================================

class ParamStore:
    """
    Named parameters with their gradients and momentum buffers.

    Stores created by select() share the parameter tensors with their source
    but own their momentum buffers, so one optimizer per phase keeps its own
    state.
    """

    def __init__(self, params: Optional[Dict[str, Tensor]] = None):
        self.params: Dict[str, Tensor] = {}
        self.momentum: Dict[str, np.ndarray] = {}
        for name, tensor in (params or {}).items():
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise ConflictError('duplicate parameter name', name=name)
        tensor.requires_grad = True
        tensor.name = name
        self.params[name] = tensor
        self.momentum[name] = np.zeros_like(tensor.value)
        return tensor

    def remove(self, name: str) -> None:
        self.params.pop(name)
        self.momentum.pop(name)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> List[str]:
        return list(self.params)

    @property
    def gradients(self) -> Dict[str, Optional[np.ndarray]]:
        return {name: t.grad for name, t in self.params.items()}

    def num_parameters(self) -> int:
        return int(sum(t.value.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def select(self, prefixes: Iterable[str]) -> 'ParamStore':
        """Return a view over the parameters whose names start with any prefix."""
        prefixes = tuple(prefixes)
        return ParamStore({n: t for n, t in self.params.items() if n.startswith(prefixes)})

    def merged(self, other: 'ParamStore') -> 'ParamStore':
        """Return a view over the parameters of both stores."""
        return ParamStore({**self.params, **other.params})

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self.params.items()}

    def fingerprint(self) -> str:
        """SHA-256 over names, shapes and raw bytes; equal iff bitwise equal."""
        digest = hashlib.sha256()
        for name in sorted(self.params):
            value = self.params[name].value
            digest.update(name.encode())
            digest.update(repr(value.shape).encode())
            digest.update(value.tobytes())
        return digest.hexdigest()


# =============================================================================
# GRADIENT CHECK
# =============================================================================

@dataclass
class GradcheckResult:
    """Outcome of a finite-difference comparison."""
    max_relative_error: float
    worst_parameter: Optional[str]
    worst_index: Optional[int]
    analytic: float
    numeric: float
    coordinates_checked: int


def _evaluate_scalar(lossfn: Callable[[], Tensor]) -> float:
    value = lossfn().item()
    if not math.isfinite(value):
        raise NumericError('loss is not finite', value=value)
    return value


def gradcheck_detailed(
    lossfn: Callable[[], Tensor],
    store: ParamStore,
    eps: float = 1e-5,
    sample_fraction: float = 1.0,
    seed: Seed = 0,
    gradient_scale: float = 1.0,
) -> GradcheckResult:
    """
    Compare analytic gradients with central differences on sampled coordinates.

    Args:
        lossfn: Deterministic function returning a scalar Tensor
        store: Parameters to check
        eps: Perturbation size
        sample_fraction: Fraction of coordinates per parameter, at least one each
        seed: Seed for coordinate sampling
        gradient_scale: Multiplier applied to analytic gradients (corruption hook)

    Returns:
        GradcheckResult with the worst relative error and its location
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise ConfigurationError('sample_fraction must be in (0, 1]', value=sample_fraction)
    if len(store) == 0:
        raise ConfigurationError('gradcheck needs at least one parameter')

    store.zero_grad()
    loss = lossfn()
    if not math.isfinite(loss.item()):
        raise NumericError('loss is not finite', value=loss.item())
    loss.backward()
    analytic = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.value)) * gradient_scale
        for name, t in store.params.items()
    }

    rng = np.random.default_rng(seed)
    worst = GradcheckResult(0.0, None, None, 0.0, 0.0, 0)
    for name, tensor in store.params.items():
        flat = tensor.value.reshape(-1)
        count = max(1, math.ceil(sample_fraction * flat.size))
        coords = np.sort(rng.choice(flat.size, size=count, replace=False))
        grad_flat = analytic[name].reshape(-1)
        for i in coords:
            original = flat[i]
            flat[i] = original + eps
            f_plus = _evaluate_scalar(lossfn)
            flat[i] = original - eps
            f_minus = _evaluate_scalar(lossfn)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(grad_flat[i])
            if max(abs(a), abs(numeric)) <= GRADCHECK_ABS_FLOOR:
                error = 0.0
            else:
                error = abs(a - numeric) / max(abs(a), abs(numeric), GRADCHECK_DENOM_FLOOR)
            worst.coordinates_checked += 1
            if error > worst.max_relative_error:
                worst.max_relative_error = error
                worst.worst_parameter = name
                worst.worst_index = int(i)
                worst.analytic = a
                worst.numeric = numeric

    store.zero_grad()
    logger.debug(
        f'gradcheck: {worst.coordinates_checked} coordinates, '
        f'max relative error {worst.max_relative_error:.3e} at {worst.worst_parameter}[{worst.worst_index}]'
    )
    return worst


def gradcheck(
    lossfn: Callable[[], Tensor],
    store: ParamStore,
    eps: float = 1e-5,
    sample_fraction: float = 1.0,
    seed: Seed = 0,
    gradient_scale: float = 1.0,
) -> float:
    """Return the worst relative error between analytic and numeric gradients."""
    return gradcheck_detailed(lossfn, store, eps, sample_fraction, seed, gradient_scale).max_relative_error
