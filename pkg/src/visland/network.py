"""Feed-forward ReLU networks: representation, evaluation, composition and I/O.

A network is an ordered tuple of affine layers, each followed by either a
ReLU or the identity.  Weight matrices may be dense ``ndarray`` objects or
``scipy.sparse`` CSR matrices; the hand-built perception network is almost
entirely zeros and would not fit in memory as dense blocks at q=16.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)

FORMAT_NAME = "visland-relu-net"
FORMAT_VERSION = 1


class NetworkError(ValueError):
    """Contract violation: bad dimensions, non-finite parameters, etc."""


class WeightFileError(NetworkError):
    """Malformed weight file.  ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


def _freeze(a):
    if sp.issparse(a):
        a = sp.csr_matrix(a, dtype=np.float64)
        a.sum_duplicates()
        a.sort_indices()
        for arr in (a.data, a.indices, a.indptr):
            arr.flags.writeable = False
        return a
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray | sp.csr_matrix
    bias: np.ndarray
    activation: str = RELU
    _abs_weight: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        w = _freeze(self.weight)
        b = _freeze(np.atleast_1d(np.asarray(self.bias, dtype=np.float64)))
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        if self.activation not in _ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        if w.ndim != 2:
            raise NetworkError("weight must be a matrix")
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise NetworkError(
                f"bias length {b.shape[0]} does not match weight rows {w.shape[0]}")
        data = w.data if sp.issparse(w) else w
        if not (np.all(np.isfinite(data)) and np.all(np.isfinite(b))):
            raise NetworkError("weights and biases must be finite")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    @property
    def is_relu(self):
        return self.activation == RELU

    @property
    def is_sparse(self):
        return sp.issparse(self.weight)

    @property
    def abs_weight(self):
        # cached |W|, used by interval propagation
        if self._abs_weight is None:
            aw = abs(self.weight) if self.is_sparse else np.abs(self.weight)
            object.__setattr__(self, "_abs_weight", aw)
        return self._abs_weight

    def affine(self, x):
        """Pre-activation values for a single vector or a (batch, in_dim) array."""
        if x.ndim == 1:
            return self.weight @ x + self.bias
        return np.asarray(self.weight @ x.T).T + self.bias

    def dense_weight(self):
        return self.weight.toarray() if self.is_sparse else np.array(self.weight)

    def equals(self, other):
        if self.activation != other.activation or self.weight.shape != other.weight.shape:
            return False
        if self.is_sparse != other.is_sparse:
            return False
        if self.is_sparse:
            same_w = (np.array_equal(self.weight.indptr, other.weight.indptr)
                      and np.array_equal(self.weight.indices, other.weight.indices)
                      and np.array_equal(self.weight.data, other.weight.data))
        else:
            same_w = np.array_equal(self.weight, other.weight)
        return same_w and np.array_equal(self.bias, other.bias)


@dataclass(frozen=True, eq=False)
class LayeredReluNetwork:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        validate_chain(layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def relu_count(self):
        return sum(layer.out_dim for layer in self.layers if layer.is_relu)

    def widths(self):
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def __call__(self, x):
        return evaluate(self, x)

    def equals(self, other):
        return (len(self.layers) == len(other.layers)
                and all(a.equals(b) for a, b in zip(self.layers, other.layers)))


def validate_chain(layers):
    """Check that consecutive layer widths agree."""
    if not layers:
        raise NetworkError("a network needs at least one layer")
    for k in range(1, len(layers)):
        if layers[k - 1].out_dim != layers[k].in_dim:
            raise NetworkError(
                f"layer {k - 1} has {layers[k - 1].out_dim} outputs but layer {k} "
                f"expects {layers[k].in_dim} inputs")


def evaluate(net, x):
    """Forward pass.  ``x`` is a vector or a (batch, input_dim) array."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim or x.ndim not in (1, 2):
        raise NetworkError(f"expected input of width {net.input_dim}, got shape {x.shape}")
    for layer in net.layers:
        x = layer.affine(x)
        if layer.is_relu:
            x = np.maximum(x, 0.0)
    return x


def identity_network(dim):
    return LayeredReluNetwork((Layer(np.eye(dim), np.zeros(dim), IDENTITY),))


def _fuse(first, second):
    """Fold an identity layer into the affine part of the layer after it."""
    assert first.activation == IDENTITY
    w2 = second.weight
    w = w2 @ first.weight
    b = w2 @ first.bias + second.bias
    if sp.issparse(w) and not (sp.issparse(first.weight) or sp.issparse(w2)):
        w = w.toarray()
    return Layer(w, np.asarray(b).ravel(), second.activation)


def compose(first, second, fuse=False):
    """Network computing ``second(first(x))``.

    Layers are concatenated.  With ``fuse=True`` an identity output layer of
    ``first`` is folded into the input layer of ``second``; a ReLU boundary is
    never fused.
    """
    if first.output_dim != second.input_dim:
        raise NetworkError(
            f"cannot compose: first has {first.output_dim} outputs, second expects "
            f"{second.input_dim} inputs")
    if fuse and first.layers[-1].activation == IDENTITY:
        middle = _fuse(first.layers[-1], second.layers[0])
        return LayeredReluNetwork(first.layers[:-1] + (middle,) + second.layers[1:])
    return LayeredReluNetwork(first.layers + second.layers)


def pad_identity(net, n_layers):
    """Append identity layers until ``net`` has ``n_layers`` layers."""
    extra = n_layers - len(net.layers)
    if extra < 0:
        raise NetworkError("network already deeper than requested")
    d = net.output_dim
    pad = tuple(Layer(sp.identity(d, format="csr"), np.zeros(d), IDENTITY) for _ in range(extra))
    return LayeredReluNetwork(net.layers + pad)


def stack_parallel(nets, sparse=None):
    """Block-diagonal stacking: inputs and outputs are concatenated.

    Shallower networks are padded with identity layers, which is exact.  All
    networks must use the same activation at each depth.
    """
    nets = list(nets)
    if not nets:
        raise NetworkError("stack_parallel needs at least one network")
    depth = max(len(n.layers) for n in nets)
    nets = [pad_identity(n, depth) for n in nets]
    if sparse is None:
        sparse = len(nets) > 4 or any(layer.is_sparse for n in nets for layer in n.layers)
    layers = []
    for k in range(depth):
        acts = {n.layers[k].activation for n in nets}
        if len(acts) != 1:
            # mixed activations at the same depth cannot share a layer
            raise NetworkError(f"networks disagree on activation at depth {k}")
        blocks = [n.layers[k].weight for n in nets]
        if sparse:
            w = sp.block_diag(blocks, format="csr")
        else:
            w = _dense_block_diag(blocks)
        b = np.concatenate([n.layers[k].bias for n in nets])
        layers.append(Layer(w, b, acts.pop()))
    return LayeredReluNetwork(tuple(layers))


def _dense_block_diag(blocks):
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        b = b.toarray() if sp.issparse(b) else b
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


# ---------------------------------------------------------------------------
# weight files


def dumps(net):
    """Serialize to the line-oriented JSON weight format (see docs/formats.md)."""
    lines = ["{",
             f'"format": "{FORMAT_NAME}",',
             f'"version": {FORMAT_VERSION},',
             f'"input_dim": {net.input_dim},',
             '"layers": [']
    for k, layer in enumerate(net.layers):
        rec = {"activation": layer.activation,
               "rows": layer.out_dim,
               "cols": layer.in_dim}
        if layer.is_sparse:
            w = layer.weight
            rows = np.repeat(np.arange(w.shape[0]), np.diff(w.indptr))
            rec["entries"] = [[int(i), int(j), float(v)]
                              for i, j, v in zip(rows, w.indices, w.data)]
        else:
            rec["weights"] = [float(v) for v in layer.weight.ravel(order="C")]
        rec["bias"] = [float(v) for v in layer.bias]
        sep = "," if k < len(net.layers) - 1 else ""
        lines.append(json.dumps(rec, separators=(",", ":"), allow_nan=False) + sep)
    lines.append("]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def _line_of(text, needle_index):
    return text.count("\n", 0, needle_index) + 1


def loads(text):
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise WeightFileError(exc.msg, exc.lineno) from None
    except ValueError as exc:
        # locate the offending token for the error message
        idx = min((text.find(tok) for tok in ("NaN", "Infinity") if tok in text), default=-1)
        raise WeightFileError(str(exc), _line_of(text, idx) if idx >= 0 else None) from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise WeightFileError(f"not a {FORMAT_NAME} document", 1)
    if doc.get("version") != FORMAT_VERSION:
        raise WeightFileError(f"unsupported version {doc.get('version')!r}", 1)
    layer_line0 = _line_of(text, text.find('"layers"')) + 1
    layers = []
    for k, rec in enumerate(doc.get("layers", [])):
        lineno = layer_line0 + k
        try:
            rows, cols = int(rec["rows"]), int(rec["cols"])
            bias = np.asarray(rec["bias"], dtype=np.float64)
            if "entries" in rec:
                ent = np.asarray(rec["entries"], dtype=np.float64).reshape(-1, 3)
                w = sp.csr_matrix((ent[:, 2], (ent[:, 0].astype(int), ent[:, 1].astype(int))),
                                  shape=(rows, cols))
            else:
                flat = np.asarray(rec["weights"], dtype=np.float64)
                if flat.size != rows * cols:
                    raise NetworkError(
                        f"expected {rows * cols} weights, found {flat.size}")
                w = flat.reshape(rows, cols)
            layers.append(Layer(w, bias, rec["activation"]))
        except (KeyError, TypeError) as exc:
            raise WeightFileError(f"layer {k}: missing or malformed field {exc}", lineno) from None
        except NetworkError as exc:
            raise WeightFileError(f"layer {k}: {exc}", lineno) from None
    try:
        net = LayeredReluNetwork(tuple(layers))
    except NetworkError as exc:
        raise WeightFileError(str(exc)) from None
    if net.input_dim != doc.get("input_dim"):
        raise WeightFileError(
            f"input_dim {doc.get('input_dim')} does not match first layer ({net.input_dim})")
    return net


def save_weights(net, path):
    Path(path).write_text(dumps(net))


def load_weights(path):
    return loads(Path(path).read_text())
