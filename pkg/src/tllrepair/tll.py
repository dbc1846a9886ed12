"""Two-Level Lattice (TLL) networks.

A scalar TLL computes

    y(x) = max_{j=1..M}  min_{i in s_j}  (W x + b)_i

where the ``N`` rows of ``(W, b)`` are the local linear functions and the
``M`` selector sets ``s_j`` group them into min terms.  A multi-output
network stacks ``m`` scalar TLLs sharing ``n``, ``N`` and ``M``.

Indices are zero-based throughout the Python API.  The JSON format uses
one-based selector indices; conversion happens in :meth:`TllNetwork.from_dict`
and :meth:`TllNetwork.to_dict`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError

__all__ = [
    "ScalarTll",
    "TllNetwork",
    "ReluLayer",
    "ReluLayerStack",
    "ActivationPattern",
    "linear_values",
    "eval_lattice",
    "eval_lattice_batch",
    "lower_to_relu",
    "active_indices",
    "check_activation",
    "random_tll",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarTll:
    """One output of a TLL network.

    Parameters
    ----------
    W : (N, n) array
        Linear-layer weights; row ``i`` is the local linear function ``i``.
    b : (N,) array
        Linear-layer biases.
    selectors : sequence of sequences of int
        ``M`` non-empty, zero-based index sets into the rows of ``W``.
    """

    W: np.ndarray
    b: np.ndarray
    selectors: tuple

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if W.ndim != 2 or W.shape[0] == 0 or W.shape[1] == 0:
            raise InputError(f"W must be a non-empty 2-D array, got shape {W.shape}")
        if b.shape != (W.shape[0],):
            raise InputError(f"b must have {W.shape[0]} entries, got shape {b.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InputError("weights must be finite")
        N = W.shape[0]
        sels = []
        for s in self.selectors:
            idx = tuple(sorted({int(i) for i in s}))
            if not idx:
                raise InputError("selector sets must be non-empty")
            if idx[0] < 0 or idx[-1] >= N:
                raise InputError(f"selector index out of range 0..{N - 1}: {idx}")
            sels.append(idx)
        if not sels:
            raise InputError("at least one selector set is required")
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "b", _frozen(b))
        object.__setattr__(self, "selectors", tuple(sels))

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def N(self) -> int:
        return self.W.shape[0]

    @property
    def M(self) -> int:
        return len(self.selectors)

    def with_layer(self, W, b) -> "ScalarTll":
        """Copy with a new linear layer and the same selector sets."""
        return ScalarTll(W, b, self.selectors)

    def __eq__(self, other):
        if not isinstance(other, ScalarTll):
            return NotImplemented
        return (
            self.selectors == other.selectors
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.b, other.b)
        )


@dataclass(frozen=True, eq=False)
class TllNetwork:
    """Multi-output TLL; every output shares ``n``, ``N`` and ``M``."""

    outputs: tuple

    def __post_init__(self):
        outs = tuple(self.outputs)
        if not outs:
            raise InputError("a network needs at least one output")
        for o in outs:
            if not isinstance(o, ScalarTll):
                raise InputError("outputs must be ScalarTll instances")
        shapes = {(o.n, o.N, o.M) for o in outs}
        if len(shapes) != 1:
            raise InputError(f"outputs disagree on (n, N, M): {sorted(shapes)}")
        object.__setattr__(self, "outputs", outs)

    @property
    def n(self) -> int:
        return self.outputs[0].n

    @property
    def m(self) -> int:
        return len(self.outputs)

    @property
    def N(self) -> int:
        return self.outputs[0].N

    @property
    def M(self) -> int:
        return self.outputs[0].M

    def __eq__(self, other):
        if not isinstance(other, TllNetwork):
            return NotImplemented
        return self.outputs == other.outputs

    def same_architecture(self, other: "TllNetwork") -> bool:
        return (self.n, self.m, self.N, self.M) == (other.n, other.m, other.N, other.M)

    def same_selectors(self, other: "TllNetwork") -> bool:
        return self.same_architecture(other) and all(
            a.selectors == b.selectors for a, b in zip(self.outputs, other.outputs)
        )

    def set_linear_layers(self, Ws, bs) -> "TllNetwork":
        """Return a network with replaced linear layers and the same selectors."""
        if len(Ws) != self.m or len(bs) != self.m:
            raise InputError("need one (W, b) pair per output")
        new = TllNetwork(tuple(o.with_layer(W, b) for o, W, b in zip(self.outputs, Ws, bs)))
        if not new.same_architecture(self):
            raise InputError("replacement layers change the architecture")
        return new

    def __call__(self, x):
        return eval_lattice(self, x)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "N": self.N,
            "M": self.M,
            "outputs": [
                {
                    "W": o.W.tolist(),
                    "b": o.b.tolist(),
                    "selectors": [[i + 1 for i in s] for s in o.selectors],
                }
                for o in self.outputs
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TllNetwork":
        try:
            outs = []
            for o in d["outputs"]:
                sels = []
                for s in o["selectors"]:
                    if any(int(i) != i for i in s):
                        raise InputError("selector indices must be integers")
                    if any(int(i) < 1 for i in s):
                        raise InputError("selector indices are 1-based")
                    sels.append([int(i) - 1 for i in s])
                outs.append(ScalarTll(np.asarray(o["W"], dtype=float), np.asarray(o["b"], dtype=float), sels))
            net = cls(tuple(outs))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed network description: {exc}") from exc
        except ValueError as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed network description: {exc}") from exc
        for key, val in (("n", net.n), ("m", net.m), ("N", net.N), ("M", net.M)):
            if key in d and int(d[key]) != val:
                raise InputError(f"declared {key}={d[key]} does not match data ({val})")
        return net

    def save(self, path):
        # repr-exact floats, so a reload is bit-identical
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "TllNetwork":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read network file {path}: {exc}") from exc
        return cls.from_dict(d)


@dataclass(frozen=True)
class ActivationPattern:
    """Active row ``act[k]`` and selector group ``sel[k]`` for each output ``k`` (zero-based)."""

    act: tuple
    sel: tuple

    def to_dict(self) -> dict:
        return {"act": [a + 1 for a in self.act], "sel": [s + 1 for s in self.sel]}

    @classmethod
    def from_dict(cls, d) -> "ActivationPattern":
        return cls(tuple(int(a) - 1 for a in d["act"]), tuple(int(s) - 1 for s in d["sel"]))


# -- evaluation --------------------------------------------------------------


def linear_values(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Row values ``W x + b`` for a batch of points, shape ``(P, N)``.

    Evaluated as an elementwise product and row sum rather than a BLAS
    product, so each entry is independent of the batch it sits in.  The
    activation routines rely on this to get bitwise agreement with
    :func:`eval_lattice`.
    """
    X = np.asarray(X, dtype=float)
    return np.sum(W[None, :, :] * X[:, None, :], axis=2) + b


def _as_batch(net: TllNetwork, x) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.n:
        raise InputError(f"expected points of dimension {net.n}, got shape {np.shape(x)}")
    return X


def eval_lattice_batch(net: TllNetwork, X) -> np.ndarray:
    """Evaluate the network on a ``(P, n)`` batch; returns ``(P, m)``."""
    X = _as_batch(net, X)
    out = np.empty((X.shape[0], net.m))
    for k, o in enumerate(net.outputs):
        vals = linear_values(o.W, o.b, X)
        mins = np.stack([vals[:, list(s)].min(axis=1) for s in o.selectors], axis=1)
        out[:, k] = mins.max(axis=1)
    return out


def eval_lattice(net: TllNetwork, x) -> np.ndarray:
    """Evaluate the network at a single point ``x``; returns shape ``(m,)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InputError("eval_lattice takes a single point; use eval_lattice_batch")
    return eval_lattice_batch(net, x)[0]


# -- lowering to ReLU layers -------------------------------------------------


@dataclass(frozen=True)
class ReluLayer:
    W: np.ndarray
    b: np.ndarray
    relu: bool

    @property
    def shape(self):
        return self.W.shape


@dataclass(frozen=True)
class ReluLayerStack:
    """Composition of affine layers, each optionally followed by ``max(., 0)``."""

    layers: tuple

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[0] != b.W.shape[1]:
                raise InputError("layers are not composable")

    @property
    def architecture(self):
        return tuple((L.W.shape[1], L.W.shape[0]) for L in self.layers)

    def evaluate(self, x) -> np.ndarray:
        """Evaluate at a point ``(n,)`` or batch ``(P, n)``."""
        z = np.asarray(x, dtype=float)
        single = z.ndim == 1
        Z = z[None, :] if single else z
        for L in self.layers:
            Z = Z @ L.W.T + L.b
            if L.relu:
                Z = np.maximum(Z, 0.0)
        return Z[0] if single else Z

    __call__ = evaluate


def _reduce_level(groups, op):
    """One tree level: pair up the entries of every group.

    ``groups`` lists, for each group, the positions of its entries in the
    current value vector.  Returns the hidden-layer rows (as coefficient
    dicts over positions), the output combination and the new groups.
    """
    hidden = []  # each: dict position -> coefficient
    out_rows = []  # each: dict hidden index -> coefficient
    new_groups = []
    for g in groups:
        ng = []
        for a, b in zip(g[0::2], g[1::2]):
            h0 = len(hidden)
            if op == "min":
                # min(a, b) = relu(a) - relu(-a) - relu(a - b)
                hidden += [{a: 1.0}, {a: -1.0}, {a: 1.0, b: -1.0}]
                out_rows.append({h0: 1.0, h0 + 1: -1.0, h0 + 2: -1.0})
            else:
                # max(a, b) = relu(b) - relu(-b) + relu(a - b)
                hidden += [{b: 1.0}, {b: -1.0}, {a: 1.0, b: -1.0}]
                out_rows.append({h0: 1.0, h0 + 1: -1.0, h0 + 2: 1.0})
            ng.append(len(out_rows) - 1)
        if len(g) % 2:
            c = g[-1]
            h0 = len(hidden)
            hidden += [{c: 1.0}, {c: -1.0}]
            out_rows.append({h0: 1.0, h0 + 1: -1.0})
            ng.append(len(out_rows) - 1)
        new_groups.append(ng)
    return hidden, out_rows, new_groups


def _dense(rows, width):
    M = np.zeros((len(rows), width))
    for r, row in enumerate(rows):
        for c, v in row.items():
            M[r, c] += v
    return M


def lower_to_relu(net_out: ScalarTll) -> ReluLayerStack:
    """Build an explicit ReLU network computing the same function as ``net_out``.

    The linear layer feeds selector matrices, each group's min is reduced
    by a binary tree of two-input min gadgets, and the group minima are
    reduced by a tree of max gadgets.  Linear maps between consecutive
    ReLU layers are folded into the following layer.
    """
    o = net_out
    # current value vector v = A z + c, z being the previous layer's output
    sel_rows = [i for s in o.selectors for i in s]
    A = o.W[sel_rows]
    c = o.b[sel_rows]
    groups, pos = [], 0
    for s in o.selectors:
        groups.append(list(range(pos, pos + len(s))))
        pos += len(s)

    layers = []
    for op in ("min", "max"):
        while any(len(g) > 1 for g in groups):
            hidden, out_rows, groups = _reduce_level(groups, op)
            H = _dense(hidden, A.shape[0])
            layers.append(ReluLayer(_frozen(H @ A), _frozen(H @ c), True))
            A = _dense(out_rows, len(hidden))
            c = np.zeros(A.shape[0])
        if op == "min":
            groups = [[g[0] for g in groups]]
    layers.append(ReluLayer(_frozen(A), _frozen(c), False))
    return ReluLayerStack(tuple(layers))


# -- activation analysis -----------------------------------------------------


def _pattern_from_values(o: ScalarTll, v: np.ndarray):
    mu = []
    for s in o.selectors:
        # s is sorted, so argmin returns the lowest index among ties
        mu.append(s[int(np.argmin(v[list(s)]))])
    best = max(v[i] for i in mu)
    act = min(i for i in mu if v[i] == best)
    sel = next(j for j, i in enumerate(mu) if i == act)
    return act, sel


def active_indices(net: TllNetwork, x) -> ActivationPattern:
    """Active local linear function and selector group at ``x``.

    Within each group the minimizing row is taken (lowest index on ties),
    then the row with the largest value among those minimizers (again
    lowest index on ties); ``sel`` is the first group whose minimizer is
    that row.
    """
    X = _as_batch(net, x)
    if X.shape[0] != 1:
        raise InputError("active_indices takes a single point")
    acts, sels = [], []
    for o in net.outputs:
        v = linear_values(o.W, o.b, X)[0]
        a, s = _pattern_from_values(o, v)
        acts.append(a)
        sels.append(s)
    return ActivationPattern(tuple(acts), tuple(sels))


def check_activation(net: TllNetwork, x, pattern: ActivationPattern, tol: float = 0.0) -> bool:
    """Pointwise activation conditions at ``x``.

    For every output: ``act`` belongs to group ``sel`` and is a minimum of
    that group, and every other group contains some row no larger than
    ``act``.  ``tol`` loosens both comparisons.
    """
    X = _as_batch(net, x)
    if len(pattern.act) != net.m or len(pattern.sel) != net.m:
        raise InputError("pattern length does not match the number of outputs")
    for o, a, s in zip(net.outputs, pattern.act, pattern.sel):
        if not (0 <= a < o.N and 0 <= s < o.M):
            raise InputError("pattern index out of range")
        if a not in o.selectors[s]:
            return False
        v = linear_values(o.W, o.b, X)[0]
        va = v[a]
        if np.any(va > v[list(o.selectors[s])] + tol):
            return False
        for j, g in enumerate(o.selectors):
            if j != s and not np.any(v[list(g)] <= va + tol):
                return False
    return True


def random_tll(rng: np.random.Generator, n: int, N: int, M: int, m: int = 1, scale: float = 1.0) -> TllNetwork:
    """Random network with Gaussian weights and random non-empty selector sets."""
    outs = []
    for _ in range(m):
        W = scale * rng.standard_normal((N, n))
        b = scale * rng.standard_normal(N)
        sels = []
        for _ in range(M):
            k = int(rng.integers(1, N + 1))
            sels.append(sorted(rng.choice(N, size=k, replace=False).tolist()))
        outs.append(ScalarTll(W, b, sels))
    return TllNetwork(tuple(outs))
