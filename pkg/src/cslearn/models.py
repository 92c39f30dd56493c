"""Finite-dimensional parameterizations f(theta, x) with manual backprop.

Parameter layout for the MLP: W1 (h x d, row-major), b1 (h), w2 (h), b2.
"""

from __future__ import annotations

import enum
import itertools
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import DomainError


class Activation(enum.Enum):
    SIGMOID = "sigmoid"
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


def sigmoid(a):
    # Split by sign so exp never overflows.
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _act(kind: Activation, a):
    if kind is Activation.SIGMOID:
        return sigmoid(a)
    if kind is Activation.RELU:
        return np.maximum(a, 0.0)
    if kind is Activation.TANH:
        return np.tanh(a)
    return a


def _act_deriv(kind: Activation, a, out):
    """Derivative given pre-activation ``a`` and activation ``out``."""
    if kind is Activation.SIGMOID:
        return out * (1.0 - out)
    if kind is Activation.RELU:
        return (a > 0).astype(float)
    if kind is Activation.TANH:
        return 1.0 - out ** 2
    return np.ones_like(a)


@dataclass(frozen=True)
class LinearKind:
    bias: bool = True

    def num_params(self, d: int) -> int:
        return d + int(self.bias)


@dataclass(frozen=True)
class MLPKind:
    hidden: int = 256
    activation: Activation = Activation.SIGMOID
    output: Activation = Activation.SIGMOID

    def __post_init__(self):
        if self.hidden < 1:
            raise DomainError("hidden width must be positive")
        if self.output not in (Activation.IDENTITY, Activation.SIGMOID):
            raise DomainError("MLP output must be identity or sigmoid")
        if self.activation is Activation.IDENTITY:
            raise DomainError("MLP hidden activation must be sigmoid, relu or tanh")

    def num_params(self, d: int) -> int:
        return self.hidden * (d + 1) + self.hidden + 1


@dataclass(frozen=True)
class Unbounded:
    def project(self, theta):
        return theta


@dataclass(frozen=True)
class L2Ball:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("ball radius must be positive")

    def project(self, theta):
        norm = np.linalg.norm(theta)
        if norm <= self.radius:
            return theta
        return theta * (self.radius / norm)


@dataclass(frozen=True)
class Box:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise DomainError("box needs lo <= hi")

    def project(self, theta):
        return np.clip(theta, self.lo, self.hi)


_versions = itertools.count(1)


@dataclass(eq=False)
class Parameterization:
    """The map theta -> f(theta, .) together with its admissible set H.

    ``params`` must only be replaced through ``set_params``, which bumps the
    version so traces from older parameters are rejected by ``backward``.
    """

    kind: object
    input_dim: int
    params: np.ndarray
    admissible: object = field(default_factory=Unbounded)
    version: int = field(default=0, init=False)

    def __post_init__(self):
        if self.input_dim < 1:
            raise DomainError("input dimension must be positive")
        self.set_params(self.params)

    @property
    def num_params(self) -> int:
        return self.kind.num_params(self.input_dim)

    def set_params(self, theta) -> None:
        theta = np.array(theta, dtype=float).reshape(-1)
        if theta.size != self.num_params:
            raise DomainError(f"expected {self.num_params} parameters, got {theta.size}")
        theta.setflags(write=False)
        self.params = theta
        self.version = next(_versions)

    def copy(self) -> "Parameterization":
        return Parameterization(self.kind, self.input_dim, self.params.copy(), self.admissible)

    def unpack(self):
        """Split theta into layer arrays (views)."""
        d, th = self.input_dim, self.params
        if isinstance(self.kind, LinearKind):
            return (th[:d], th[d] if self.kind.bias else 0.0)
        h = self.kind.hidden
        W1 = th[:h * d].reshape(h, d)
        b1 = th[h * d:h * d + h]
        w2 = th[h * d + h:h * d + 2 * h]
        b2 = th[-1]
        return W1, b1, w2, b2


@dataclass(frozen=True)
class ForwardTrace:
    version: int
    inputs: np.ndarray            # n x d
    hidden_pre: Optional[np.ndarray] = None    # n x h
    hidden_out: Optional[np.ndarray] = None    # n x h
    output: Optional[np.ndarray] = None        # n, after the output activation
    single: bool = False


def forward(model: Parameterization, features):
    """Evaluate f(theta, x) for one feature vector or an n x d batch.

    Returns ``(prediction, trace)``; prediction is a float for a single
    vector and an array of length n for a batch.
    """
    X = np.asarray(features, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DomainError(f"expected features of dimension {model.input_dim}, got shape {np.shape(features)}")
    if isinstance(model.kind, LinearKind):
        w, b = model.unpack()
        out = X @ w + b
        trace = ForwardTrace(model.version, X, output=out, single=single)
    else:
        W1, b1, w2, b2 = model.unpack()
        pre = X @ W1.T + b1
        hid = _act(model.kind.activation, pre)
        out = _act(model.kind.output, hid @ w2 + b2)
        trace = ForwardTrace(model.version, X, pre, hid, out, single)
    return (float(out[0]) if single else out), trace


def backward(model: Parameterization, trace: ForwardTrace, upstream) -> np.ndarray:
    """Return sum_n upstream_n * d f(theta, x_n) / d theta (length p)."""
    if trace.version != model.version:
        raise DomainError("stale trace: parameters changed since forward")
    g = np.asarray(upstream, dtype=float).reshape(-1)
    X = trace.inputs
    if g.size == 1 and X.shape[0] != 1:
        g = np.full(X.shape[0], float(g[0]))
    if g.size != X.shape[0]:
        raise DomainError("upstream must have one entry per traced sample")
    if isinstance(model.kind, LinearKind):
        gw = g @ X
        return np.concatenate([gw, [g.sum()]]) if model.kind.bias else gw
    W1, b1, w2, b2 = model.unpack()
    out = trace.output
    # Output layer: out = act_o(hid @ w2 + b2).
    go = g * out * (1.0 - out) if model.kind.output is Activation.SIGMOID else g
    gw2 = go @ trace.hidden_out
    gb2 = go.sum()
    gh = np.outer(go, w2) * _act_deriv(model.kind.activation, trace.hidden_pre, trace.hidden_out)
    gW1 = gh.T @ X
    gb1 = gh.sum(axis=0)
    return np.concatenate([gW1.reshape(-1), gb1, gw2, [gb2]])


def project_params(model: Parameterization) -> Parameterization:
    """Euclidean projection of theta onto the admissible set (a new model)."""
    out = model.copy()
    out.set_params(model.admissible.project(np.array(model.params)))
    return out


def init_params(kind, d: int, seed: int, admissible=None) -> Parameterization:
    """Glorot-uniform weights, zero biases; deterministic in (kind, d, seed)."""
    rng = np.random.default_rng(int(seed) & (2 ** 64 - 1))
    if isinstance(kind, LinearKind):
        a = np.sqrt(6.0 / (d + 1))
        theta = rng.uniform(-a, a, size=d)
        if kind.bias:
            theta = np.concatenate([theta, [0.0]])
    else:
        h = kind.hidden
        a1 = np.sqrt(6.0 / (d + h))
        a2 = np.sqrt(6.0 / (h + 1))
        W1 = rng.uniform(-a1, a1, size=h * d)
        w2 = rng.uniform(-a2, a2, size=h)
        theta = np.concatenate([W1, np.zeros(h), w2, [0.0]])
    return Parameterization(kind, d, theta, admissible or Unbounded())


CHECKPOINT_MAGIC = b"CSLMODEL"
CHECKPOINT_VERSION = 1


def _describe(model: Parameterization) -> dict:
    k = model.kind
    if isinstance(k, LinearKind):
        kind = {"kind": "linear", "bias": k.bias}
    else:
        kind = {"kind": "mlp", "hidden": k.hidden, "activation": k.activation.value,
                "output": k.output.value}
    H = model.admissible
    if isinstance(H, L2Ball):
        hdesc = {"set": "l2ball", "radius": H.radius}
    elif isinstance(H, Box):
        hdesc = {"set": "box", "lo": H.lo, "hi": H.hi}
    else:
        hdesc = {"set": "unbounded"}
    return {"version": CHECKPOINT_VERSION, "d": model.input_dim, "p": model.num_params,
            **kind, "admissible": hdesc}


def save_checkpoint(model: Parameterization, path) -> None:
    """Header line ``CSLMODEL <json>`` then theta as little-endian float64."""
    header = json.dumps(_describe(model), sort_keys=True).encode()
    body = struct.pack(f"<{model.num_params}d", *model.params)
    Path(path).write_bytes(CHECKPOINT_MAGIC + b" " + header + b"\n" + body)


def load_checkpoint(path) -> Parameterization:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if not raw.startswith(CHECKPOINT_MAGIC + b" ") or nl < 0:
        raise DomainError(f"{path}: not a model checkpoint")
    meta = json.loads(raw[len(CHECKPOINT_MAGIC) + 1:nl])
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DomainError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    if meta["kind"] == "linear":
        kind = LinearKind(meta["bias"])
    else:
        kind = MLPKind(meta["hidden"], Activation(meta["activation"]), Activation(meta["output"]))
    hd = meta["admissible"]
    H = {"l2ball": lambda: L2Ball(hd["radius"]), "box": lambda: Box(hd["lo"], hd["hi"]),
         "unbounded": Unbounded}[hd["set"]]()
    p = meta["p"]
    body = raw[nl + 1:]
    if len(body) != 8 * p:
        raise DomainError(f"{path}: expected {p} parameters")
    theta = np.array(struct.unpack(f"<{p}d", body))
    return Parameterization(kind, meta["d"], theta, H)
