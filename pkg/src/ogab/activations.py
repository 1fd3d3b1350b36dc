"""Activation layers: fixed nonlinearities, PReLU, and the OGAB layer.

The OGAB layer transforms a batch through an orthogonal matrix built from a
learnable unconstrained base (skew-symmetrize, then Cayley transform), adds a
per-sample bias mixed from learnable group bias vectors by a softmax gate,
and finishes with a smooth nonlinearity and a learnable output scale:

    Q = (I + S)(I - S)^{-1},  S = base - base^T
    y = out_scale * sigma(x @ Q^T + gate_probs(x) @ group_biases)

Both mechanisms can be switched off independently for ablations; an ablated
layer does not own the corresponding parameters at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ogab import autodiff
from ogab.autodiff import ShapeError, Tensor, softmax_rows

SIGMA_FUNCS = {
    "tanh": autodiff.tanh,
    "sigmoid": autodiff.sigmoid,
    "softplus": autodiff.softplus,
}

ACTIVATION_NAMES = (
    "identity", "relu", "tanh", "sigmoid", "softmax", "softplus", "prelu", "ogab",
)


@dataclass
class Param:
    """A named trainable array."""
    name: str
    value: np.ndarray


@dataclass
class ActivationSpec:
    """Configuration-level description of an activation choice."""
    name: str
    groups: int = 5
    sigma: str = "tanh"
    use_orthogonal: bool = True
    use_group_bias: bool = True

    def __post_init__(self):
        if self.name not in ACTIVATION_NAMES:
            raise ValueError(f"unknown activation {self.name!r}, expected one of {ACTIVATION_NAMES}")
        if self.sigma not in SIGMA_FUNCS:
            raise ValueError(f"unknown sigma {self.sigma!r}, expected one of {tuple(SIGMA_FUNCS)}")
        if self.groups < 1:
            raise ValueError("groups must be >= 1")

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.name == "ogab":
            d.update(groups=self.groups, sigma=self.sigma,
                     use_orthogonal=self.use_orthogonal, use_group_bias=self.use_group_bias)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ActivationSpec":
        return cls(**d)


# -- tensor-level building blocks -------------------------------------------


def skew(a: Tensor) -> Tensor:
    """S = a - a^T; exactly skew-symmetric for square input."""
    if a.rows != a.cols:
        raise ShapeError(f"skew: input must be square, got {a.shape}")
    return a - a.t()


def cayley(s: Tensor) -> Tensor:
    """Map a skew-symmetric matrix to an orthogonal one: (I + S)(I - S)^{-1}.

    Realized as solve(I - S, I + S), which is the same matrix because I + S
    and (I - S)^{-1} commute; no explicit inverse is formed. I - S is
    nonsingular for every skew-symmetric S (its eigenvalues are 1 - i*lambda),
    so a singular solve here means the input violated the contract.
    """
    d = s.rows
    if np.abs(s.data + s.data.T).max() >= 1e-12:
        raise ValueError("cayley: input is not skew-symmetric")
    eye = s.tape.const(np.eye(d))
    return autodiff.solve(autodiff.sub(eye, s), autodiff.add(eye, s))


def orthogonal_map(x: Tensor, q: Tensor) -> Tensor:
    """Rotate rows of ``x`` by ``q``: returns x @ q^T."""
    if q.rows != q.cols or x.cols != q.rows:
        raise ShapeError(f"orthogonal_map: {x.shape} x {q.shape}")
    return x @ q.t()


def gate_probs(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-sample group probabilities: softmax over rows of x @ weight + bias."""
    if x.cols != weight.rows:
        raise ShapeError(f"gate_probs: {x.shape} x {weight.shape}")
    return softmax_rows(x @ weight + bias)


def group_bias_mix(probs: Tensor, biases: Tensor) -> Tensor:
    """Probability-weighted mixture of group bias rows: probs @ biases."""
    if probs.cols != biases.rows:
        raise ShapeError(f"group_bias_mix: {probs.shape} x {biases.shape}")
    return probs @ biases


# -- activation objects -----------------------------------------------------


class Activation:
    """Base class: a (possibly parameterized) map applied after a linear layer."""

    name = "?"

    def params(self) -> list[Param]:
        return []

    def apply(self, x: Tensor, resolve) -> Tensor:
        """Apply to a tensor; ``resolve(param)`` yields the tape leaf for a Param."""
        raise NotImplementedError

    def apply_values(self, x: np.ndarray) -> np.ndarray:
        """Apply to a plain array, with parameters treated as constants."""
        tape = autodiff.Tape()
        out = self.apply(tape.const(x), lambda p: tape.const(p.value))
        return out.data


class FixedActivation(Activation):
    """A non-learnable entrywise (or row-wise) nonlinearity."""

    _FUNCS = {
        "identity": None,
        "relu": autodiff.relu,
        "tanh": autodiff.tanh,
        "sigmoid": autodiff.sigmoid,
        "softmax": softmax_rows,
        "softplus": autodiff.softplus,
    }

    def __init__(self, name: str):
        if name not in self._FUNCS:
            raise ValueError(f"unknown fixed activation {name!r}")
        self.name = name

    def apply(self, x: Tensor, resolve) -> Tensor:
        fn = self._FUNCS[self.name]
        return x if fn is None else fn(x)


class PReluActivation(Activation):
    """max(0, x) + alpha * min(0, x) with one learnable alpha per feature."""

    name = "prelu"

    def __init__(self, dim: int, init: float = 0.25):
        self.dim = dim
        self.alpha = Param("alpha", np.full((1, dim), init))

    def params(self) -> list[Param]:
        return [self.alpha]

    def apply(self, x: Tensor, resolve) -> Tensor:
        # min(0, x) = -relu(-x), so the whole map is relu(x) - alpha * relu(-x).
        return autodiff.relu(x) - autodiff.mul(resolve(self.alpha), autodiff.relu(-x))


class OgabActivation(Activation):
    """Orthogonal feature map plus softmax-gated group bias.

    Parameters (owned only when the corresponding switch is on):
      base         (d, d)  unconstrained source of the orthogonal matrix
      out_scale    (1, d)  entrywise output scaling, starts at 1
      group_biases (G, d)  one bias vector per group, start at 0
      gate_weight  (d, G)  gate affine weight
      gate_bias    (1, G)  gate affine bias, starts at 0

    Initialization keeps the layer close to a plain sigma at the start:
    base is tiny (so Q is near identity) and the group biases are zero.
    """

    name = "ogab"

    def __init__(self, dim: int, groups: int = 5, sigma: str = "tanh",
                 use_orthogonal: bool = True, use_group_bias: bool = True,
                 rng: np.random.Generator | None = None):
        if dim < 1 or groups < 1:
            raise ValueError("dim and groups must be >= 1")
        if sigma not in SIGMA_FUNCS:
            raise ValueError(f"unknown sigma {sigma!r}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.dim = dim
        self.groups = groups
        self.sigma = sigma
        self.use_orthogonal = use_orthogonal
        self.use_group_bias = use_group_bias
        self.base = None
        self.gate_weight = None
        self.gate_bias = None
        self.group_biases = None
        if use_orthogonal:
            self.base = Param("base", rng.uniform(-0.01, 0.01, size=(dim, dim)))
        self.out_scale = Param("out_scale", np.ones((1, dim)))
        if use_group_bias:
            self.group_biases = Param("group_biases", np.zeros((groups, dim)))
            limit = np.sqrt(6.0 / (dim + groups))
            self.gate_weight = Param("gate_weight", rng.uniform(-limit, limit, size=(dim, groups)))
            self.gate_bias = Param("gate_bias", np.zeros((1, groups)))

    def params(self) -> list[Param]:
        out = []
        if self.base is not None:
            out.append(self.base)
        out.append(self.out_scale)
        if self.group_biases is not None:
            out.extend([self.group_biases, self.gate_weight, self.gate_bias])
        return out

    def orthogonal_matrix(self) -> np.ndarray:
        """Current Q as a plain array (identity when orthogonality is off)."""
        if self.base is None:
            return np.eye(self.dim)
        tape = autodiff.Tape()
        return cayley(skew(tape.const(self.base.value))).data

    def apply(self, x: Tensor, resolve) -> Tensor:
        if x.cols != self.dim:
            raise ShapeError(f"ogab: expected {self.dim} columns, got {x.shape}")
        if self.use_orthogonal:
            q = cayley(skew(resolve(self.base)))
            u = orthogonal_map(x, q)
        else:
            u = x
        if self.use_group_bias:
            p = gate_probs(x, resolve(self.gate_weight), resolve(self.gate_bias))
            w = u + group_bias_mix(p, resolve(self.group_biases))
        else:
            w = u
        return autodiff.scale_rows(SIGMA_FUNCS[self.sigma](w), resolve(self.out_scale))


def make_activation(spec: ActivationSpec, dim: int, rng: np.random.Generator) -> Activation:
    """Instantiate the activation described by ``spec`` for feature width ``dim``."""
    if spec.name == "prelu":
        return PReluActivation(dim)
    if spec.name == "ogab":
        return OgabActivation(dim, groups=spec.groups, sigma=spec.sigma,
                              use_orthogonal=spec.use_orthogonal,
                              use_group_bias=spec.use_group_bias, rng=rng)
    return FixedActivation(spec.name)


def init_ogab(dim: int, groups: int, seed: int, **kwargs) -> OgabActivation:
    """Deterministically initialized OGAB layer for standalone use."""
    return OgabActivation(dim, groups=groups, rng=np.random.default_rng(seed), **kwargs)


def orthogonal_from_base(base: np.ndarray) -> np.ndarray:
    """Q for an unconstrained base matrix: cayley(base - base^T), as an array."""
    tape = autodiff.Tape()
    return cayley(skew(tape.const(base))).data
