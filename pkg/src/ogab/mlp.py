"""MLP classifier with a pluggable activation after every hidden layer.

``num_layers`` counts linear layers; the configured activation is applied
after each of the first ``num_layers - 1`` (one independent instance per
hidden layer), and the final layer emits raw logits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ogab.autodiff import ShapeError, Tape, Tensor
from ogab.activations import Activation, ActivationSpec, Param, make_activation

CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """A model or experiment configuration is invalid."""


@dataclass
class MLPConfig:
    input_dim: int
    num_classes: int
    activation: ActivationSpec
    hidden_dim: int = 64
    num_layers: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 2:
            raise ConfigError("num_layers must be >= 2")
        if self.hidden_dim < 1 or self.input_dim < 1 or self.num_classes < 2:
            raise ConfigError("input_dim, hidden_dim must be >= 1 and num_classes >= 2")


class MLP:
    """Stack of linear layers with per-hidden-layer activation instances."""

    def __init__(self, config: MLPConfig):
        self.config = config
        dims = ([config.input_dim]
                + [config.hidden_dim] * (config.num_layers - 1)
                + [config.num_classes])
        rng = np.random.default_rng(config.seed)
        self.weights: list[Param] = []
        self.biases: list[Param] = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(Param(f"layer{i}.weight",
                                      rng.uniform(-limit, limit, size=(fan_in, fan_out))))
            self.biases.append(Param(f"layer{i}.bias", np.zeros((1, fan_out))))
        self.activations: list[Activation] = [
            make_activation(config.activation, config.hidden_dim, rng)
            for _ in range(config.num_layers - 1)
        ]

    @property
    def num_hidden(self) -> int:
        return self.config.num_layers - 1

    def named_parameters(self) -> list[tuple[str, Param]]:
        out = []
        for i in range(self.config.num_layers):
            out.append((self.weights[i].name, self.weights[i]))
            out.append((self.biases[i].name, self.biases[i]))
            if i < self.num_hidden:
                for p in self.activations[i].params():
                    out.append((f"act{i}.{p.name}", p))
        return out

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def count_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def forward_tensors(self, x, tape: Tape, trainable=True,
                        input_grad=False) -> tuple[Tensor, dict[int, Tensor]]:
        """Record the forward pass on ``tape``; returns (logits, leaf map).

        The leaf map is keyed by ``id(param)`` so gradients can be read back
        after ``tape.backward``.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeError(f"expected (n, {self.config.input_dim}) input, got {x.shape}")
        leaves = {id(p): tape.leaf(p.value, requires_grad=trainable) for p in self.parameters()}
        resolve = lambda p: leaves[id(p)]
        h = tape.leaf(x, requires_grad=input_grad) if input_grad else tape.const(x)
        for i in range(self.config.num_layers):
            h = h @ resolve(self.weights[i]) + resolve(self.biases[i])
            if i < self.num_hidden:
                h = self.activations[i].apply(h, resolve)
        return h, leaves

    def logits(self, x) -> np.ndarray:
        out, _ = self.forward_tensors(x, Tape(), trainable=False)
        return out.data

    def predict(self, x) -> np.ndarray:
        """Argmax class per row; ties break toward the lowest index."""
        return np.argmax(self.logits(x), axis=1)

    def hidden_output(self, x, layer_index: int) -> np.ndarray:
        """Post-activation output of hidden layer ``layer_index`` (0-based)."""
        if not 0 <= layer_index < self.num_hidden:
            raise ValueError(f"layer_index must be in [0, {self.num_hidden}), got {layer_index}")
        x = np.asarray(x, dtype=np.float64)
        tape = Tape()
        leaves = {id(p): tape.const(p.value) for p in self.parameters()}
        resolve = lambda p: leaves[id(p)]
        h = tape.const(x)
        for i in range(layer_index + 1):
            h = h @ resolve(self.weights[i]) + resolve(self.biases[i])
            h = self.activations[i].apply(h, resolve)
        return h.data


def build_model(config: MLPConfig) -> MLP:
    return MLP(config)


# -- checkpoints ------------------------------------------------------------
#
# A checkpoint is a single JSON document: model config, optional fitted
# preprocessing statistics, and every parameter with its shape. Floats are
# written with shortest-round-trip repr, so save -> load -> forward is
# bit-identical, and the bytes are deterministic.


def _config_to_dict(config: MLPConfig) -> dict:
    return {
        "input_dim": config.input_dim,
        "num_classes": config.num_classes,
        "hidden_dim": config.hidden_dim,
        "num_layers": config.num_layers,
        "seed": config.seed,
        "activation": config.activation.to_dict(),
    }


def _config_from_dict(d: dict) -> MLPConfig:
    d = dict(d)
    d["activation"] = ActivationSpec.from_dict(d["activation"])
    return MLPConfig(**d)


def save_checkpoint(model: MLP, path, preprocess: dict | None = None) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model": _config_to_dict(model.config),
        "preprocess": preprocess,
        "params": [
            {"name": name, "shape": list(p.value.shape), "data": [float(v) for v in p.value.ravel()]}
            for name, p in model.named_parameters()
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> tuple[MLP, dict | None]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint format_version {version!r}")
    model = MLP(_config_from_dict(doc["model"]))
    stored = {entry["name"]: entry for entry in doc["params"]}
    names = [name for name, _ in model.named_parameters()]
    if set(names) != set(stored):
        raise ConfigError("checkpoint parameters do not match the model configuration")
    for name, p in model.named_parameters():
        entry = stored[name]
        value = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if value.shape != p.value.shape:
            raise ConfigError(f"checkpoint shape mismatch for {name}")
        p.value = value
    return model, doc.get("preprocess")
