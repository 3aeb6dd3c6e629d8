"""The five parametric maps: encoder, generator, classifier and the two
dual-head discriminators.

All parameters are float64 torch tensors so that analytic gradients can be
validated against central finite differences at tight tolerance. Forward
passes are pure functions of (parameters, inputs); gradients flow through
torch autograd.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core_types import DomainKey, RunConfig

# Parameter-group declaration order; also the checkpoint serialization order.
GROUPS = ("encoder", "generator", "classifier", "disc_source", "disc_target")

DTYPE = torch.float64


class ShapeMismatchError(ValueError):
    """Input dimensions do not match the network contract."""


@dataclass(frozen=True)
class DiscriminatorOutput:
    """Two heads: probability of being a real image, and an n_classes-way
    class distribution."""

    real_prob: torch.Tensor  # (B,) in [0, 1]
    class_probs: torch.Tensor  # (B, n_classes), rows on the simplex


@dataclass
class ParameterSet:
    """All learnable weights, partitioned by network, plus per-parameter
    momentum buffers of identical shape.

    Updates are functional: optimizer steps build a new ParameterSet that
    shares the tensors of untouched groups, so "group X was not modified"
    is checkable by identity.
    """

    weights: dict[str, dict[str, torch.Tensor]]
    momentum: dict[str, dict[str, torch.Tensor]]


def _layer_dims(config: RunConfig) -> dict[str, list[tuple[int, int]]]:
    d = config.pixel_dim
    h = config.hidden_dim
    z = config.latent_dim
    n = config.n_classes
    disc_trunk = [(d, h), (h, h)]
    return {
        "encoder": [(d, h), (h, h), (h, z)],
        "generator": [(z + 2, h), (h, h), (h, d)],
        "classifier": [(z, h), (h, n)],
        "disc_source": disc_trunk + [(h, 1), (h, n)],
        "disc_target": list(disc_trunk) + [(h, 1), (h, n)],
    }


def _param_names(group: str, dims: list[tuple[int, int]]) -> list[str]:
    if group.startswith("disc"):
        trunk = [f"{kind}{i}" for i in range(len(dims) - 2) for kind in ("w", "b")]
        return trunk + ["w_real", "b_real", "w_class", "b_class"]
    return [f"{kind}{i}" for i in range(len(dims)) for kind in ("w", "b")]


def init_parameters(config: RunConfig, seed: int) -> ParameterSet:
    """Deterministic init: weights ~ Normal(0, 1/sqrt(fan_in)), zero biases,
    zero momentum buffers."""
    rng = np.random.default_rng(seed)
    weights: dict[str, dict[str, torch.Tensor]] = {}
    momentum: dict[str, dict[str, torch.Tensor]] = {}
    for group, dims in _layer_dims(config).items():
        names = _param_names(group, dims)
        tensors: dict[str, torch.Tensor] = {}
        buffers: dict[str, torch.Tensor] = {}
        for name, (fan_in, fan_out) in zip(names[0::2], dims):
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            tensors[name] = torch.tensor(w, dtype=DTYPE, requires_grad=True)
            bname = "b" + name[1:]
            tensors[bname] = torch.zeros(fan_out, dtype=DTYPE, requires_grad=True)
        for name, t in tensors.items():
            buffers[name] = torch.zeros_like(t, requires_grad=False)
        weights[group] = tensors
        momentum[group] = buffers
    return ParameterSet(weights=weights, momentum=momentum)


def zeroed_momentum(params: ParameterSet) -> ParameterSet:
    """Same weights, momentum buffers reset to zero."""
    momentum = {
        g: {name: torch.zeros_like(t) for name, t in group.items()}
        for g, group in params.weights.items()
    }
    return ParameterSet(weights=params.weights, momentum=momentum)


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    arr = np.asarray(x, dtype=np.float64)
    if not arr.flags.writeable:  # e.g. frozen Sample pixels
        arr = arr.copy()
    return torch.as_tensor(arr)


def _check_matrix(x: torch.Tensor, expected_cols: int, what: str) -> torch.Tensor:
    if x.dim() == 1:
        x = x.unsqueeze(0)
    if x.dim() != 2 or x.shape[1] != expected_cols:
        raise ShapeMismatchError(
            f"{what} expects (batch, {expected_cols}), got {tuple(x.shape)}"
        )
    return x


def encode(params: ParameterSet, pixels) -> torch.Tensor:
    """Map a (B, H*W*C) pixel batch to (B, latent_dim) codes.

    Pixel inputs are recentred from [0,1] to [-1,1] before the first layer.
    """
    net = params.weights["encoder"]
    x = _check_matrix(_as_tensor(pixels), net["w0"].shape[0], "encoder")
    x = 2.0 * x - 1.0
    h = torch.tanh(x @ net["w0"] + net["b0"])
    h = torch.tanh(h @ net["w1"] + net["b1"])
    return h @ net["w2"] + net["b2"]


def generate(params: ParameterSet, codes, key: DomainKey) -> torch.Tensor:
    """Decode latent codes into pixels styled for the keyed domain.

    The key is concatenated to the code before the first layer; the final
    sigmoid keeps outputs inside [0, 1].
    """
    if not isinstance(key, DomainKey):
        key = DomainKey(np.asarray(key, dtype=np.float64))
    net = params.weights["generator"]
    z = _check_matrix(_as_tensor(codes), net["w0"].shape[0] - 2, "generator")
    k = torch.tensor(key.onehot, dtype=DTYPE).expand(z.shape[0], 2)
    h = torch.cat([z, k], dim=1)
    h = torch.tanh(h @ net["w0"] + net["b0"])
    h = torch.tanh(h @ net["w1"] + net["b1"])
    return torch.sigmoid(h @ net["w2"] + net["b2"])


def classify(params: ParameterSet, codes) -> torch.Tensor:
    """Map latent codes to class probabilities (softmax rows)."""
    net = params.weights["classifier"]
    z = _check_matrix(_as_tensor(codes), net["w0"].shape[0], "classifier")
    h = torch.tanh(z @ net["w0"] + net["b0"])
    return torch.softmax(h @ net["w1"] + net["b1"], dim=1)


def discriminate(params: ParameterSet, which: str, pixels) -> DiscriminatorOutput:
    """Run one discriminator ("disc_source" or "disc_target") on a pixel batch."""
    if which not in ("disc_source", "disc_target"):
        raise ValueError(f"unknown discriminator {which!r}")
    net = params.weights[which]
    x = _check_matrix(_as_tensor(pixels), net["w0"].shape[0], which)
    x = 2.0 * x - 1.0
    h = torch.tanh(x @ net["w0"] + net["b0"])
    h = torch.tanh(h @ net["w1"] + net["b1"])
    real = torch.sigmoid(h @ net["w_real"] + net["b_real"]).squeeze(1)
    probs = torch.softmax(h @ net["w_class"] + net["b_class"], dim=1)
    return DiscriminatorOutput(real_prob=real, class_probs=probs)


def iter_group_params(params: ParameterSet, group: str):
    """(name, tensor) pairs of one group, in declaration order."""
    return list(params.weights[group].items())


def count_parameters(params: ParameterSet, group: str | None = None) -> int:
    groups = [group] if group else list(GROUPS)
    return sum(int(t.numel()) for g in groups for t in params.weights[g].values())


def group_to_flat(params: ParameterSet, group: str) -> np.ndarray:
    """Concatenate one group's weights into a flat float64 vector."""
    parts = [t.detach().numpy().ravel() for _, t in iter_group_params(params, group)]
    return np.concatenate(parts) if parts else np.zeros(0)


def with_group_flat(params: ParameterSet, group: str, flat: np.ndarray) -> ParameterSet:
    """New ParameterSet with one group's weights replaced from a flat vector."""
    flat = np.asarray(flat, dtype=np.float64)
    expected = sum(t.numel() for _, t in iter_group_params(params, group))
    if flat.size != expected:
        raise ValueError(f"flat vector of {flat.size} does not fit group {group} ({expected})")
    tensors: dict[str, torch.Tensor] = {}
    offset = 0
    for name, t in iter_group_params(params, group):
        n = t.numel()
        chunk = flat[offset : offset + n].reshape(tuple(t.shape))
        tensors[name] = torch.tensor(chunk, dtype=DTYPE, requires_grad=True)
        offset += n
    weights = dict(params.weights)
    weights[group] = tensors
    return ParameterSet(weights=weights, momentum=params.momentum)


def params_to_numpy(params: ParameterSet) -> dict[str, dict[str, np.ndarray]]:
    """Detach weights to plain numpy arrays (for the independent oracle)."""
    return {
        g: {name: t.detach().numpy().copy() for name, t in group.items()}
        for g, group in params.weights.items()
    }


def parameters_equal(a: ParameterSet, b: ParameterSet, group: str | None = None) -> bool:
    """Bitwise equality of weights (one group or all)."""
    groups = [group] if group else list(GROUPS)
    for g in groups:
        for name in a.weights[g]:
            if not torch.equal(a.weights[g][name], b.weights[g][name]):
                return False
    return True


__all__ = [
    "GROUPS",
    "DTYPE",
    "ShapeMismatchError",
    "DiscriminatorOutput",
    "ParameterSet",
    "init_parameters",
    "zeroed_momentum",
    "encode",
    "generate",
    "classify",
    "discriminate",
    "iter_group_params",
    "count_parameters",
    "group_to_flat",
    "with_group_flat",
    "params_to_numpy",
    "parameters_equal",
]
