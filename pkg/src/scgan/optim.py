"""Classical momentum SGD on parameter groups, as functional updates."""

from __future__ import annotations

import numpy as np
import torch

from .networks import ParameterSet, iter_group_params


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN/Inf; the update was aborted."""

    def __init__(self, group: str, param: str):
        super().__init__(f"non-finite gradient for parameter {param!r} in group {group!r}")
        self.group = group
        self.param = param


def momentum_sgd_update(param, grad, buffer, lr: float, momentum: float):
    """One classical-momentum step: buffer' = momentum*buffer + grad,
    param' = param - lr*buffer'. Returns (param', buffer') without mutating
    the inputs. Works on numpy arrays and torch tensors alike."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    finite = torch.isfinite(grad).all() if isinstance(grad, torch.Tensor) \
        else np.all(np.isfinite(grad))
    if not finite:
        raise ValueError("non-finite gradient")
    new_buffer = momentum * buffer + grad
    new_param = param - lr * new_buffer
    return new_param, new_buffer


def group_gradients(loss: torch.Tensor, params: ParameterSet, group: str) -> dict[str, torch.Tensor]:
    """Gradients of a scalar loss w.r.t. one group's tensors.

    Parameters the loss does not reach get zero gradients.
    """
    named = iter_group_params(params, group)
    tensors = [t for _, t in named]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True, retain_graph=True)
    out: dict[str, torch.Tensor] = {}
    for (name, tensor), grad in zip(named, grads):
        out[name] = torch.zeros_like(tensor) if grad is None else grad
    return out


def apply_group_update(
    params: ParameterSet,
    group: str,
    grads: dict[str, torch.Tensor],
    lr: float,
    momentum: float,
) -> ParameterSet:
    """Momentum-SGD step on one group; every other group's tensors are
    shared with the input ParameterSet, so untouched groups stay bitwise
    identical by construction."""
    new_weights: dict[str, torch.Tensor] = {}
    new_buffers: dict[str, torch.Tensor] = {}
    for name, tensor in iter_group_params(params, group):
        grad = grads[name]
        if not torch.isfinite(grad).all():
            raise NonFiniteGradientError(group, name)
        updated, buf = momentum_sgd_update(
            tensor.detach(), grad.detach(), params.momentum[group][name], lr, momentum)
        new_weights[name] = updated.requires_grad_(True)
        new_buffers[name] = buf
    weights = dict(params.weights)
    momentum_buffers = dict(params.momentum)
    weights[group] = new_weights
    momentum_buffers[group] = new_buffers
    return ParameterSet(weights=weights, momentum=momentum_buffers)


__all__ = ["NonFiniteGradientError", "momentum_sgd_update", "group_gradients", "apply_group_update"]
