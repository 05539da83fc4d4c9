from lsdm.nn.network import Network, build_mlp, forward, lipschitz_upper_bound, spectral_norm
from lsdm.nn.optim import AdamState, EmaState, adam_step, ema_update, lr_schedule_value
from lsdm.nn.autograd import Tensor, grad, no_grad, tensor


def backward_grads(loss, params):
    """Exact reverse-mode gradients of a scalar loss for each parameter.

    Parameters the loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is disconnected from the parameters")
    return [g.data for g in grad(loss, params)]


def input_gradient_node(per_sample, inputs):
    """Gradient of a per-sample output with respect to ``inputs``, kept in the graph.

    ``per_sample`` has shape (B,) or (B, 1); each row depends only on the
    matching row of ``inputs``, so the gradient of the summed output is the
    stack of per-sample gradients. The result can be differentiated again.
    """
    if per_sample.ndim == 2 and per_sample.shape[1] != 1:
        raise ValueError("expected one scalar output per sample")
    if not inputs.requires_grad:
        raise ValueError("input does not participate in the graph")
    return grad(per_sample.sum(), inputs, create_graph=True, allow_unused=False)


__all__ = [
    "AdamState",
    "EmaState",
    "Network",
    "Tensor",
    "adam_step",
    "backward_grads",
    "build_mlp",
    "ema_update",
    "forward",
    "grad",
    "input_gradient_node",
    "lipschitz_upper_bound",
    "lr_schedule_value",
    "no_grad",
    "spectral_norm",
    "tensor",
]
