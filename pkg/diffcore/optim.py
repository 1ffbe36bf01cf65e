from typing import Iterable

import numpy as np

from diffcore.tensor import Parameter


def sgd_momentum_step(params: Iterable[Parameter], lr: float, momentum: float) -> None:
    """
    buffer <- momentum·buffer + grad; value <- value - lr·buffer; grads are then zeroed
    """
    for param in params:
        grad = param.grad
        param.momentum_buffer *= param.values.dtype.type(momentum)
        param.momentum_buffer += grad
        param.values -= param.values.dtype.type(lr) * param.momentum_buffer
        param.zero_grad()


def zero_grads(params: Iterable[Parameter]) -> None:
    for param in params:
        param.zero_grad()


def grad_norm(params: Iterable[Parameter]) -> float:
    total = 0.0
    for param in params:
        total += float(np.sum(param.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))
