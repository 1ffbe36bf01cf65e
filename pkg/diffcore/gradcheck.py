"""
Central finite-difference verification of analytic gradients
"""

from typing import Callable, Iterable, List, Sequence, Union

import numpy as np

from diffcore.tensor import Graph, Parameter, Tensor, backward

RELATIVE_FLOOR = 1e-8


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), RELATIVE_FLOOR)


def _scalar(closure: Callable[..., Tensor], points: Sequence[Tensor]) -> float:
    return float(closure(*points).values.reshape(-1)[0])


def finite_difference_check(
    op_closure: Callable[..., Tensor],
    point: Union[Tensor, Sequence[Tensor]],
    h: float = 1e-6,
) -> float:
    """
    Compare the recorded gradient of ``op_closure(*point)`` with central differences
    (f(x+h) - f(x-h)) / 2h on every coordinate of every point tensor.

    Returns the maximum relative error, denominator max(|analytic|, |numeric|, 1e-8).
    The point tensors should be double precision and require grad.
    """
    points: List[Tensor] = [point] if isinstance(point, Tensor) else list(point)
    for tensor in points:
        tensor.requires_grad = True
        tensor.zero_grad()

    with Graph() as graph:
        loss = op_closure(*points)
    backward(graph, loss)
    analytic = [tensor.grad.copy() for tensor in points]

    worst = 0.0
    for tensor, grads in zip(points, analytic):
        flat = tensor.values.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            f_plus = _scalar(op_closure, points)
            flat[i] = original - h
            f_minus = _scalar(op_closure, points)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, relative_error(float(grads.reshape(-1)[i]), numeric))
    return worst


def spot_check_parameters(
    loss_closure: Callable[[], Tensor],
    params: Iterable[Parameter],
    n_coords: int,
    rng: np.random.Generator,
    h: float = 1e-6,
    min_grad: float = 1e-6,
) -> float:
    """
    Finite-difference check of ``n_coords`` randomly chosen parameter coordinates of a
    whole network loss; coordinates with |grad| below ``min_grad`` are not sampled since
    rounding noise dominates their relative error.
    """
    params = list(params)
    for param in params:
        param.zero_grad()
    with Graph() as graph:
        loss = loss_closure()
    backward(graph, loss)

    candidates = []
    for p_index, param in enumerate(params):
        flat_grad = param.grad.reshape(-1)
        for c_index in np.flatnonzero(np.abs(flat_grad) >= min_grad):
            candidates.append((p_index, int(c_index)))
    if not candidates:
        return 0.0

    chosen = rng.choice(len(candidates), size=min(n_coords, len(candidates)), replace=False)
    worst = 0.0
    for pick in sorted(int(c) for c in chosen):
        p_index, c_index = candidates[pick]
        param = params[p_index]
        analytic = float(param.grad.reshape(-1)[c_index])
        flat = param.values.reshape(-1)
        original = flat[c_index]
        flat[c_index] = original + h
        f_plus = float(loss_closure().values.reshape(-1)[0])
        flat[c_index] = original - h
        f_minus = float(loss_closure().values.reshape(-1)[0])
        flat[c_index] = original
        worst = max(worst, relative_error(analytic, (f_plus - f_minus) / (2.0 * h)))
    for param in params:
        param.zero_grad()
    return worst
