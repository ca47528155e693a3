"""
Monotone first-order descent used by registration and refinement.

A candidate step that raises the loss is halved up to `max_backoffs` times
and rejected after that, so the loss trace never increases.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Tuple

import numpy as np

# evaluate(x) -> (total loss, per-term losses, state reused by the gradient)
Evaluate = Callable[[np.ndarray], Tuple[float, Dict[str, float], Any]]
Gradient = Callable[[np.ndarray, Any], np.ndarray]


class DescentStepper:
    """Plain gradient descent (default) or Adam step proposals."""

    def __init__(self, lr: float, method: str = "gd", beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if method not in ("adam", "gd"):
            raise ValueError(f"Unknown descent method: {method}")
        self.lr = lr
        self.method = method
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = None
        self._v = None
        self._count = 0

    def propose(self, grad: np.ndarray) -> np.ndarray:
        """Update the moment estimates with `grad` and return the step to subtract."""
        if self.method == "gd":
            return self.lr * grad
        if self._m is None:
            self._m = np.zeros_like(grad)
            self._v = np.zeros_like(grad)
        self._count += 1
        self._m = self.beta1 * self._m + (1.0 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1.0 - self.beta2) * grad * grad
        m_hat = self._m / (1.0 - self.beta1 ** self._count)
        v_hat = self._v / (1.0 - self.beta2 ** self._count)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class DescentResult:
    params: np.ndarray
    initial_loss: float
    final_loss: float
    trace: List[Dict[str, float]] = field(default_factory=list)
    iterations_run: int = 0
    backoffs: int = 0
    rejected_steps: int = 0
    aborted: bool = False


def run_descent(x0: np.ndarray, evaluate: Evaluate, gradient: Gradient, stepper: DescentStepper,
                iterations: int, lower: float = -np.inf, upper: float = np.inf,
                max_backoffs: int = 6, label: str = "descent") -> DescentResult:
    """
    Minimize with box clamping after each step.

    The trace holds the per-term losses of the accepted state after every
    iteration. A non-finite loss aborts and keeps the last finite state.
    """
    x = np.clip(np.asarray(x0, dtype=np.float64), lower, upper)
    loss, terms, state = evaluate(x)
    if not math.isfinite(loss):
        logging.error(f"{label}: initial loss is not finite; nothing optimized")
        return DescentResult(x, loss, loss, aborted=True)

    result = DescentResult(x, loss, loss)
    grad = gradient(x, state)
    for it in range(iterations):
        step = stepper.propose(grad)
        scale = 1.0
        accepted = False
        for attempt in range(max_backoffs + 1):
            candidate = np.clip(x - scale * step, lower, upper)
            c_loss, c_terms, c_state = evaluate(candidate)
            if not math.isfinite(c_loss):
                logging.error(f"{label}: non-finite loss at iteration {it}; restoring last finite state")
                result.aborted = True
                break
            if c_loss <= loss:
                accepted = True
                break
            scale *= 0.5
            result.backoffs += 1
        if result.aborted:
            break

        if accepted:
            x, loss, terms, state = candidate, c_loss, c_terms, c_state
            grad = gradient(x, state)
        else:
            result.rejected_steps += 1

        result.trace.append(dict(terms, total=loss))
        result.iterations_run = it + 1
        logging.debug(f"{label}: iteration {it} loss={loss:.6g} accepted={accepted} scale={scale:g}")

    result.params = x
    result.final_loss = loss
    if result.backoffs:
        logging.info(f"{label}: {result.backoffs} step backoffs, {result.rejected_steps} rejected steps")
    return result
