"""Adam with bias correction, operating on :class:`Parameter` moment buffers."""
import math

import numpy as np


def adam_step(params, lr, beta1=0.5, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of every parameter holding a gradient.

    Parameters without a gradient are skipped and keep their step count.
    Gradients are left in place; call :func:`zero_grads` before the next
    backward pass.
    """
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        dt = p.data.dtype.type
        p.step_count += 1
        t = p.step_count
        p.adam_m *= dt(beta1)
        p.adam_m += dt(1 - beta1) * g
        p.adam_v *= dt(beta2)
        p.adam_v += dt(1 - beta2) * (g * g)
        m_hat = p.adam_m / dt(1 - beta1**t)
        v_hat = p.adam_v / dt(1 - beta2**t)
        p.data -= dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))


def zero_grads(params):
    for p in params:
        p.grad = None


def adam_update_bound(lr, beta1, beta2, t):
    """Largest per-element step Adam can take at step ``t`` for any gradient history.

    Cauchy-Schwarz bound on ``lr * |m_hat| / sqrt(v_hat)`` (``eps`` ignored),
    reached when the gradient at step ``k`` is proportional to
    ``(beta1 / beta2) ** (t - k)``. It exceeds ``lr`` for every ``t > 1``, while
    constant-magnitude gradients move exactly ``lr``.
    """
    r = beta1 * beta1 / beta2
    geom = sum(r**k for k in range(t))
    return lr * (1 - beta1) / (1 - beta1**t) * math.sqrt((1 - beta2**t) / (1 - beta2)) * math.sqrt(geom)
