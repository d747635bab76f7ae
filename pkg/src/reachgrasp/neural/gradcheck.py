"""Finite-difference verification of :meth:`SequenceNet.backward`."""
from __future__ import annotations

import numpy as np

from .losses import CompositeLoss
from .network import SequenceNet


def grad_check(net: SequenceNet, X, target, loss: CompositeLoss, aux=None, eps=1e-5, train=True, seed=0):
    """Largest relative error between analytic and central-difference gradients.

    The relative error of one parameter is ``|ga - gn| / max(1e-8, |ga| + |gn|)``.
    The finite differences are evaluated in extended precision
    (``np.longdouble``) so cancellation noise stays far below the
    tolerance even for very small gradient entries.  With ``train=True``
    dropout is active; the mask is redrawn from the same seed for every
    evaluation so the loss is a deterministic function of the parameters.
    """
    rng = np.random.default_rng(seed)
    out, cache = net.forward(X, aux, train=train, rng=rng)
    _, dY = loss.value_and_grad(out, target)
    analytic = net.backward(cache, dY)

    wide = np.longdouble
    twin = net.astype(wide)
    Xw = np.asarray(X, dtype=wide)
    Tw = np.asarray(target, dtype=wide)
    Aw = None if aux is None else np.asarray(aux, dtype=wide)

    def value():
        o, _ = twin.forward(Xw, Aw, train=train, rng=np.random.default_rng(seed))
        return loss.value(o, Tw)

    worst = 0.0
    for name, param in twin.params.items():
        ga = analytic[name].reshape(-1)
        flat = param.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps
            up = value()
            flat[k] = old - eps
            down = value()
            flat[k] = old
            gn = float((up - down) / (2 * wide(eps)))
            rel = abs(ga[k] - gn) / max(1e-8, abs(ga[k]) + abs(gn))
            worst = max(worst, rel)
    return worst
