"""Adam with bias correction, as a pure function over parameter dicts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidShapeError


@dataclass(frozen=True)
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        zeros = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(m=zeros, v={k: z.copy() for k, z in zeros.items()},
                   t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grads, state: AdamState):
    """One Adam update. Returns ``(new_params, new_state)``; inputs are untouched.

    ``params`` and ``grads`` are mappings name -> array. The result has the
    same mapping type as ``params`` when it can be rebuilt from a dict.
    """
    if set(grads.keys()) != set(params.keys()):
        raise InvalidShapeError("gradient names do not match parameter names")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise InvalidShapeError(f"{name}: gradient/state shape mismatch with {p.shape}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_p[name] = (p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
        new_m[name] = m.astype(p.dtype, copy=False)
        new_v[name] = v.astype(p.dtype, copy=False)
    rebuild = getattr(params, "from_dict", None)
    out = rebuild(new_p) if rebuild is not None else new_p
    return out, replace(state, m=new_m, v=new_v, t=t)
