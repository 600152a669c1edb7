"""First-order update rules.

SGD is linear in the gradient history; Adam and RMSprop precondition by a
root-mean-square of past gradients, which is what breaks rotation
invariance. Two Adam variants are provided:

* ``adam_warm_step``: moments start at the first gradient
  (``m0 = g0``, ``D0^2 = g0 * g0``) and follow plain exponential averages,
  so the moment weights always sum to one and ``D`` stays inside
  ``[eps, max |g|]``. The preconditioner is ``D = max(sqrt(D^2), eps)``.
* ``adam_step_standard``: the usual zero-initialised, bias-corrected Adam.

Step functions are value-semantic: they never modify their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from splitlab.nn import ShapeError

EPS_NUM = 1e-8


def _check(W, grad):
    if np.shape(W) != np.shape(grad):
        raise ShapeError(f"parameter shape {np.shape(W)} != gradient shape {np.shape(grad)}")


@dataclass(frozen=True)
class SgdState:
    lr: float

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = EPS_NUM
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    k: int = 0
    # preconditioner diagonal used by the most recent step (warm-started variant)
    d_hat: np.ndarray | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        for b in (self.beta1, self.beta2):
            if not 0.0 < b < 1.0:
                raise ValueError("betas must lie in (0, 1)")


@dataclass(frozen=True)
class RmsPropState:
    lr: float
    rho: float = 0.9
    eps: float = EPS_NUM
    avg: np.ndarray | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def sgd_step(W, grad, state: SgdState):
    _check(W, grad)
    return W - state.lr * grad


def adam_warm_init(grad0, lr, beta1=0.9, beta2=0.999, eps=EPS_NUM) -> AdamState:
    """Initial state from the gradient at the starting point."""
    g = np.asarray(grad0, dtype=np.float64)
    return AdamState(lr, beta1, beta2, eps, m=g.copy(), v=g * g, k=0)


def adam_warm_step(W, grad, state: AdamState):
    """One step ``W - lr * m / D`` of the gradient-initialised Adam.

    The first call consumes the initial moments as they are (``grad`` must be
    the gradient the state was initialised with); later calls fold ``grad``
    into the running averages first.
    """
    if state.m is None or state.v is None:
        raise ValueError("warm-started Adam state is uninitialised; use adam_warm_init(grad0, ...)")
    _check(W, grad)
    _check(state.m, grad)
    if state.k == 0:
        m, v = state.m, state.v
    else:
        m = state.beta1 * state.m + (1.0 - state.beta1) * grad
        v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    d_hat = np.maximum(np.sqrt(v), state.eps)
    W_new = W - state.lr * m / d_hat
    return W_new, replace(state, m=m, v=v, k=state.k + 1, d_hat=d_hat)


def adam_step_standard(W, grad, state: AdamState):
    _check(W, grad)
    m0 = np.zeros_like(grad) if state.m is None else state.m
    v0 = np.zeros_like(grad) if state.v is None else state.v
    _check(m0, grad)
    k = state.k + 1
    m = state.beta1 * m0 + (1.0 - state.beta1) * grad
    v = state.beta2 * v0 + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**k)
    v_hat = v / (1.0 - state.beta2**k)
    d_hat = np.sqrt(v_hat) + state.eps
    return W - state.lr * m_hat / d_hat, replace(state, m=m, v=v, k=k, d_hat=d_hat)


def rmsprop_step(W, grad, state: RmsPropState):
    _check(W, grad)
    avg0 = np.zeros_like(grad) if state.avg is None else state.avg
    _check(avg0, grad)
    avg = state.rho * avg0 + (1.0 - state.rho) * grad * grad
    return W - state.lr * grad / (np.sqrt(avg) + state.eps), replace(state, avg=avg)


# --------------------------------------------------------------------------
# multi-parameter wrapper
# --------------------------------------------------------------------------

OPTIMIZER_KINDS = {"sgd": 1, "adam_warm": 2, "adam": 3, "rmsprop": 4}


class Optimizer:
    """Applies one update rule to a list of parameter arrays.

    ``adam_warm`` initialises its moments from the first gradient it sees,
    which is the gradient at the starting weights.
    """

    def __init__(self, name: str = "sgd", lr: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = EPS_NUM, rho: float = 0.9):
        if name not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZER_KINDS)}")
        self.name = name
        self.lr, self.beta1, self.beta2, self.eps, self.rho = lr, beta1, beta2, eps, rho
        self.states: list | None = None

    def _fresh(self):
        if self.name == "sgd":
            return SgdState(self.lr)
        if self.name == "rmsprop":
            return RmsPropState(self.lr, self.rho, self.eps)
        return AdamState(self.lr, self.beta1, self.beta2, self.eps)

    def step(self, params, grads):
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        if self.states is None:
            if self.name == "adam_warm":
                self.states = [adam_warm_init(g, self.lr, self.beta1, self.beta2, self.eps) for g in grads]
            else:
                self.states = [self._fresh() for _ in grads]
        out = []
        for i, (W, g) in enumerate(zip(params, grads)):
            st = self.states[i]
            if self.name == "sgd":
                out.append(sgd_step(W, g, st))
                continue
            if self.name == "adam_warm":
                W_new, st = adam_warm_step(W, g, st)
            elif self.name == "adam":
                W_new, st = adam_step_standard(W, g, st)
            else:
                W_new, st = rmsprop_step(W, g, st)
            self.states[i] = st
            out.append(W_new)
        return out

    # serialisation: [lr, beta1, beta2, eps, rho, initialised, k, has_moments] + moments
    def to_floats(self) -> np.ndarray:
        initialised = self.states is not None
        k = 0
        moments = []
        if initialised and self.name != "sgd":
            for st in self.states:
                if isinstance(st, AdamState):
                    k = st.k
                    moments.extend([st.m, st.v])
                else:
                    moments.append(st.avg)
        has = bool(moments) and all(a is not None for a in moments)
        head = np.array([self.lr, self.beta1, self.beta2, self.eps, self.rho,
                         float(initialised), float(k), float(has)])
        if not has:
            return head
        return np.concatenate([head, *(np.ravel(a) for a in moments)])

    @classmethod
    def from_floats(cls, name: str, data, shapes) -> "Optimizer":
        data = np.asarray(data, dtype=np.float64)
        lr, b1, b2, eps, rho, initialised, k, has = data[:8]
        opt = cls(name, float(lr), float(b1), float(b2), float(eps), float(rho))
        if not initialised:
            return opt
        pos = 8

        def take(shape):
            nonlocal pos
            if not has:
                return None
            size = int(np.prod(shape))
            if pos + size > data.size:
                raise ValueError("optimizer section truncated")
            arr = data[pos:pos + size].reshape(shape).copy()
            pos += size
            return arr

        states = []
        for shape in shapes:
            if name == "sgd":
                states.append(SgdState(opt.lr))
            elif name == "rmsprop":
                states.append(RmsPropState(opt.lr, opt.rho, opt.eps, take(shape)))
            else:
                m = take(shape)
                v = take(shape)
                states.append(AdamState(opt.lr, opt.beta1, opt.beta2, opt.eps, m, v, int(k)))
        opt.states = states
        return opt
