"""Model-inversion by alternating descent on a mock input and a clone network.

The attacker knows the client architecture and the transmitted activations,
nothing else. It starts from a constant mock input and a freshly initialised
clone, then alternates between fitting the input (activation MSE plus a total
variation prior) and fitting the clone weights (activation MSE only).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from splitlab import nn, rng
from splitlab.attacks.report import AttackReport
from splitlab.optim import AdamState, adam_step_standard


@dataclass
class UnsplitConfig:
    lam: float = 0.0
    rounds: int = 50
    input_steps: int = 100
    input_lr: float = 0.001
    weight_steps: int = 100
    weight_lr: float = 0.01
    init_constant: float = 0.5
    clamp: tuple[float, float] | None = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("rounds", "input_steps", "weight_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be finite and non-negative")
        if not (self.input_lr > 0 and self.weight_lr > 0):
            raise ValueError("learning rates must be positive")


def _objective(clone, X_mock, H, lam, want_input_grad=True, want_param_grad=False):
    out, cache = nn.forward(clone, X_mock)
    if out.shape != H.shape:
        raise nn.ShapeError(f"clone output {out.shape} != target activations {H.shape}")
    fit, g = nn.loss_mse(out, H)
    grads, g_in = nn.backward(clone, cache, g, need_input_grad=want_input_grad)
    tv, g_tv = 0.0, None
    if lam > 0 and X_mock.ndim == 4:
        tv, g_tv = nn.total_variation(X_mock)
        if want_input_grad:
            g_in = g_in + lam * g_tv
    return fit, tv, grads, g_in


def unsplit_attack(target_H, make_clone: Callable[[np.random.Generator], nn.Network],
                   input_shape, cfg: UnsplitConfig | None = None,
                   monitor: Callable[[np.ndarray], dict] | None = None) -> AttackReport:
    """Reconstruct client inputs from ``target_H``.

    ``make_clone`` builds the client architecture with attacker-chosen random
    weights. ``monitor`` is an evaluator hook called with the current mock
    input after each round; whatever it returns (e.g. ``{"mse_x": ...}``) is
    added to the curves. The attack itself never sees the true inputs.
    """
    cfg = cfg or UnsplitConfig()
    H = nn.as_tensor(target_H, "target activations")
    clone = make_clone(rng.stream(cfg.seed, "attack.unsplit.clone"))
    X_mock = np.full(tuple(input_shape), cfg.init_constant, dtype=np.float64)
    x_state = AdamState(cfg.input_lr)
    w_states = [AdamState(cfg.weight_lr) for _ in clone.get_params()]

    best = (np.inf, X_mock.copy(), np.inf)
    report = AttackReport(X_mock)
    for r in range(cfg.rounds):
        for _ in range(cfg.input_steps):
            _, _, _, g_in = _objective(clone, X_mock, H, cfg.lam)
            X_mock, x_state = adam_step_standard(X_mock, g_in, x_state)
            if cfg.clamp is not None:
                X_mock = np.clip(X_mock, *cfg.clamp)
        for _ in range(cfg.weight_steps):
            _, _, grads, _ = _objective(clone, X_mock, H, 0.0, want_input_grad=False)
            new = []
            for i, (p, g) in enumerate(zip(clone.get_params(), clone.flat_grads(grads))):
                p, w_states[i] = adam_step_standard(p, g, w_states[i])
                new.append(p)
            clone.set_params(new)
        fit, tv, _, _ = _objective(clone, X_mock, H, cfg.lam, want_input_grad=False)
        obj = fit + cfg.lam * tv
        if obj < best[0]:
            best = (obj, X_mock.copy(), fit)
        extra = monitor(X_mock) if monitor is not None else {}
        report.log(step=r, mse_z=fit, **extra)

    report.reconstruction = best[1]
    report.mse_z = best[2]
    return report
