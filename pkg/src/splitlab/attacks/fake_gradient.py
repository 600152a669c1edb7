"""Malicious server that replies with scheduled gradients instead of real ones.

Against a one-layer dense client trained by full-batch SGD, the activations
after ``k`` fake replies are ``H_{k+1} = X W_1 - lr * X X^T sum_i G_i`` (plus
``-lr * 1 1^T sum_i G_i`` when the layer has a bias), so a server that knows
``W_1`` learns ``X X^T`` from the activation trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splitlab import nn
from splitlab.optim import Optimizer
from splitlab.protocol import ServerBehavior, SplitSession, run_split_training


@dataclass
class ProbeTrace:
    H: list  # observed activations, one per step (H_1 .. H_steps)
    G: list  # fake gradients sent
    lr: float


def fake_gradient_probe(client: nn.Network, X, schedule, steps: int, lr: float = 0.1) -> ProbeTrace:
    """Run ``steps`` protocol rounds where the server returns ``schedule[k]``.

    The client is one dense layer, optionally preceded by a frozen rotation.
    """
    kinds = [type(l) for l in client.layers]
    if kinds not in ([nn.Dense], [nn.FixedRotation, nn.Dense]):
        raise ValueError("the probe targets a dense client layer, optionally after a fixed rotation")
    X = nn.as_tensor(X, "features")
    n, d_h = X.shape[0], client.layers[-1].d_out
    schedule = [np.asarray(g, dtype=np.float64) for g in schedule]
    if len(schedule) < steps:
        raise ValueError(f"schedule has {len(schedule)} entries for {steps} steps")
    for k, g in enumerate(schedule[:steps]):
        if g.shape != (n, d_h):
            raise nn.ShapeError(f"schedule entry {k} has shape {g.shape}, expected {(n, d_h)}")
    # the server network only has to accept H; its output is ignored
    server = nn.Network([nn.Dense(np.zeros((d_h, 1)))])
    session = SplitSession(client, server, X, np.zeros((n, 1)), Optimizer("sgd", lr),
                           Optimizer("sgd", 1.0), loss="mse", batch_size=None,
                           behavior=ServerBehavior("fake_gradient", schedule=schedule))
    _, trace = run_split_training(session, steps)
    return ProbeTrace([r.H for r in trace], [r.G for r in trace], lr)


def closed_form_activations(X, W1, b1, fakes, lr: float) -> list[np.ndarray]:
    """Predicted activations ``H_1 .. H_{k+1}`` under full-batch SGD."""
    X = np.asarray(X, dtype=np.float64)
    H1 = X @ W1 + (0.0 if b1 is None else b1)
    K = X @ X.T
    if b1 is not None:
        K = K + np.ones_like(K)
    out = [H1]
    acc = np.zeros_like(H1)
    for G in fakes:
        acc = acc + G
        out.append(H1 - lr * K @ acc)
    return out


def recover_gram(H1, H2, G1, lr: float, bias: bool = False) -> np.ndarray:
    """Server-side estimate of ``X X^T`` from one step: ``(H1 - H2) G1^+ / lr``.

    Exact when ``G1`` has full row rank (``d_h >= n``).
    """
    K = (np.asarray(H1) - np.asarray(H2)) @ np.linalg.pinv(G1) / lr
    return K - 1.0 if bias else K
