"""Feature-space hijacking by a malicious label-holding server.

The server trains an encoder/decoder pair on public data and a discriminator
that separates encoder outputs from the client's activations. Instead of
honest gradients it returns the gradient of an adversarial loss on the
client's activations, pulling the client's feature space towards the
encoder's. Reconstructions are the decoder applied to client activations.

``loss_convention="paper"`` uses the saturating form: the discriminator
minimises ``log(1 - D(enc(X_pub))) + log(D(H))`` and the client is pushed
down ``log(1 - D(H))``. ``"classic"`` uses the non-saturating binary
cross-entropy pair (``-log D(enc) - log(1 - D(H))`` and ``-log D(H)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from splitlab import nn, rng
from splitlab.attacks.report import AttackReport
from splitlab.optim import AdamState, adam_step_standard
from splitlab.protocol import ServerBehavior, SplitSession, run_split_training

P_CLAMP = 1e-7


@dataclass
class FshaConfig:
    make_encoder: Callable[[np.random.Generator], nn.Network]
    make_decoder: Callable[[np.random.Generator], nn.Network]
    make_discriminator: Callable[[np.random.Generator], nn.Network]
    public: np.ndarray = field(repr=False, default=None)
    ae_lr: float = 1e-3
    disc_lr: float = 1e-3
    public_batch: int = 32
    loss_convention: str = "paper"
    seed: int = 0

    def __post_init__(self):
        if self.loss_convention not in ("paper", "classic"):
            raise ValueError("loss_convention must be 'paper' or 'classic'")
        if self.public is None or len(self.public) == 0:
            raise ValueError("FSHA needs a public dataset")


class _Trainer:
    """Adam over every parameter array of one network."""

    def __init__(self, net: nn.Network, lr: float):
        self.net = net
        self.states = [AdamState(lr) for _ in net.get_params()]

    def step(self, grads):
        new = []
        for i, (p, g) in enumerate(zip(self.net.get_params(), self.net.flat_grads(grads))):
            p, self.states[i] = adam_step_standard(p, g, self.states[i])
            new.append(p)
        self.net.set_params(new)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _disc_terms(z, target_high: bool, convention: str):
    """Mean loss over logits ``z`` and its gradient, for one side of the game.

    ``target_high`` marks the side the discriminator should score near 1.
    Probabilities are clamped to ``[P_CLAMP, 1 - P_CLAMP]``; the gradient is
    zero where the clamp is active.
    """
    p = _sigmoid(z)
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    active = (p == pc).astype(np.float64)
    n = z.shape[0]
    if convention == "paper":
        # minimise log(1 - p) on the high side and log(p) on the low side
        if target_high:
            return float(np.mean(np.log(1.0 - pc))), -p * active / n
        return float(np.mean(np.log(pc))), (1.0 - p) * active / n
    if target_high:
        return float(-np.mean(np.log(pc))), -(1.0 - p) * active / n
    return float(-np.mean(np.log(1.0 - pc))), p * active / n


def _client_terms(z, convention: str):
    """Loss the server pretends the client is minimising, with d/dz."""
    p = _sigmoid(z)
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    active = (p == pc).astype(np.float64)
    n = z.shape[0]
    if convention == "paper":
        return float(np.mean(np.log(1.0 - pc))), -p * active / n
    return float(-np.mean(np.log(pc))), -(1.0 - p) * active / n


class FshaServer:
    """Gradient responder implementing the hijacking server."""

    def __init__(self, cfg: FshaConfig, monitor: Callable | None = None):
        self.cfg = cfg
        self.encoder = cfg.make_encoder(rng.stream(cfg.seed, "attack.fsha.encoder"))
        self.decoder = cfg.make_decoder(rng.stream(cfg.seed, "attack.fsha.decoder"))
        self.disc = cfg.make_discriminator(rng.stream(cfg.seed, "attack.fsha.discriminator"))
        self._enc = _Trainer(self.encoder, cfg.ae_lr)
        self._dec = _Trainer(self.decoder, cfg.ae_lr)
        self._dis = _Trainer(self.disc, cfg.disc_lr)
        self._rng = rng.stream(cfg.seed, "attack.fsha.public_batches")
        self.public = nn.as_tensor(cfg.public, "public data")
        self.monitor = monitor
        self.report = AttackReport(np.zeros(0))

    def _public_batch(self):
        n = len(self.public)
        idx = self._rng.choice(n, size=min(self.cfg.public_batch, n), replace=False)
        return self.public[idx]

    def autoencoder_step(self, Xp) -> float:
        Z, c_enc = nn.forward(self.encoder, Xp)
        R, c_dec = nn.forward(self.decoder, Z)
        err, g = nn.loss_mse(R, Xp)
        g_dec, gZ = nn.backward(self.decoder, c_dec, g)
        g_enc, _ = nn.backward(self.encoder, c_enc, gZ, need_input_grad=False)
        self._dec.step(g_dec)
        self._enc.step(g_enc)
        return err

    def discriminator_step(self, Z_pub, H) -> float:
        conv = self.cfg.loss_convention
        z_pub, c_pub = nn.forward(self.disc, Z_pub)
        l_pub, g_pub = _disc_terms(z_pub, True, conv)
        grads_pub, _ = nn.backward(self.disc, c_pub, g_pub, need_input_grad=False)
        z_cli, c_cli = nn.forward(self.disc, H)
        l_cli, g_cli = _disc_terms(z_cli, False, conv)
        grads_cli, _ = nn.backward(self.disc, c_cli, g_cli, need_input_grad=False)
        total = [{k: grads_pub[i][k] + grads_cli[i][k] for k in grads_pub[i]} for i in range(len(grads_pub))]
        self._dis.step(total)
        return l_pub + l_cli

    def client_gradient(self, H) -> tuple[np.ndarray, float]:
        z, cache = nn.forward(self.disc, H)
        loss, g = _client_terms(z, self.cfg.loss_convention)
        _, gH = nn.backward(self.disc, cache, g)
        return gH, loss

    def reconstruct(self, H) -> np.ndarray:
        return nn.forward(self.decoder, H)[0]

    def respond(self, step: int, H: np.ndarray):
        Xp = self._public_batch()
        ae_err = self.autoencoder_step(Xp)
        Z_pub, _ = nn.forward(self.encoder, Xp)
        self.discriminator_step(Z_pub, H)
        G, loss = self.client_gradient(H)
        extra = self.monitor(step, H, self) if self.monitor is not None else {}
        self.report.log(step=step, enc_dec_err=ae_err, **extra)
        return G, loss


def fsha_attack(session: SplitSession, cfg: FshaConfig, steps: int,
                evaluate_on: np.ndarray | None = None) -> tuple[AttackReport, SplitSession]:
    """Run split training against a hijacking server for ``steps`` rounds.

    ``evaluate_on`` (defaults to the session's private features) is the
    evaluator's view used for the ``recon_err`` curve and final scores: the
    decoder output on the client's activations versus the true inputs.
    """
    X_eval = session.X if evaluate_on is None else nn.as_tensor(evaluate_on)
    sched = session.schedule_fn()

    def monitor(step, H, server):
        X_batch = session.X[sched(step)]
        R = server.reconstruct(H)
        return {"recon_err": float(np.mean((R - X_batch) ** 2))}

    server = FshaServer(cfg, monitor)
    s = session.copy()
    s.behavior = ServerBehavior("fsha", responder=server)
    s, _ = run_split_training(s, steps)
    H_final, _ = nn.forward(s.client_net, X_eval)
    report = server.report
    report.reconstruction = server.reconstruct(H_final).reshape(X_eval.shape)
    report.mse_z = float("nan")
    return report, s
