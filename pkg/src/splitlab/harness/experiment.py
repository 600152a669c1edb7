"""Compose data, model, defense and attack into one reproducible run."""

from __future__ import annotations

import csv
import datetime
import math
import os

import numpy as np

from splitlab import checkpoint, defenses, nn, rng
from splitlab.analysis import metrics
from splitlab.attacks.fake_gradient import fake_gradient_probe, recover_gram
from splitlab.attacks.fsha import FshaConfig, fsha_attack
from splitlab.attacks.report import write_pgm_grid
from splitlab.attacks.unsplit import UnsplitConfig, unsplit_attack
from splitlab.harness import architectures
from splitlab.harness.config import ExperimentConfig
from splitlab.harness.data import Dataset, find_mnist, load_idx, synthetic_blobs
from splitlab.optim import Optimizer
from splitlab.protocol import ProtocolError, SplitSession, run_split_training, run_split_training_channeled


class ExperimentError(RuntimeError):
    pass


def load_mnist(directory, n_train: int = 8000, n_test: int = 0, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded train subset of ``n_train`` images and ``n_test`` test images (0 = all)."""
    paths = find_mnist(directory)
    if paths is None:
        raise FileNotFoundError(f"MNIST IDX files not found in {directory!r}")
    train = load_idx(*paths["train"], split="train")
    test = load_idx(*paths["test"], split="test")
    if 0 < n_train < len(train):
        train = train.subset(np.sort(rng.stream(seed, "data.mnist.train").choice(len(train), n_train, replace=False)))
    if 0 < n_test < len(test):
        test = test.subset(np.sort(rng.stream(seed, "data.mnist.test").choice(len(test), n_test, replace=False)))
    return train, test


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    d, seed = cfg.data, cfg.run.seed
    if d.source == "mnist":
        train, test = load_mnist(d.path, d.n_train, d.n_test, seed)
        # public data for the hijacker: test images the client never trains on
        k = min(d.n_public, len(test))
        public = test.subset(np.arange(k), "public")
        return train, test, public
    hw = (d.image, d.image)
    return (synthetic_blobs(d.n_train, d.classes, seed, image=hw),
            synthetic_blobs(d.n_test, d.classes, seed, image=hw, split="test"),
            synthetic_blobs(d.n_public, d.classes, seed, image=hw, split="public"))


def _stamp(f) -> None:
    f.write(f"# generated {datetime.datetime.now(datetime.timezone.utc).isoformat()}\n")


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        _stamp(f)
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _defend(cfg, client, X):
    """Apply the configured defense; returns ``(client, X, dp_sigma)``."""
    kind = cfg.defense.kind
    if kind == "none":
        return client, X, 0.0
    if kind == "dp":
        dp = cfg.dp
        return client, X, defenses.DpConfig(dp.epsilon, dp.delta, dp.sensitivity, dp.sigma or None).sigma
    U_seed = cfg.run.seed
    if kind == "orth":
        layers = list(client.layers)
        if layers and isinstance(layers[0], nn.Flatten):
            layers = layers[1:]
            X = X.reshape(len(X), -1)
        if not layers or not isinstance(layers[0], nn.Dense):
            raise ExperimentError("defense 'orth' needs a dense first client layer")
        U = defenses.random_orthogonal(layers[0].d_in, U_seed)
        net, X = defenses.transform_client(nn.Network(layers), X, U)
        return net, X, 0.0
    dense = [l for l in client.layers if isinstance(l, nn.Dense)]
    if not dense:
        raise ExperimentError("defense 'cut_rotation' needs a dense cut layer")
    U = defenses.random_orthogonal(dense[-1].d_in, U_seed, "defense.cut_rotation")
    return defenses.insert_fixed_rotation_at_cut(client, U), X, 0.0


def _train(session, steps, transport):
    try:
        if transport == "inproc":
            return run_split_training(session, steps)
        return run_split_training_channeled(session, steps, transport)
    except (ProtocolError, nn.ShapeError, ValueError) as e:
        raise ExperimentError(f"training failed: {e}") from e


def run_experiment(cfg: ExperimentConfig) -> str:
    """Run ``cfg`` and return the output directory.

    Writes ``summary.csv`` always; ``metrics.csv`` and checkpoints when any
    training happens; attack curves and reconstruction PGMs for attacks.
    """
    cfg.validate()
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as f:
        f.write(cfg.dumps())

    try:
        train, test, public = load_data(cfg)
    except (OSError, ValueError) as e:
        raise ExperimentError(f"loading data: {e}") from e
    summary = [("n_train", len(train)), ("n_test", len(test)), ("classes", train.classes),
               ("input_shape", "x".join(map(str, train.images.shape[1:]))),
               ("pixel_mean", float(train.images.mean()))]

    seed = cfg.run.seed
    batch = cfg.optim.batch_size or None
    steps = cfg.run.steps
    if cfg.run.epochs > 0:
        steps = cfg.run.epochs * math.ceil(len(train) / (batch or len(train)))
    attack = cfg.attack.kind
    if steps == 0 and attack == "none":
        _write_rows(os.path.join(out, "summary.csv"), ("key", "value"), [(k, _fmt(v)) for k, v in summary])
        return out

    shape = train.images.shape[1:]
    client, server = architectures.split(cfg.model.arch, shape, train.classes,
                                         rng.stream(seed, "model.init"), cfg.cut)
    client, X, sigma = _defend(cfg, client, train.images)
    session = SplitSession(client, server, X, train.labels,
                           Optimizer(cfg.optim.name, cfg.optim.lr),
                           Optimizer(cfg.optim.name, cfg.optim.server_lr),
                           batch_size=batch, seed=seed, dp_sigma=sigma)
    targets = min(cfg.attack.targets, len(train)) if cfg.attack.targets else len(train)
    report = None

    if attack == "fsha":
        width = session.client_net.output_shape((1, *X.shape[1:]))[1]

        def encoder(g):
            enc = architectures.fsha_encoder(shape, g)
            w = enc.output_shape((1, *shape))[1]
            return enc if w == width else nn.Network(enc.layers + [nn.Dense.init(w, width, g)])

        fcfg = FshaConfig(encoder, lambda g: architectures.fsha_decoder(width, shape, g),
                          lambda g: architectures.fsha_discriminator(width, g),
                          public=public.images, ae_lr=cfg.fsha.ae_lr, disc_lr=cfg.fsha.disc_lr,
                          loss_convention=cfg.fsha.loss_convention, seed=seed)
        try:
            report, session = fsha_attack(session, fcfg, steps, evaluate_on=X[:targets])
        except (ProtocolError, ValueError) as e:
            raise ExperimentError(f"fsha attack failed: {e}") from e
        report.reconstruction = report.reconstruction.reshape(train.images[:targets].shape)
        report.score(train.images[:targets], train.labels[:targets])
        trace = session.trace
    else:
        session, trace = _train(session, steps, cfg.run.transport)

    if trace:
        _write_rows(os.path.join(out, "metrics.csv"), ("step", "loss"),
                    [(r.step, repr(r.loss)) for r in trace])
        checkpoint.save(os.path.join(out, "client.slnn"), session.client_net, [session.client_opt])
        checkpoint.save(os.path.join(out, "server.slnn"), session.server_net, [session.server_opt])
        summary += [("steps", len(trace)), ("final_loss", trace[-1].loss)]
    if attack != "fsha":
        X_test = test.images
        if cfg.defense.kind == "orth":
            # the defended client expects rotated flat rows; rotate test data the same way
            U = defenses.random_orthogonal(X.shape[1], seed)
            X_test = X_test.reshape(len(X_test), -1) @ U
        pred = np.argmax(session.predict(X_test), axis=1)
        summary.append(("accuracy", float(np.mean(pred == test.labels))))

    if attack == "unsplit":
        H, _ = nn.forward(session.client_net, X[:targets])
        u = cfg.unsplit
        ucfg = UnsplitConfig(lam=u.lam, rounds=u.rounds, input_steps=u.input_steps, input_lr=u.input_lr,
                             weight_steps=u.weight_steps, weight_lr=u.weight_lr, seed=seed)
        truth = train.images[:targets]

        def monitor(X_mock):
            return {"mse_x": metrics.mse(X_mock, truth)}

        make_clone = architectures.client_factory(cfg.model.arch, shape, train.classes, cfg.cut)
        report = unsplit_attack(H, make_clone, truth.shape, ucfg, monitor).score(truth, train.labels[:targets])
    elif attack == "fake_grad":
        layers = [l for l in session.client_net.layers if not isinstance(l, nn.Flatten)]
        if len(layers) != 1 or not isinstance(layers[0], nn.Dense):
            raise ExperimentError("fake_grad attack needs a single dense client layer")
        Xf = X[:targets].reshape(targets, -1)
        probe_steps = max(2, min(steps, 10))
        d_h = layers[0].d_out
        fakes = [0.1 * rng.stream(seed, f"attack.fake.{k}").standard_normal((targets, d_h))
                 for k in range(probe_steps)]
        tr = fake_gradient_probe(nn.Network(layers), Xf, fakes, probe_steps)
        K = recover_gram(tr.H[0], tr.H[1], tr.G[0], tr.lr, bias=layers[0].b is not None)
        summary.append(("gram_recovery_err", float(np.max(np.abs(K - Xf @ Xf.T)))))

    if report is not None:
        summary += [("mse_x", report.mse_x), ("mse_z", report.mse_z), ("proxy_fid", report.proxy_fid)]
        summary += [(f"mse_x_class{c}", v) for c, v in enumerate(report.per_class_mse)]
        report.save(out, attack)
        if report.reconstruction.ndim == 4:
            write_pgm_grid(os.path.join(out, f"{attack}_truth.pgm"), train.images[:targets])
    _write_rows(os.path.join(out, "summary.csv"), ("key", "value"), [(k, _fmt(v)) for k, v in summary])
    return out


def read_summary(path) -> dict:
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(line for line in f if not line.startswith("#"))]
    return {k: v for k, v in rows[1:]}
