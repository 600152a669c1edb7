"""The twelve acceptance criteria at their stated tolerances.

Each test logs one ``PASS``/``FAIL`` line (collected in the terminal summary)
and then asserts. Run directly with ``python tests/test_acceptance.py`` to get
just the lines.
"""

import math
import os
import time

import numpy as np
import pytest

from splitlab import defenses, nn, rng
from splitlab.analysis import verify
from splitlab.analysis.metrics import mse
from splitlab.attacks.fsha import FshaConfig, fsha_attack
from splitlab.attacks.unsplit import UnsplitConfig, unsplit_attack
from splitlab.harness import architectures
from splitlab.harness.config import ExperimentConfig
from splitlab.harness.data import synthetic_blobs
from splitlab.harness.experiment import ExperimentError, read_summary, run_experiment
from splitlab.optim import Optimizer
from splitlab.protocol import SplitSession, run_split_training, run_split_training_channeled, trace_bytes
from splitlab.wire import MsgType, WireMessage, decode_message, encode_message

MNIST_ENV = "SPLITLAB_MNIST_DIR"
MNIST_DEFAULT = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "mnist")


def timed(fn, *a, **kw):
    t = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t


def finish(log, n, ok, detail):
    log(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}")
    assert ok, detail


# 1 ----------------------------------------------------------------------


def test_01_twin_activations(acceptance_log):
    r, secs = timed(verify.verify_lemma1, d=32, d_h=16, n=256, steps=100, batch_sizes=(None, 7))
    ok = r.deviation <= 1e-9 and secs < 5
    finish(acceptance_log, 1, ok, f"max |H - H~| = {r.deviation:.2e} (<= 1e-9), {secs:.2f}s (< 5s)")


# 2 ----------------------------------------------------------------------


def test_02_fake_gradient_closed_form(acceptance_log):
    t = time.perf_counter()
    reports = [verify.verify_lemma2_fake_gradients(steps=10, bias=b) for b in (False, True)]
    secs = time.perf_counter() - t
    closed = max(r.checks[0].value for r in reports)
    gram = max(r.checks[1].value for r in reports)
    ok = closed <= 1e-10 and gram <= 1e-10 and secs < 1
    finish(acceptance_log, 2, ok, f"closed form {closed:.2e}, pair Gram {gram:.2e} (<= 1e-10), {secs:.2f}s (< 1s)")


# 3 ----------------------------------------------------------------------


def test_03_cut_layer_rotation(acceptance_log):
    r = verify.verify_lemma3_cutlayer("mlp", steps=50)
    h, theta = r.checks[0].value, r.checks[1].value
    finish(acceptance_log, 3, h <= 1e-9 and theta <= 1e-9,
           f"H gap {h:.2e}, prefix gradient gap {theta:.2e} (<= 1e-9)")


# 4 ----------------------------------------------------------------------


def test_04_adam_breaks_invariance(acceptance_log):
    devs = [verify.adam_twin_deviation(s, steps=5) for s in range(20)]
    ident = verify.adam_twin_deviation(0, steps=5, U=np.eye(32))
    hits = sum(d >= 1e-3 for d in devs)
    finish(acceptance_log, 4, hits == 20 and ident == 0.0,
           f"{hits}/20 seeds deviate >= 1e-3 (min {min(devs):.3f}); U = I deviation {ident!r}")


# 5 ----------------------------------------------------------------------


def test_05_rotation_example(acceptance_log):
    r, secs = timed(verify.reproduce_rotation_example)
    c = {k.name: k.value for k in r.checks}
    fa, fb, f0 = c["final f, untransformed"], c["final f, rotated"], c["initial f gap"]
    ok = fa < 0.1 and fb > 1.0 and f0 <= 1e-12 and secs < 1
    finish(acceptance_log, 5, ok, f"f_A = {fa:.3g} (< 0.1), f_B = {fb:.3g} (> 1.0), "
                                  f"initial gap {f0:.1e}, {secs:.2f}s")


# 6 ----------------------------------------------------------------------


def test_06_inequality_certificates(acceptance_log):
    worst = {}
    for fn in (verify.verify_precond_bounds, verify.verify_descent, verify.verify_pl_contraction):
        r = fn(kappas=(1.0, 100.0), steps=200)
        worst[r.claim] = r.deviation
    ok = all(v <= verify.SLACK for v in worst.values())
    finish(acceptance_log, 6, ok, ", ".join(f"{k} worst {v:.2e}" for k, v in worst.items()) + " (<= 1e-9)")


# 7 ----------------------------------------------------------------------


def _fd(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def _layer_err(layer, x, g):
    out, cache = layer.forward(x)
    R = g.standard_normal(out.shape)
    grads, gx = layer.backward(cache, R)
    errs = [_rel(gx, _fd(lambda xx: float(np.sum(layer.forward(xx)[0] * R)), x))]
    for name, p in layer.params().items():
        def obj(pp, name=name):
            old = getattr(layer, name)
            setattr(layer, name, pp)
            try:
                return float(np.sum(layer.forward(x)[0] * R))
            finally:
                setattr(layer, name, old)
        errs.append(_rel(grads[name], _fd(obj, p.copy())))
    return max(errs)


def _away_from_kinks(x):
    x = x.copy()
    x[np.abs(x) < 1e-3] = 0.5
    return x


def _instances():
    cases = {
        "dense": lambda g: (nn.Dense.init(int(g.integers(1, 6)), 4, g, bias=bool(g.integers(2))), None),
        "conv2d": lambda g: (nn.Conv2d.init(int(g.integers(1, 3)), 2, int(g.integers(1, 4)), g,
                                            stride=int(g.integers(1, 3))), None),
        "relu": lambda g: (nn.ReLU(), _away_from_kinks(g.standard_normal((3, 5)))),
        "maxpool": lambda g: (nn.MaxPool(2), g.permutation(np.arange(2 * 2 * 6 * 6.0)).reshape(2, 2, 6, 6) * 0.01),
        "flatten": lambda g: (nn.Flatten(), g.standard_normal((2, 2, 3, 3))),
        "reshape": lambda g: (nn.Reshape((2, 3)), g.standard_normal((3, 6))),
        "sigmoid": lambda g: (nn.Sigmoid(), g.standard_normal((3, 4))),
        "rotation": lambda g: (nn.FixedRotation(defenses.random_orthogonal(4, int(g.integers(1 << 30)))),
                               g.standard_normal((3, 4))),
    }
    return cases


def _loss_errs(g):
    P = g.standard_normal((4, 3))
    T = g.standard_normal((4, 3))
    y = g.integers(0, 3, 4)
    img = g.uniform(0, 1, (2, 1, 4, 4))
    return [
        _rel(nn.loss_mse(P, T)[1], _fd(lambda p: nn.loss_mse(p, T)[0], P)),
        _rel(nn.loss_cross_entropy(P, y)[1], _fd(lambda p: nn.loss_cross_entropy(p, y)[0], P)),
        _rel(nn.total_variation(img)[1], _fd(lambda p: nn.total_variation(p)[0], img)),
    ]


def test_07_gradient_correctness(acceptance_log):
    worst = {}
    for name, make in _instances().items():
        for s in range(50):
            g = np.random.default_rng(s)
            layer, x = make(g)
            if x is None and isinstance(layer, nn.Dense):
                x = g.standard_normal((3, layer.d_in))
            elif x is None:
                k = layer.W.shape[-1]
                x = g.standard_normal((2, layer.W.shape[1], k + 3, k + 2))
            worst[name] = max(worst.get(name, 0.0), _layer_err(layer, x, g))
    for s in range(50):
        for name, e in zip(("mse", "cross_entropy", "total_variation"), _loss_errs(np.random.default_rng(s))):
            worst[name] = max(worst.get(name, 0.0), e)
    top = max(worst, key=worst.get)
    finish(acceptance_log, 7, worst[top] <= 1e-5,
           f"{len(worst)} layers/losses x 50 instances, worst relative error {worst[top]:.1e} ({top}) (<= 1e-5)")


# 8 ----------------------------------------------------------------------

IMG = (1, 8, 8)
UNSPLIT_BUDGET = dict(rounds=100, input_steps=20, weight_steps=20, input_lr=0.01, weight_lr=0.001, lam=0.0)


def _unsplit(arch, seed, X):
    make = architectures.client_factory(arch, IMG, 4)
    client = make(rng.stream(seed, "acceptance.unsplit.client"))
    H, _ = nn.forward(client, X)
    rep = unsplit_attack(H, make, X.shape, UnsplitConfig(seed=seed, **UNSPLIT_BUDGET))
    return rep.mse_z, mse(rep.reconstruction, X)


def test_08_unsplit_pattern(acceptance_log):
    X = synthetic_blobs(32, 4, 0, image=IMG[1:]).images
    t = time.perf_counter()
    dense = [_unsplit("dense", s, X) for s in range(5)]
    conv = [_unsplit("conv2", s, X) for s in range(5)]
    secs = time.perf_counter() - t
    z_d, x_d = np.median([d[0] for d in dense]), np.median([d[1] for d in dense])
    x_c = np.median([c[1] for c in conv])
    ordering = z_d <= 1e-4 and x_d >= 10 * z_d * 1e3
    contrast = x_c <= 0.5 * x_d
    finish(acceptance_log, 8, ordering and contrast and secs < 600,
           f"dense MSE_Z {z_d:.1e}, MSE_X {x_d:.3f} (ordering {'ok' if ordering else 'fails'}); "
           f"conv MSE_X {x_c:.3f} vs half dense {0.5 * x_d:.3f} ({'ok' if contrast else 'fails'}); {secs:.0f}s")


# 9 ----------------------------------------------------------------------

FSHA_STEPS = 4000


def _fsha(arch, seed, priv, pub):
    client, server = architectures.split(arch, IMG, 4, rng.stream(seed, "acceptance.fsha.client"))
    width = client.output_shape((1, *IMG))[1]
    session = SplitSession(client, server, priv.images, priv.labels, Optimizer("adam", 1e-3),
                           Optimizer("adam", 1e-3), batch_size=32, seed=seed)
    cfg = FshaConfig(lambda g: architectures.fsha_encoder(IMG, g),
                     lambda g: architectures.fsha_decoder(width, IMG, g),
                     lambda g: architectures.fsha_discriminator(width, g),
                     public=pub.images, loss_convention="classic", seed=seed)
    rep, _ = fsha_attack(session, cfg, FSHA_STEPS)
    ed = np.asarray(rep.curves["enc_dec_err"])
    w = FSHA_STEPS // 10
    return mse(rep.reconstruction, priv.images), ed[:w].mean() > ed[-w:].mean()


def test_09_fsha_contrast(acceptance_log):
    priv = synthetic_blobs(256, 4, 0, image=IMG[1:])
    pub = synthetic_blobs(256, 4, 0, image=IMG[1:], split="public")
    t = time.perf_counter()
    dense = [_fsha("dense", s, priv, pub) for s in range(5)]
    conv = [_fsha("conv2", s, priv, pub) for s in range(5)]
    secs = time.perf_counter() - t
    m_d, m_c = np.median([d[0] for d in dense]), np.median([c[0] for c in conv])
    falling = all(d[1] for d in dense + conv)
    finish(acceptance_log, 9, m_c < m_d and falling and secs < 900,
           f"median reconstruction MSE conv {m_c:.4f} vs dense {m_d:.4f}; "
           f"encoder-decoder curves decrease in {sum(d[1] for d in dense + conv)}/10 runs; {secs:.0f}s")


# 10 ---------------------------------------------------------------------


def test_10_dp_calibration(acceptance_log):
    g = rng.stream(0, "acceptance.dp")
    bad = []
    for _ in range(100):
        eps, delta, sens = g.uniform(0.01, 1.0), 10 ** g.uniform(-9, -2), g.uniform(0.1, 10.0)
        s = defenses.dp_calibrate_sigma(eps, delta, sens)
        holds = defenses.analytic_gaussian_delta(eps, sens, s) <= delta
        tight = defenses.analytic_gaussian_delta(eps, sens, 0.99 * s) > delta
        below = s <= defenses.classical_sigma(eps, delta, sens)
        if not (holds and tight and below):
            bad.append((eps, delta, sens))
    finish(acceptance_log, 10, not bad, f"{100 - len(bad)}/100 random (eps, delta, sensitivity) triples calibrated")


# 11 ---------------------------------------------------------------------


def test_11_mnist_utility_floor(acceptance_log, tmp_path):
    path = os.environ.get(MNIST_ENV, MNIST_DEFAULT)
    cfg = ExperimentConfig()
    for key, value in {"data.source": "mnist", "data.path": path, "data.image": "28", "data.n_train": "8000",
                       "data.n_test": "0", "model.arch": "mlp", "optim.lr": "0.001", "optim.server_lr": "0.001",
                       "optim.batch_size": "64", "run.epochs": "5", "run.out": str(tmp_path)}.items():
        cfg.set(key, value)
    try:
        _, secs = timed(run_experiment, cfg)
    except ExperimentError as e:
        finish(acceptance_log, 11, False, f"MNIST unavailable ({e}); set {MNIST_ENV}")
    acc = float(read_summary(tmp_path / "summary.csv")["accuracy"])
    finish(acceptance_log, 11, acc >= 0.90 and secs < 300, f"test accuracy {acc:.4f} (>= 0.90), {secs:.0f}s")


# 12 ---------------------------------------------------------------------


def _random_frame(g):
    kind = MsgType(int(g.integers(0, 5)))
    step = int(g.integers(0, 2**64, dtype=np.uint64))
    if kind in (MsgType.FORWARD_ACT, MsgType.BACKWARD_GRAD):
        shape = tuple(int(v) for v in g.integers(0, 7, 2))
        return WireMessage(kind, step, g.standard_normal(shape) * 10.0 ** g.integers(-300, 300))
    if kind == MsgType.METRIC:
        return WireMessage.metric(step, float(g.standard_normal()))
    return WireMessage(kind, step)


def test_12_protocol_determinism(acceptance_log):
    g = np.random.default_rng(0)
    X, y = g.standard_normal((50, 6)), g.integers(0, 3, 50)
    client = nn.Network([nn.Dense.init(6, 5, g), nn.ReLU()])
    server = nn.Network([nn.Dense.init(5, 3, g)])
    s = SplitSession(client, server, X, y, Optimizer("adam", 1e-2), Optimizer("adam", 1e-2), batch_size=8, seed=3)
    ref = trace_bytes(run_split_training(s, 20)[1])
    same = {t: trace_bytes(run_split_training_channeled(s, 20, t)[1]) == ref for t in ("inproc", "socket")}
    fg = rng.stream(0, "acceptance.frames")
    bad = 0
    for _ in range(10**4):
        m = _random_frame(fg)
        data = encode_message(m)
        if decode_message(data) != m or encode_message(decode_message(data)) != data:
            bad += 1
    ok = all(same.values()) and bad == 0
    finish(acceptance_log, 12, ok, f"queue/socket traces identical to in-process: {same}; "
                                   f"{10**4 - bad}/10000 random frames round-trip")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
