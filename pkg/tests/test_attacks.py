import csv

import numpy as np
import pytest

from splitlab import checkpoint, nn
from splitlab.attacks.fake_gradient import closed_form_activations, fake_gradient_probe, recover_gram
from splitlab.attacks.fsha import FshaConfig, fsha_attack
from splitlab.attacks.report import AttackReport, read_pgm, to_pgm_bytes, write_pgm_grid
from splitlab.attacks.unsplit import UnsplitConfig, unsplit_attack
from splitlab.harness import architectures
from splitlab.harness.data import synthetic_blobs
from splitlab.optim import Optimizer
from splitlab.protocol import SplitSession


@pytest.mark.parametrize("bias", [False, True])
def test_fake_gradient_closed_form_and_gram(bias):
    g = np.random.default_rng(0)
    n, d, d_h, lr = 6, 4, 8, 0.1
    X = g.standard_normal((n, d))
    layer = nn.Dense.init(d, d_h, g, bias=bias)
    fakes = [g.standard_normal((n, d_h)) for _ in range(4)]
    tr = fake_gradient_probe(nn.Network([layer]), X, fakes, 4, lr)
    pred = closed_form_activations(X, layer.W, layer.b, fakes[:3], lr)
    for H, P in zip(tr.H, pred):
        np.testing.assert_allclose(H, P, atol=1e-12)
    K = recover_gram(tr.H[0], tr.H[1], tr.G[0], lr, bias=bias)
    np.testing.assert_allclose(K, X @ X.T, atol=1e-9)


def test_fake_gradient_probe_errors():
    g = np.random.default_rng(0)
    net = nn.Network([nn.Dense.init(3, 4, g)])
    with pytest.raises(ValueError, match="schedule"):
        fake_gradient_probe(net, np.ones((2, 3)), [np.zeros((2, 4))], 2)
    with pytest.raises(nn.ShapeError):
        fake_gradient_probe(net, np.ones((2, 3)), [np.zeros((3, 4))], 1)
    with pytest.raises(ValueError, match="dense"):
        fake_gradient_probe(nn.Network([nn.Dense.init(3, 4, g), nn.ReLU()]), np.ones((2, 3)), [], 0)


def test_unsplit_recovers_linear_client_inputs():
    ds = synthetic_blobs(8, 2, 0, image=(4, 4))
    X = ds.images
    client = nn.Network(architectures.dense((1, 4, 4), 2, np.random.default_rng(5))[:2])
    H, _ = nn.forward(client, X)
    cfg = UnsplitConfig(rounds=15, input_steps=40, weight_steps=40, input_lr=0.05, weight_lr=0.01)
    seen = []
    rep = unsplit_attack(H, lambda g: nn.Network(architectures.dense((1, 4, 4), 2, g)[:2]), X.shape, cfg,
                         monitor=lambda Xm: seen.append(Xm.copy()) or {"mse_x": float(np.mean((Xm - X) ** 2))})
    assert rep.steps == 15 and len(seen) == 15
    assert rep.mse_z < rep.curves["mse_z"][0]
    assert rep.reconstruction.shape == X.shape
    assert rep.reconstruction.min() >= 0 and rep.reconstruction.max() <= 1


def test_unsplit_config_validation():
    with pytest.raises(ValueError):
        UnsplitConfig(rounds=0)
    with pytest.raises(ValueError):
        UnsplitConfig(lam=-1)


def test_fsha_runs_and_logs_curves():
    shape = (1, 6, 6)
    tr = synthetic_blobs(16, 2, 0, image=shape[1:])
    pub = synthetic_blobs(16, 2, 0, image=shape[1:], split="public")
    g = np.random.default_rng(0)
    client, server = architectures.split("conv2", shape, 2, g)
    width = client.output_shape((1, *shape))[1]
    session = SplitSession(client, server, tr.images, tr.labels, Optimizer("adam", 1e-3),
                           Optimizer("adam", 1e-3), batch_size=8)
    cfg = FshaConfig(lambda g: architectures.fsha_encoder(shape, g),
                     lambda g: architectures.fsha_decoder(width, shape, g),
                     lambda g: architectures.fsha_discriminator(width, g),
                     public=pub.images, loss_convention="classic")
    rep, s = fsha_attack(session, cfg, 6)
    assert rep.steps == 6 and s.step == 6
    assert np.all(np.isfinite(rep.curves["recon_err"]))
    assert rep.reconstruction.shape == tr.images.shape
    with pytest.raises(ValueError):
        FshaConfig(None, None, None, public=pub.images, loss_convention="other")


def test_report_files_roundtrip(tmp_path):
    imgs = np.random.default_rng(0).uniform(0, 1, (3, 1, 4, 5))
    rep = AttackReport(imgs)
    rep.log(step=0, mse_z=0.5)
    rep.log(step=1, mse_z=0.25, mse_x=0.125)
    with pytest.raises(KeyError):
        rep.log(bogus=1)
    rep.score(imgs + 0.1, labels=[0, 1, 1])
    assert rep.mse_x == pytest.approx(0.01)
    rep.save(tmp_path, "x")
    with open(tmp_path / "x_curves.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "mse_x", "mse_z", "enc_dec_err", "recon_err"]
    assert float(rows[2][1]) == 0.125 and np.isnan(float(rows[1][1]))
    assert np.array_equal(checkpoint.load_tensor(tmp_path / "x_reconstruction.slnn"), imgs)
    grid = read_pgm(tmp_path / "x_reconstruction.pgm")
    assert grid.shape == (1 + 5, 1 + 3 * 6)
    np.testing.assert_allclose(grid[1:5, 1:6], imgs[0, 0], atol=0.5 / 255 + 1e-12)


def test_pgm_bytes():
    data = to_pgm_bytes(np.array([[0.0, 2.0]]))
    assert data == b"P5\n2 1\n255\n\x00\xff"
    with pytest.raises(ValueError):
        to_pgm_bytes(np.zeros(3))


def test_pgm_grid_file(tmp_path):
    write_pgm_grid(tmp_path / "g.pgm", np.zeros((2, 2, 2)), cols=1)
    assert read_pgm(tmp_path / "g.pgm").shape == (7, 4)
