import csv

import numpy as np
import pytest

from splitlab.analysis import verify


@pytest.fixture(scope="module")
def suite():
    return {r.claim: r for r in verify.run_suite()}


@pytest.mark.parametrize("claim", [c for c in verify.CLAIMS if c != "EX-rotation"])
def test_claim_passes(suite, claim):
    r = suite[claim]
    assert r.passed, [(c.name, c.value, c.bound, c.mode) for c in r.checks]


def test_rotation_example_constants_and_side_checks(suite):
    r = suite["EX-rotation"]
    checks = {c.name: c for c in r.checks}
    assert checks["initial f gap"].ok
    assert checks["sgd y-trajectory gap"].ok
    assert checks["final f, untransformed"].ok


def test_identity_rotation_gives_exact_zero():
    assert verify.verify_lemma1(steps=10, U=np.eye(32)).deviation == 0.0
    assert verify.adam_twin_deviation(0, U=np.eye(32)) == 0.0
    assert verify.verify_lemma3_cutlayer(steps=5, U=np.eye(10)).deviation == 0.0


def test_lemma1_with_adam_breaks():
    r = verify.verify_lemma1(steps=5, optimizer="adam_warm", lr=0.01)
    assert not r.passed and r.deviation > 1e-3


def test_lemma3_conv_prefix():
    assert verify.verify_lemma3_cutlayer("conv", steps=10).passed
    with pytest.raises(ValueError):
        verify.verify_lemma3_cutlayer("rnn")


def test_lemma2_zero_schedule_is_frozen():
    r = verify.verify_lemma2_fake_gradients(zero_schedule=True)
    assert r.passed and r.details["input_distance"] > 0


def test_inequalities_skip_stationary_start():
    A, w_star, _, _ = verify.quadratic(1.0)
    r = verify.verify_descent(W0=w_star.copy())
    assert r.passed and "skipped" in r.details


def test_inverse_layer_rejects_singular():
    with pytest.raises(ValueError, match="singular"):
        verify._inverse_report(np.ones((4, 2)), np.zeros((2, 2)), np.eye(2), 0, True)
    r = verify.verify_corollary_inverse_layer(U=np.eye(8))
    assert not r.passed and r.checks[0].ok


def test_check_modes_and_nan():
    assert verify.Check("a", 1.0, 2.0).ok
    assert not verify.Check("a", 3.0, 2.0).ok
    assert verify.Check("a", 3.0, 2.0, "lower").ok
    assert not verify.Check("a", float("nan"), 2.0).ok
    assert not verify.Check("a", float("nan"), 2.0, "lower").ok


def test_missing_certificate_is_an_error():
    reg = dict(verify.REGISTRY)
    del reg["C1"]
    with pytest.raises(RuntimeError, match="C1"):
        verify.run_suite(registry=reg)
    with pytest.raises(KeyError):
        verify.run_suite(("nope",))


def test_suite_order_and_outputs(suite, tmp_path):
    reports = [suite[c] for c in verify.CLAIMS]
    table = verify.format_table(reports).splitlines()
    assert table[0].split() == list(verify.TABLE_HEADER)
    assert [line.split()[0] for line in table[1:]] == list(verify.CLAIMS)
    verify.write_csv(tmp_path / "v.csv", reports)
    with open(tmp_path / "v.csv") as f:
        rows = list(csv.DictReader(f))
    assert {r["claim"] for r in rows} == set(verify.CLAIMS)
    assert len(rows) == sum(len(r.checks) for r in reports)


def test_fingerprint_is_reproducible():
    a = verify.fingerprint(3, {"x": 1, "y": [1, 2]})
    assert a == verify.fingerprint(3, {"y": [1, 2], "x": 1})
    assert a["config_hash"] != verify.fingerprint(3, {"x": 2})["config_hash"]
    assert verify.verify_lemma1(steps=3).fingerprint == verify.verify_lemma1(steps=3).fingerprint


def test_runs_are_deterministic():
    a = verify.verify_lemma1(steps=5)
    b = verify.verify_lemma1(steps=5)
    assert a.details == b.details
