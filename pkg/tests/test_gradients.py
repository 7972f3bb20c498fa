"""Finite-difference checks of every analytic backward pass."""

import time

import pytest

from wattsplit import gradcheck


@pytest.mark.parametrize("name", sorted(gradcheck.BATTERY))
def test_gradients_match_finite_differences(name):
    check = gradcheck.BATTERY[name]
    worst = max(check(seed) for seed in range(3))
    assert worst <= gradcheck.TOLERANCE, f"{name}: max relative error {worst:.3e}"


def test_battery_runs_all_ops():
    assert set(gradcheck.BATTERY) == {
        "conv1d", "maxpool1d", "lstm", "bilstm", "attention", "dense",
        "dropout", "model"}


def test_run_battery_reports_per_op_errors():
    start = time.perf_counter()
    results = gradcheck.run_battery(seeds=range(2))
    elapsed = time.perf_counter() - start
    assert set(results) == set(gradcheck.BATTERY)
    assert all(err <= gradcheck.TOLERANCE for err in results.values())
    assert elapsed < 60.0


def test_rel_err_max_definition():
    import numpy as np
    a = np.array([1.0, 0.0])
    n = np.array([1.0 + 1e-6, 1e-9])
    err = gradcheck.rel_err_max(a, n)
    expected = max(1e-6 / (2.0 + 1e-6), 1e-9 / 1e-7)
    assert err == pytest.approx(expected, rel=1e-9)


def test_numerical_grad_on_quadratic():
    import numpy as np
    x = np.array([1.0, -2.0, 3.0])

    def loss():
        return float(np.sum(x * x))

    grad = gradcheck.numerical_grad(loss, x)
    assert np.allclose(grad, 2.0 * np.array([1.0, -2.0, 3.0]), atol=1e-6)
    # the probe restores the array
    assert np.array_equal(x, [1.0, -2.0, 3.0])
