from __future__ import annotations

import numpy as np
import pytest

from tactile_transformer.autodiff import ParameterStore, Tensor
from tactile_transformer.gradcheck import gradient_check


def make_closure():
    store = ParameterStore()
    rng = np.random.default_rng(0)
    w = store.register("w", rng.standard_normal((3, 2)))
    b = store.register("b", rng.standard_normal(2))
    x = rng.standard_normal((4, 3))

    def closure():
        return ((Tensor(x) @ w + b).gelu() ** 2.0).mean()

    return store, closure


def test_clean_gradients_pass():
    store, closure = make_closure()
    report = gradient_check(closure, dict(store.items()), rel_tol=1e-4)
    assert report.passed
    assert {c.name for c in report.checks} == {"w", "b"}


def test_corrupted_gradient_fails_naming_the_parameter():
    store, closure = make_closure()
    params = dict(store.items())
    loss = closure()
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}
    analytic["w"] *= 2.0  # fault injection
    report = gradient_check(closure, params, rel_tol=1e-3, analytic=analytic)
    assert not report.passed
    assert [c.name for c in report.failures] == ["w"]
    assert "FAIL" in report.summary() and "w" in report.summary()


def test_zero_parameter_closure_passes_with_empty_report():
    report = gradient_check(lambda: Tensor(1.0), {}, rel_tol=1e-3)
    assert report.passed and report.checks == []


def test_element_subsampling_bounds_work():
    store, closure = make_closure()
    report = gradient_check(closure, dict(store.items()), rel_tol=1e-4, max_elements_per_param=2)
    assert report.passed
    assert all(c.checked_elements <= 2 for c in report.checks)


@pytest.mark.parametrize("eps", [1e-3, 1e-4])
def test_eps_choices_stay_within_tolerance(eps):
    store, closure = make_closure()
    report = gradient_check(closure, dict(store.items()), rel_tol=1e-3, eps=eps)
    assert report.passed
