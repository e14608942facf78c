import numpy as np
import pytest

from gtr import autodiff as ad


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-7) -> np.ndarray:
    """Elementwise |a - b| / max(|a|, |b|, floor)."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_grads(loss_fn, params: dict, h: float = 1e-5) -> float:
    """Max elementwise relative error between autodiff and finite differences.

    ``loss_fn()`` must rebuild the graph from ``params[k].data`` each call and
    return a scalar Tensor.
    """
    for p in params.values():
        p.zero_grad()
    ad.backward(loss_fn())
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    worst = 0.0
    for k, p in params.items():
        arr = p.data.copy()
        p.data = arr  # perturb a private copy

        def f():
            return loss_fn().item()

        num = numeric_grad(f, arr, h)
        worst = max(worst, float(rel_error(analytic[k], num).max()))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
