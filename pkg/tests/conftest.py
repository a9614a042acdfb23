"""Shared test helpers: finite-difference oracle and gradient checking."""

import numpy as np
import pytest

from gatedfusion.tensor import Tensor


def finite_difference(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued fn at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for k in range(xf.size):
        orig = xf[k]
        xf[k] = orig + step
        hi = fn(x)
        xf[k] = orig - step
        lo = fn(x)
        xf[k] = orig
        flat[k] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    # the denominator floor turns the test into an absolute one for entries
    # near zero, where central differences bottom out around 1e-11
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.abs(got) + np.abs(want), 1e-6)
    return float(np.max(np.abs(got - want) / denom))


def check_gradients(build_loss, arrays: dict, step: float = 1e-5, tol: float = 1e-4):
    """Compare autodiff gradients against central differences.

    ``build_loss`` maps a dict of plain arrays to a scalar loss Tensor; it is
    re-run from scratch for every probe so the tape never carries state over.
    Returns the worst relative error across all inputs.
    """
    tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    loss = build_loss({k: t for k, t in tensors.items()})
    loss.backward()

    worst = 0.0
    for name, base in arrays.items():
        analytic = tensors[name].grad
        assert analytic is not None, f"no gradient reached {name}"

        def scalar_fn(x, _name=name):
            probe = {k: (x if k == _name else v) for k, v in arrays.items()}
            wrapped = {k: Tensor(v, requires_grad=False) for k, v in probe.items()}
            return float(build_loss(wrapped).data)

        numeric = finite_difference(scalar_fn, np.array(base, dtype=np.float64), step)
        err = relative_error(analytic, numeric)
        assert err < tol, f"gradient mismatch for {name}: rel err {err:.3e} >= {tol}"
        worst = max(worst, err)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
