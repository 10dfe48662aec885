import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rtol)
    assert err.max() <= rtol, f"max relative error {err.max():.3g}\n{analytic}\n{numeric}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_eco_model(seed: int = 0, K=(3, 3), widths=(2, 2, 2)):
    """Small stochastic net built from a seeded dense init, plus a 4-point batch."""
    from ecocompress.layers import DenseLayer, NoiseSource, StochasticDense

    r = np.random.default_rng(seed)
    noise = NoiseSource(seed)
    model = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        dense = DenseLayer.init(a, b, r)
        dense.bias.data = r.normal(0, 0.1, b)
        layer = StochasticDense.from_dense(dense, K[i], noise, i, sigma_frac=0.6)
        layer.posterior.log_sigma.data = layer.posterior.log_sigma.data + r.normal(0, 0.2, (a, b))
        model.append(layer)
    x = r.normal(size=(4, widths[0]))
    y = np.array([0, 1, 1, 0]) % widths[-1]
    return model, x, y


def eco_fd_max_error(model, x, y, alpha: float, h: float = 1e-5):
    """Largest relative error between tape and central-difference gradients of the ECO loss."""
    from ecocompress import tensor as T
    from ecocompress.objective import eco_loss

    def value():
        with T.no_grad():
            return eco_loss(model, x, y, alpha, step=0).total.item()

    eco_loss(model, x, y, alpha, step=0).backward()
    worst = 0.0
    params = [p for layer in model for p in layer.parameters()]
    grads = [p.grad.copy() for p in params]
    for p, g in zip(params, grads):
        n = numeric_grad(value, p.data, h)
        err = np.abs(g - n) / np.maximum(np.maximum(np.abs(g), np.abs(n)), 1e-3)
        worst = max(worst, float(err.max()))
    return worst


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
