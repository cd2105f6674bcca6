import numpy as np
import pytest

from hnnpc.model import HnnArchitecture, HnnInputs


def tiny_arch(variant="factorized", hemispheres=("a", "b", "c"), **kw):
    base = dict(
        additive_layers=2,
        additive_neurons=6,
        state_layers=2,
        state_neurons=6,
        coef_layers=2,
        coef_neurons=5,
        vol_layers=2,
        vol_neurons=5,
        dropout=0.0,
    )
    base.update(kw)
    return HnnArchitecture(variant=variant, hemispheres=hemispheres, **base)


def toy_inputs(T=30, widths=(7, 6, 7), seed=0, names=("a", "b", "c")):
    rng = np.random.default_rng(seed)
    blocks = {n: rng.standard_normal((T, p)) for n, p in zip(names, widths)}
    return HnnInputs(blocks, np.linspace(0.0, 1.0, T))


def randomize_biases(model, seed=3):
    """Move biases off zero so no ReLU sits exactly on its kink."""
    r = np.random.default_rng(seed)
    for p in model.parameters():
        if p.ndim == 1:
            p[:] = r.uniform(-0.5, 0.5, p.shape)


def fd_check(model, f, h=1e-5):
    """Worst relative error between ``f()``'s analytic gradient and central differences."""
    _, grads = f()
    worst = 0.0
    for p, g in zip(model.parameters(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp = f()[0]
            p[idx] = old - h
            lm = f()[0]
            p[idx] = old
            num = (lp - lm) / (2 * h)
            worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-6))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []  # (criterion, status, detail)


def record(criterion, ok, detail):
    """Log an acceptance outcome and fail the calling test when it does not hold."""
    status = "PASS" if ok else "FAIL"
    ACCEPTANCE.append((criterion, status, detail))
    print(f"ACCEPTANCE {criterion}: {status} {detail}")
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{status}] criterion {criterion}: {detail}")
