import numpy as np
import pytest

from mimil import nn


def numeric_grad(f, arrays, h=1e-3):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arrays`` (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f()
            a[i] = old - h
            down = f()
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def check_op_grad(build, arrays, seed, tol=1e-4):
    """``build(*tensors)`` -> Tensor; compares backprop with finite differences of sum(out * R)."""
    tensors = [nn.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    R = np.random.default_rng(seed).normal(size=out.shape)
    loss = nn.sum_all(nn.mul(out, nn.Tensor(R)))
    loss.backward()

    def f():
        with nn.no_grad():
            return float(np.sum(build(*[nn.Tensor(a) for a in arrays]).data * R))

    numeric = numeric_grad(f, arrays)
    for t, g in zip(tensors, numeric):
        assert t.grad is not None
        err = rel_err(t.grad, g)
        assert err < tol, f"relative gradient error {err:.2e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_bags(n, mode="raw", seed=0, shift=0.0):
    from mimil.bags import Bag
    from mimil.features import columns_per_modality, MODALITIES

    r = np.random.default_rng(seed)
    d = columns_per_modality(mode) * len(MODALITIES)
    bags = []
    for i in range(n):
        label = i % 2
        m = r.normal(size=(19, d)) + shift * label
        bags.append(Bag(participant_id=f"P{i // 4:03d}", window_id=f"P{i // 4:03d}/task/{i:03d}",
                        label=label, feature_mode=mode, matrix=m))
    return bags


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
