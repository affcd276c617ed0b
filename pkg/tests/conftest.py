import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def semgraph_home(tmp_path, monkeypatch):
    """Keep run directories out of the real home folder."""
    home = tmp_path / "semgraph_home"
    monkeypatch.setenv("SEMGRAPH_HOME", str(home))
    monkeypatch.delenv("SEMGRAPH_THREADS", raising=False)
    return home


def numeric_gradient(f, x, eps=1e-6):
    """Central differences of scalar f() with respect to every entry of array x (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        original = x[i]
        x[i] = original + eps
        up = f()
        x[i] = original - eps
        down = f()
        x[i] = original
        grad[i] = (up - down) / (2 * eps)
    return grad


@pytest.fixture
def finite_difference():
    return numeric_gradient
