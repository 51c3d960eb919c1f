import numpy as np
import pytest

from rasopt.manifolds import Grassmann, Stiefel


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(params=["stiefel", "grassmann"])
def manifold_cls(request):
    return {"stiefel": Stiefel, "grassmann": Grassmann}[request.param]


def mgs_qr(A):
    """Modified Gram-Schmidt, positive diagonal; independent of LAPACK."""
    A = np.array(A, dtype=float)
    n, r = A.shape
    Q = A.copy()
    R = np.zeros((r, r))
    for j in range(r):
        R[j, j] = np.linalg.norm(Q[:, j])
        Q[:, j] /= R[j, j]
        for k in range(j + 1, r):
            R[j, k] = Q[:, j] @ Q[:, k]
            Q[:, k] -= R[j, k] * Q[:, j]
    return Q, R


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL verdict and fail the test if it did not pass."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
