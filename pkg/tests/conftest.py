import numpy as np
import pytest

from kgdstop import Dataset, KernelSpec, build_kernel_matrix

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def random_problem(seed, n, kernel="k1"):
    """Uniform inputs with a noisy tent target; returns (spec, dataset, matrix)."""
    rng = np.random.default_rng(seed)
    if kernel == "k1":
        spec = KernelSpec.min_plus_one()
        x = rng.uniform(size=(n, 1))
        f = np.where(x[:, 0] <= 0.5, x[:, 0], 1.0 - x[:, 0])
    else:
        spec = KernelSpec.wendland_g3(3)
        x = rng.uniform(size=(n, 3))
        f = np.cos(np.linalg.norm(x, axis=1))
    y = f + rng.normal(0.0, np.sqrt(0.2), size=n)
    data = Dataset(x, y)
    return spec, data, build_kernel_matrix(spec, x)


def eig_iterates(entries, y, beta, t_max):
    """Coefficients c_0..c_t_max from a fresh eigendecomposition of K.

    Independent of the package recursion: c_t = V diag((1-(1-b s/n)^t)/s) V^T y.
    """
    s, v = np.linalg.eigh(entries)
    s = np.clip(s, 0.0, None)
    n = len(y)
    proj = v.T @ y
    out = np.zeros((t_max + 1, n))
    a = beta * s / n
    pos = s > 0
    for t in range(1, t_max + 1):
        g = np.full(n, beta * t / n)
        g[pos] = -np.expm1(t * np.log1p(-a[pos])) / s[pos]
        out[t] = v @ (g * proj)
    return out


@pytest.fixture(scope="session")
def acceptance_report(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def report(number, ok, detail):
        lines.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(lines[-1])
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
