from __future__ import annotations

import numpy as np
import pytest

from granular.autoencoder import NetworkParams, forward, loss_mse
from granular.data import Dataset, write_csv


def latent_factor_data(
    seed: int,
    n: int = 1000,
    d: int = 11,
    factors: int = 7,
    noise: float = 0.05,
) -> Dataset:
    """Rows on a random linear ``factors``-dimensional subspace plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, factors))
    w = rng.standard_normal((factors, d))
    return Dataset.from_array(z @ w + noise * rng.standard_normal((n, d)))


def brute_force_lof(x: np.ndarray, k: int, eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Direct evaluation of lrd and LOF with plain loops.

    Neighbors are the k closest other points, ties broken by smaller index.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    dist = [[float(np.sqrt(np.sum((x[i] - x[j]) ** 2))) for j in range(n)] for i in range(n)]
    neigh = []
    for i in range(n):
        others = sorted((dist[i][j], j) for j in range(n) if j != i)
        neigh.append([j for _, j in others[:k]])
    kdist = [dist[i][neigh[i][-1]] for i in range(n)]
    lrd = np.empty(n)
    clamped = np.zeros(n, dtype=bool)
    for i in range(n):
        mean_reach = sum(max(kdist[o], dist[i][o]) for o in neigh[i]) / k
        if mean_reach < eps:
            lrd[i] = 1 / eps
            clamped[i] = True
        else:
            lrd[i] = 1 / mean_reach
    lof = np.array([sum(lrd[o] for o in neigh[i]) / (k * lrd[i]) for i in range(n)])
    return lof, lrd


def finite_difference(params: NetworkParams, x: np.ndarray, h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of the reconstruction loss for every parameter."""
    arrays = [a.copy() for a in params.arrays()]
    out = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = loss_mse(x, forward(NetworkParams.from_arrays(arrays), x)[0])
            a[idx] = old - h
            down = loss_mse(x, forward(NetworkParams.from_arrays(arrays), x)[0])
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(a) + np.abs(n)), 1e-12))


@pytest.fixture
def small_csv(tmp_path):
    rng = np.random.default_rng(7)
    data = Dataset.from_array(rng.standard_normal((120, 5)), ids=range(100, 220))
    path = tmp_path / "data.csv"
    write_csv(data, path)
    return path, data


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" in props and rep.when == "call":
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((props["criterion"], f"{status}  {props['criterion']}: {props['measured']}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
