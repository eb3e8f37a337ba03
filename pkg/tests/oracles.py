"""Independent reference implementations: plain Python loops over flat values."""

import itertools
import math

import numpy as np


def flat(a):
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def mean_abs_diff(a, b):
    xs, ys = flat(a), flat(b)
    assert len(xs) == len(ys)
    return math.fsum(abs(x - y) for x, y in zip(xs, ys)) / len(xs)


def lsgan_d(real, fake):
    r, f = flat(real), flat(fake)
    return 0.5 * math.fsum((v - 1.0) ** 2 for v in r) / len(r) + 0.5 * math.fsum(v * v for v in f) / len(f)


def lsgan_g(fake):
    f = flat(fake)
    return 0.5 * math.fsum((v - 1.0) ** 2 for v in f) / len(f)


def weighted_total(components, weights):
    return math.fsum(c * w for c, w in zip(components, weights))


def two_pass_stats(rows):
    rows = [flat(r) for r in rows]
    n, d = len(rows), len(rows[0])
    mean = [math.fsum(r[j] for r in rows) / n for j in range(d)]
    cov = [[0.0] * d for _ in range(d)]
    for i, j in itertools.product(range(d), range(d)):
        cov[i][j] = math.fsum((r[i] - mean[i]) * (r[j] - mean[j]) for r in rows) / (n - 1)
    return np.array(mean), np.array(cov)


def frechet_eig(mu_p, cov_p, mu_q, cov_q):
    """Fréchet distance with Tr((P Q)^1/2) from the eigenvalues of the product itself."""
    lam = np.linalg.eigvals(np.asarray(cov_p) @ np.asarray(cov_q))
    tr = float(np.sum(np.sqrt(np.clip(lam.real, 0.0, None))))
    diff = np.asarray(mu_p) - np.asarray(mu_q)
    return float(diff @ diff + np.trace(cov_p) + np.trace(cov_q) - 2.0 * tr)


def central_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = f(x)
        x[idx] = orig - step
        lo = f(x)
        x[idx] = orig
        grad[idx] = (hi - lo) / (2 * step)
    return grad
