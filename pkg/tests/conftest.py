import numpy as np
import pytest

from revelight.cli import synthetic_pair
from revelight.models import GlobalModel, LocalModel


@pytest.fixture(scope="session")
def glm_models():
    def make(q):
        return LocalModel(), GlobalModel(kind="logistic", q=q)

    return make


@pytest.fixture(scope="session")
def bench_data():
    """Small nonconvex-logistic benchmark instances, keyed by party count."""
    cache = {}

    def make(q, n=256, d=32, seed=0, n_test=256, kind="noisy"):
        key = (q, n, d, seed, n_test, kind)
        if key not in cache:
            cache[key] = synthetic_pair(kind, n, n_test, d, q, seed)
        return cache[key]

    return make


def logistic_grad_sq(data, lam_eff):
    """Analytic squared gradient norm of the nonconvex logistic objective."""
    X = data.concatenated()
    y = data.labels

    def grad_sq(w0, w_blocks):
        w = np.concatenate(w_blocks)
        margin = X @ w
        sig = 1.0 / (1.0 + np.exp(y * margin))
        grad = -(X * (y * sig)[:, None]).mean(axis=0)
        grad = grad + lam_eff * 2.0 * w / (1.0 + w * w) ** 2
        return float(np.dot(grad, grad))

    return grad_sq
