import numpy as np
import pytest

from trainlab.nn import Activation, Batch, Regularizer, init_mlp, loss_grad

ACTIVATIONS = [
    Activation("relu"),
    Activation("leaky_relu", 0.3),
    Activation("crelu"),
    Activation("linear"),
]


def make_net(in_dim, hidden, n_classes, act, seed=0):
    rng = np.random.default_rng(seed)
    return init_mlp(in_dim, [hidden] if np.isscalar(hidden) else list(hidden), n_classes, act, rng)


def make_batch(in_dim, n_classes, B, seed=0):
    rng = np.random.default_rng(seed + 1000)
    return Batch(rng.normal(size=(B, in_dim)), rng.integers(0, n_classes, size=B))


def make_reg(kind, params, lam=1e-2, perturb_seed=None):
    """A regularizer for tests; the wasserstein snapshot is optionally a
    perturbed copy so the penalty is nonzero at the current point."""
    if kind == "none":
        return Regularizer("none")
    if kind == "l2":
        return Regularizer("l2", lam)
    snap = params.copy()
    if perturb_seed is not None:
        rng = np.random.default_rng(perturb_seed)
        for lay in snap.layers:
            lay.weights += 0.3 * rng.normal(size=lay.weights.shape)
    return Regularizer("wasserstein", lam, snap)


def fd_gradient(params, act, batch, reg, h=1e-4):
    """Central finite differences of the scalar loss, parameter by parameter."""
    base = params.copy()
    grad = []
    vec = base.to_vector()
    for j in range(vec.size):
        vp = vec.copy()
        vp[j] += h
        vm = vec.copy()
        vm[j] -= h
        lp = loss_grad(base.from_vector(vp), act, batch, reg).loss
        lm = loss_grad(base.from_vector(vm), act, batch, reg).loss
        grad.append((lp - lm) / (2 * h))
    return np.array(grad)


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(b), 1e-30)
    return np.linalg.norm(a - b) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
