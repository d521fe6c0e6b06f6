import numpy as np
import pytest

from fracas.nn import Tensor, backward


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


def finite_diff(loss_fn, tensors, step=1e-5):
    """Independent central-difference gradients for a list of leaf tensors.

    Used as the oracle against analytic backward(); intentionally knows
    nothing about the graph.
    """
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_fn().item()
            flat[i] = orig - step
            fm = loss_fn().item()
            flat[i] = orig
            g[i] = (fp - fm) / (2 * step)
        grads.append(g.reshape(t.shape))
    return grads


def analytic_grads(loss_fn, tensors):
    for t in tensors:
        t.grad = None
    backward(loss_fn())
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def max_rel_err(a, b, floor=1e-5):
    # floor keeps finite-difference rounding noise on near-zero gradient
    # entries from dominating; real rule bugs still exceed any sane tol
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


@pytest.fixture
def grad_oracle():
    def check(loss_fn, tensors, tol=1e-6):
        ana = analytic_grads(loss_fn, tensors)
        num = finite_diff(loss_fn, tensors)
        worst = max(max_rel_err(a, n) for a, n in zip(ana, num))
        assert worst <= tol, f"gradient mismatch: max rel err {worst:.3e} > {tol:g}"
        return worst

    return check


def leaf(np_rng, *shape):
    return Tensor(np_rng.standard_normal(shape), requires_grad=True)
