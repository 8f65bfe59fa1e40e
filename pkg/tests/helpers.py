"""Shared test oracles: central finite differences and error measures."""
import numpy as np

from pxiq.autograd import Tensor


def numeric_grads(f, arrays, eps=1e-3):
    """Central finite-difference gradients of scalar f(*arrays) per array.

    Arrays must be float64; f must not mutate them.
    """
    grads = []
    for arr in arrays:
        assert arr.dtype == np.float64
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(*arrays)
            flat[i] = orig - eps
            fm = f(*arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def max_rel_err(a, b, floor=1e-6):
    """Largest elementwise relative error with an absolute floor for tiny values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0


def check_grads(build_loss, arrays, tol=1e-4, eps=1e-3):
    """Assert autograd gradients match finite differences on float64 leaves.

    ``build_loss`` maps a list of leaf Tensors to a scalar Tensor.
    Returns the worst relative error seen.
    """
    leaves = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build_loss(*leaves)
    loss.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
                for leaf in leaves]

    def f(*arrs):
        consts = [Tensor(a, dtype=np.float64) for a in arrs]
        return float(build_loss(*consts).data)

    numeric = numeric_grads(f, [a.copy() for a in arrays], eps=eps)
    worst = 0.0
    for got, want in zip(analytic, numeric):
        err = max_rel_err(got, want)
        assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
        worst = max(worst, err)
    return worst
