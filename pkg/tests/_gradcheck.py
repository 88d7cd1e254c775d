"""Finite-difference gradient checking shared by the test modules."""

import numpy as np

from dpmld import autodiff as ad


def rel_error(a, b) -> float:
    """Norm-relative error; robust when individual entries are near zero."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check(build, arrays, h=1e-5, tol=1e-4):
    """``build(*tensors) -> Tensor``; reduced with a fixed random projection to a scalar."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    proj = np.random.default_rng(0).standard_normal(out.shape)
    loss = ad.sum(out * ad.Tensor(proj)) if out.ndim else out
    loss.backward()

    def fn():
        with ad.no_grad():
            o = build(*[ad.Tensor(a) for a in arrays])
        return float(np.sum(o.data * proj)) if o.ndim else float(o.data)

    errors = []
    for t, a in zip(tensors, arrays):
        num = ad.numerical_gradient(fn, a, h)
        errors.append(rel_error(t.grad, num))
    worst = max(errors)
    assert worst < tol, f"gradient mismatch: relative errors {errors}"
    return worst
