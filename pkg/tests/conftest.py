"""Shared test helpers: finite-difference gradient oracle and tiny fixtures."""

import numpy as np

from condenset import tensor as T


def numeric_grad(make_loss, leaf, eps=1e-4):
    """Central finite differences of a scalar loss w.r.t. one leaf tensor.

    `make_loss` must rebuild the forward pass from the leaves' current data.
    """
    flat = leaf.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        lp = make_loss().item()
        flat[i] = orig - eps
        lm = make_loss().item()
        flat[i] = orig
        out[i] = (lp - lm) / (2.0 * eps)
    return out.reshape(leaf.shape)


def fd_gradcheck(make_loss, leaves, eps=1e-4, tol=1e-4):
    """Assert analytic gradients match finite differences for every leaf.

    Relative error is ||a - n|| / ||n|| (2-norm); near-zero numeric gradients
    fall back to an absolute bound.
    """
    T.zero_grads(leaves)
    loss = make_loss()
    T.backward(loss)
    analytic = [leaf.grad_or_zeros().copy() for leaf in leaves]
    for leaf, ga in zip(leaves, analytic):
        gn = numeric_grad(make_loss, leaf, eps=eps)
        norm = np.linalg.norm(gn)
        if norm < 1e-10:
            assert np.linalg.norm(ga) < 1e-8, "analytic gradient nonzero where numeric is zero"
            continue
        rel = np.linalg.norm(ga - gn) / norm
        assert rel < tol, f"gradient mismatch: relative error {rel:.3e} on shape {leaf.shape}"
    T.zero_grads(leaves)
