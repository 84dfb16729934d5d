"""Shared test utilities: oracle graphs, finite differences, tiny clips."""

import numpy as np

from seizgraph.autodiff import Tape
from seizgraph.graph import EegGraph, graph_operators


def random_directed_graph(rng, n):
    w = rng.uniform(0.1, 1.0, size=(n, n)) * (rng.random((n, n)) < 0.7)
    np.fill_diagonal(w, 1.0)
    return EegGraph(weights=w, directed=True)


def random_undirected_graph(rng, n):
    w = rng.uniform(0.1, 1.0, size=(n, n)) * (rng.random((n, n)) < 0.7)
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 1.0)
    return EegGraph(weights=w, directed=False)


def random_directed_ops(rng, n):
    return graph_operators(random_directed_graph(rng, n))


def random_undirected_ops(rng, n):
    return graph_operators(random_undirected_graph(rng, n))


def finite_difference_check(loss_fn, params, eps=1e-5, tol=1e-4):
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` rebuilds the scalar loss from scratch; ``params`` maps names
    to Tensors.  Returns the worst relative error seen (denominator
    max(|analytic|, |numeric|, 1e-8)).

    Central differences of an O(|f|) loss carry cancellation noise of about
    machine_eps * |f| / (2 * eps); differences below that resolving power
    say nothing about the analytic gradient (they flip with one ulp of
    rounding), so such coordinates are not counted as mismatches.
    """
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    base = abs(float(loss.data))
    noise_floor = 32 * np.finfo(np.float64).eps * max(1.0, base) / (2 * eps)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.ravel()
        grad_flat = analytic[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(grad_flat[i]), abs(numeric), 1e-8)
            rel = abs(grad_flat[i] - numeric) / denom
            if abs(grad_flat[i] - numeric) <= noise_floor:
                continue  # below the oracle's resolving power, not evidence
            if rel > worst:
                worst = rel
            assert rel < tol, (
                f"gradient mismatch in {name}[{i}]: analytic {grad_flat[i]:.3e} "
                f"vs numeric {numeric:.3e} (rel {rel:.3e})"
            )
    return worst
