"""Optimization loops.

Four methods share the same skeleton: the server holds an estimate g of the
full gradient, steps x <- x - D g (the stepsize matrix D premultiplies the
estimate, except in the sketch-after-stepsize variant where D already lives
inside g), and the clients refresh the estimate with compressed messages.

  det_marina     coin-flip variance reduction: with probability p the
                 clients send exact gradients, otherwise sketched
                 gradient differences.
  det_dasha      momentum variance reduction: clients always send sketched
                 momentum-corrected differences; no synchronization rounds.
  det_cgd        no variance reduction: clients send sketched gradients.
  det_cgd2_vr    coin-flip variance reduction with the sketch applied after
                 the stepsize matrix; clients must know D.

Scalar baselines are these same loops run with D = gamma * I.

Determinism contract: per-(seed, client, iteration) streams make the draws
independent of execution order, and all client reductions run in fixed
client-index order, so a (config, seed) pair fully determines the trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compression import SketchDistribution, coin_stream, expected_density, sample, sketch_stream
from .linalg import as_matrix
from .problem import Problem, grad


@dataclass(frozen=True)
class IterRecord:
    """State after iteration k (k = 0 is the initialization).

    `g` is the server gradient estimate paired with `x` (the estimate the
    next step will use), `aux` is the realized coin or the momentum, and
    `floats` is the cumulative transmitted-float count across all clients.
    """

    k: int
    x: np.ndarray
    g: np.ndarray
    aux: float | None
    floats: int
    g_clients: np.ndarray | None = None
    h_clients: np.ndarray | None = None


def _client_grads(p: Problem, x: np.ndarray) -> np.ndarray:
    return np.stack([grad(p, i, x) for i in range(p.n_clients)])


def _start_x(p: Problem, x0) -> np.ndarray:
    if x0 is None:
        return np.zeros(p.dim)
    x = np.array(x0, dtype=float)
    if x.shape != (p.dim,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({p.dim},)")
    return x


def iterate_det_marina(p: Problem, d_mat, prob: float, sketch: SketchDistribution,
                       seed: int, big_k: int, x0=None, capture: bool = False):
    """Coin-flip variance-reduced loop; yields IterRecord for k = 0..K.

    One Bernoulli(prob) coin per iteration is drawn at the server and shared
    by all clients.  Heads cost d floats per client, tails cost the sketch
    density.
    """
    d_arr = as_matrix(d_mat).a
    n, d = p.n_clients, p.dim
    zeta = expected_density(sketch)
    x = _start_x(p, x0)
    grads = _client_grads(p, x)
    g = grads.mean(axis=0)
    floats = n * d
    yield IterRecord(0, x.copy(), g.copy(), None, floats,
                     grads.copy() if capture else None, None)
    for k in range(big_k):
        coin = bool(coin_stream(seed, k).random() < prob)
        x = x - d_arr @ g
        new_grads = _client_grads(p, x)
        if coin:
            g_clients = new_grads
            floats += n * d
        else:
            g_clients = np.stack([
                g + sample(sketch, sketch_stream(seed, i, k)).apply(new_grads[i] - grads[i])
                for i in range(n)
            ])
            floats += n * zeta
        g = g_clients.mean(axis=0)
        grads = new_grads
        yield IterRecord(k + 1, x.copy(), g.copy(), float(coin), floats,
                         g_clients.copy() if capture else None, None)


def iterate_det_dasha(p: Problem, d_mat, momentum: float, sketch: SketchDistribution,
                      seed: int, big_k: int, x0=None, capture: bool = False):
    """Momentum variance-reduced loop; yields IterRecord for k = 0..K.

    Clients keep h_i = grad_i(x) exactly and send sketched corrections
    m_i = S_i(h_i' - h_i - a (g_i - h_i)); every iteration costs the sketch
    density per client.
    """
    if not 0.0 < momentum <= 1.0:
        raise ValueError(f"momentum must be in (0, 1], got {momentum}")
    d_arr = as_matrix(d_mat).a
    n, d = p.n_clients, p.dim
    zeta = expected_density(sketch)
    x = _start_x(p, x0)
    h = _client_grads(p, x)
    g_clients = h.copy()
    g = g_clients.mean(axis=0)
    floats = n * d
    yield IterRecord(0, x.copy(), g.copy(), None, floats,
                     g_clients.copy() if capture else None, h.copy() if capture else None)
    for k in range(big_k):
        x = x - d_arr @ g
        h_new = _client_grads(p, x)
        messages = np.stack([
            sample(sketch, sketch_stream(seed, i, k)).apply(
                h_new[i] - h[i] - momentum * (g_clients[i] - h[i]))
            for i in range(n)
        ])
        g_clients = g_clients + messages
        g = g + messages.mean(axis=0)
        h = h_new
        floats += n * zeta
        yield IterRecord(k + 1, x.copy(), g.copy(), momentum, floats,
                         g_clients.copy() if capture else None, h.copy() if capture else None)


def iterate_det_cgd(p: Problem, d_mat, sketch: SketchDistribution,
                    seed: int, big_k: int, x0=None, capture: bool = False):
    """Non-variance-reduced loop; yields IterRecord for k = 0..K.

    Each client sends its sketched gradient every iteration; the server
    averages and steps.  No initialization traffic.
    """
    d_arr = as_matrix(d_mat).a
    n = p.n_clients
    zeta = expected_density(sketch)
    x = _start_x(p, x0)
    floats = 0
    yield IterRecord(0, x.copy(), _client_grads(p, x).mean(axis=0), None, floats, None, None)
    for k in range(big_k):
        sketched = np.stack([
            sample(sketch, sketch_stream(seed, i, k)).apply(grad(p, i, x))
            for i in range(n)
        ])
        g = sketched.mean(axis=0)
        x = x - d_arr @ g
        floats += n * zeta
        yield IterRecord(k + 1, x.copy(), g.copy(), None, floats,
                         sketched.copy() if capture else None, None)


def iterate_det_cgd2_vr(p: Problem, d_mat, prob: float, sketch: SketchDistribution,
                        seed: int, big_k: int, x0=None, capture: bool = False):
    """Sketch-after-stepsize variance-reduced loop; yields IterRecord for k = 0..K.

    The estimate g carries the stepsize already (g0 = D grad f(x0)), so the
    step is x <- x - g with no extra multiplication.  Coin-flip structure
    and accounting match the coin-flip method.
    """
    d_arr = as_matrix(d_mat).a
    n, d = p.n_clients, p.dim
    zeta = expected_density(sketch)
    x = _start_x(p, x0)
    grads = _client_grads(p, x)
    g = d_arr @ grads.mean(axis=0)
    floats = n * d
    yield IterRecord(0, x.copy(), g.copy(), None, floats, None, None)
    for k in range(big_k):
        coin = bool(coin_stream(seed, k).random() < prob)
        x = x - g
        new_grads = _client_grads(p, x)
        if coin:
            g_clients = np.stack([d_arr @ new_grads[i] for i in range(n)])
            floats += n * d
        else:
            g_clients = np.stack([
                g + sample(sketch, sketch_stream(seed, i, k)).apply(d_arr @ (new_grads[i] - grads[i]))
                for i in range(n)
            ])
            floats += n * zeta
        g = g_clients.mean(axis=0)
        grads = new_grads
        yield IterRecord(k + 1, x.copy(), g.copy(), float(coin), floats,
                         g_clients.copy() if capture else None, None)
