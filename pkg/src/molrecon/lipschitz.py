"""Lipschitz-constant machinery for the denoiser.

Two estimators: a local perturbation-ascent ratio (squared form
P = ||H(x+eta) - H(x)||^2 / ||eta||^2, maximized over eta around an anchor)
and the conservative product of per-layer spectral norms.  The log-barrier
penalty keeps the local estimate below a threshold during training; compare
squared P against a squared threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import EPS, norm

BARRIER_MARGIN = 1e-3


@dataclass
class LipEstimate:
    """Result of the perturbation ascent at one anchor point.

    ``value`` is the squared ratio P; ``scale`` exposes the Lipschitz-scale
    square root.
    """

    value: float
    eta_star: np.ndarray
    anchor: np.ndarray
    ascent_steps: int

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.value))


def estimate_local_lipschitz(net, anchor, steps=10, step_size=None, seed=0, eta0=None) -> LipEstimate:
    """Maximize the perturbation gain ratio at ``anchor`` by normalized
    gradient ascent over eta.

    eta starts at 1e-2*||anchor|| in a seeded random direction and moves with
    step 0.1*||anchor|| (both overridable).  Best-so-far bookkeeping makes the
    returned value monotone in ``steps``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    anchor = np.asarray(anchor, dtype=np.complex128)
    anchor_norm = max(norm(anchor), EPS)
    rng = np.random.default_rng(seed)
    if step_size is None:
        step_size = 0.1 * anchor_norm

    def random_eta():
        e = rng.standard_normal(anchor.shape) + 1j * rng.standard_normal(anchor.shape)
        return 1e-2 * anchor_norm * e / norm(e)

    eta = np.asarray(eta0, dtype=np.complex128) if eta0 is not None else random_eta()
    h_anchor = net.forward(anchor)
    best_p = -np.inf
    best_eta = eta
    for _ in range(steps):
        if norm(eta) < EPS:
            eta = random_eta()
        h_pert, cache = net.forward(anchor + eta, want_cache=True)
        d = h_pert - h_anchor
        nsq = norm(eta) ** 2
        p = norm(d) ** 2 / nsq
        if p > best_p:
            best_p = p
            best_eta = eta
        grad = (2.0 / nsq) * (net.vjp_input(cache, d) - p * eta)
        g = norm(grad)
        if g < EPS:
            eta = random_eta()
            continue
        eta = eta + step_size * grad / g
    # score the final iterate as well
    h_pert = net.forward(anchor + eta)
    p = norm(h_pert - h_anchor) ** 2 / max(norm(eta) ** 2, EPS)
    if p > best_p:
        best_p = p
        best_eta = eta
    return LipEstimate(float(best_p), best_eta, anchor, steps)


def spectral_bound(net, iters=20) -> float:
    """Product of per-layer conv operator norms: a global Lipschitz upper
    bound for the network (conservative)."""
    out = 1.0
    for sigma in net.layer_spectral_norms(iters=iters):
        out *= sigma
    return float(out)


def barrier_penalty(p_value, threshold, beta, margin=BARRIER_MARGIN) -> float:
    """Log-barrier -beta*log(threshold - p) with linear extrapolation above
    threshold - margin, so infeasible points keep finite values and an
    inward-pointing gradient."""
    edge = threshold - margin
    if p_value < edge:
        return float(-beta * np.log(threshold - p_value))
    return float(-beta * np.log(margin) + (beta / margin) * (p_value - edge))


def barrier_weight(p_value, threshold, beta, margin=BARRIER_MARGIN) -> float:
    """d(barrier)/dP, clamped in the extrapolation region."""
    edge = threshold - margin
    if p_value < edge:
        return float(beta / (threshold - p_value))
    return float(beta / margin)


def barrier_feasible(p_value, threshold, margin=BARRIER_MARGIN) -> bool:
    return p_value < threshold - margin


def barrier_term(net, anchor, eta, threshold, beta):
    """Value and weight-gradients of the barrier at a frozen perturbation.

    Both the anchor and eta are treated as constants; only the network
    parameters vary.  Returns (penalty value, grads per layer, P value).
    """
    anchor = np.asarray(anchor, dtype=np.complex128)
    eta = np.asarray(eta, dtype=np.complex128)
    nsq = max(norm(eta) ** 2, EPS)
    h_anchor, cache_a = net.forward(anchor, want_cache=True)
    h_pert, cache_p = net.forward(anchor + eta, want_cache=True)
    d = h_pert - h_anchor
    p = norm(d) ** 2 / nsq
    w = barrier_weight(p, threshold, beta)
    scale = 2.0 * w / nsq
    g_pert = net.grad_weights(cache_p, d)
    g_anchor = net.grad_weights(cache_a, d)
    grads = [(scale * (dwp - dwa), scale * (dbp - dba)) for (dwp, dbp), (dwa, dba) in zip(g_pert, g_anchor)]
    return barrier_penalty(p, threshold, beta), grads, float(p)
