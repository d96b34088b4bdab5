"""Damped forward-backward fixed-point solver and its implicit gradients.

One iteration maps x to prox_data((1-alpha)*x + alpha*H(x)) where H is the
denoiser and prox_data the quadratic data-consistency solve; alpha=1 recovers
the undamped update used by unrolled data-consistency networks.  Training
gradients are obtained by iterating the transposed-Jacobian fixed point of
the adjoint state q rather than unrolling, so memory stays at one iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import EPS, inner, norm


@dataclass
class MolConfig:
    """Solver parameters.

    ``alpha`` is the damping factor, ``lam`` the data-consistency weight
    (trainable during learning), ``m`` the monotonicity margin of the
    residual operator, ``kappa`` the relative-change stopping tolerance, and
    ``lam0`` the weight of the regularized least-squares initialization.
    """

    alpha: float = 0.055
    lam: float = 50.0
    m: float = 0.1
    kappa: float = 1e-4
    max_iter_forward: int = 200
    max_iter_backward: int = 200
    lam0: float = 100.0
    prox_tol: float = 1e-10
    prox_max_iter: int = 200

    def __post_init__(self):
        if not 0 < self.m < 1:
            raise ValueError("m must lie in (0, 1)")
        if self.kappa <= 0 or self.lam <= 0 or self.lam0 <= 0:
            raise ValueError("kappa, lam, lam0 must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class FixedPointResult:
    x_star: np.ndarray
    nfe: int
    residual_trace: list = field(default_factory=list)
    converged: bool = False


def alpha_max(m: float) -> float:
    """Largest damping factor with a certified contraction: 2m/(2-m)^2."""
    if not 0 < m <= 1:
        raise ValueError("m must lie in (0, 1]")
    return 2.0 * m / (2.0 - m) ** 2


def alpha_one_monotonicity_threshold() -> float:
    """Monotonicity margin above which the undamped (alpha=1) update is
    certified: the root of alpha_max(m) = 1, i.e. 3 - sqrt(5)."""
    return 3.0 - np.sqrt(5.0)


def contraction_factor(m: float, alpha: float, lam: float, mu_min: float) -> float:
    """Theoretical Lipschitz factor of the fixed-point map.

    The gradient-descent half contributes sqrt(1 - 2*alpha*m +
    alpha^2*(2-m)^2); the data prox contributes 1/(1 + lam*mu_min).
    """
    radicand = 1.0 - 2.0 * alpha * m + alpha**2 * (2.0 - m) ** 2
    if radicand < 0:
        raise ValueError(f"infeasible parameters: negative radicand {radicand}")
    return float(np.sqrt(radicand) / (1.0 + lam * mu_min))


def mol_step(net, op, cfg: MolConfig, x, b) -> np.ndarray:
    """One damped forward-backward step: prox of (1-a)x + a*H(x)."""
    if cfg.alpha == 0.0:
        return np.asarray(x, dtype=np.complex128)
    u = (1.0 - cfg.alpha) * x + cfg.alpha * net.forward(x)
    return op.prox_data(u, b, cfg.alpha, cfg.lam, tol=cfg.prox_tol, max_iter=cfg.prox_max_iter)


def forward_deq(net, op, cfg: MolConfig, b, x0=None) -> FixedPointResult:
    """Iterate the fixed-point map from the regularized least-squares start
    until the relative iterate change drops below kappa.

    Returns the iterate, the number of function evaluations, the residual
    trace e_n = ||x_n - x_{n-1}|| / ||x_{n-1}||, and a convergence flag.
    Non-convergence is not an exception: callers decide (training treats it
    as a divergence signal).
    """
    ahb = op.adjoint(b)
    x = op.sense_init(b, cfg.lam0, tol=cfg.prox_tol, max_iter=cfg.prox_max_iter) if x0 is None else np.asarray(x0, dtype=np.complex128)
    w = cfg.alpha * cfg.lam
    trace = []
    converged = False
    nfe = 0
    for _ in range(cfg.max_iter_forward):
        x_old = x
        u = (1.0 - cfg.alpha) * x + cfg.alpha * net.forward(x)
        x = op.solve_normal_plus_identity(u + w * ahb, w, tol=cfg.prox_tol, max_iter=cfg.prox_max_iter)
        nfe += 1
        if not np.all(np.isfinite(x)):
            # hard blow-up: report divergence with the trace so far
            return FixedPointResult(x_old, nfe, trace, False)
        e = norm(x - x_old) / max(norm(x_old), EPS)
        trace.append(e)
        if e <= cfg.kappa:
            converged = True
            break
    return FixedPointResult(x, nfe, trace, converged)


@dataclass
class AdjointStateResult:
    q: np.ndarray
    cache: object
    iterations: int
    converged: bool


def backward_fixed_point(net, op, cfg: MolConfig, x_star, grad_x) -> AdjointStateResult:
    """Solve q = J^T q + grad_x by fixed-point iteration from q = 0.

    J is the Jacobian of the forward map at x_star; its transpose is applied
    as the data-prox linear solve followed by the damped denoiser VJP.  The
    same termination rule as the forward pass is used, and the recursion
    contracts whenever the forward map does.
    """
    _, cache = net.forward(x_star, want_cache=True)
    w = cfg.alpha * cfg.lam
    q = np.zeros_like(np.asarray(x_star, dtype=np.complex128))
    converged = False
    its = 0
    for _ in range(cfg.max_iter_backward):
        q_old = q
        s = op.solve_normal_plus_identity(q, w, tol=cfg.prox_tol, max_iter=cfg.prox_max_iter)
        q = (1.0 - cfg.alpha) * s + cfg.alpha * net.vjp_input(cache, s) + grad_x
        its += 1
        e = norm(q - q_old) / max(norm(q_old), EPS)
        if e <= cfg.kappa:
            converged = True
            break
    return AdjointStateResult(q, cache, its, converged)


def backward_deq(net, op, cfg: MolConfig, x_star, grad_x, b):
    """Implicit gradients of a loss with image-gradient ``grad_x`` at x_star.

    Returns (weight grads matching net.layers, d/d lam, adjoint-state info).
    The weight gradient routes the adjoint state through the data prox and
    the denoiser's parameter Jacobian; the lam gradient differentiates the
    prox in its weight, which at the fixed point collapses to
    alpha * Q_alpha A^H (b - A x_star).
    """
    adj = backward_fixed_point(net, op, cfg, x_star, grad_x)
    w = cfg.alpha * cfg.lam
    s = op.solve_normal_plus_identity(adj.q, w, tol=cfg.prox_tol, max_iter=cfg.prox_max_iter)
    grads = net.grad_weights(adj.cache, s)
    grads = [(cfg.alpha * dw, cfg.alpha * db) for dw, db in grads]
    residual_image = op.adjoint(b - op.apply(x_star))
    dlam_dir = cfg.alpha * op.solve_normal_plus_identity(residual_image, w, tol=cfg.prox_tol, max_iter=cfg.prox_max_iter)
    grad_lam = float(np.real(inner(adj.q, dlam_dir)))
    return grads, grad_lam, adj


def fixed_point_stationarity(net, op, cfg: MolConfig, x_star, b) -> float:
    """Residual of the optimality relation lam*A^H(A x - b) + F(x) = 0,
    relative to ||F(x)|| (small at a converged fixed point)."""
    f = net.score(x_star)
    g = cfg.lam * op.adjoint(op.apply(x_star) - b)
    return norm(g + f) / (norm(f) + EPS)
