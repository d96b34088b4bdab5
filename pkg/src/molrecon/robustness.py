"""Measurement-domain perturbation studies: worst-case (projected gradient
ascent) and Gaussian, plus the theoretical amplification bound they are
checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import psnr
from .numerics import EPS, norm
from .solver import backward_fixed_point, contraction_factor, forward_deq


@dataclass
class PerturbationReport:
    epsilon: float
    delta_in_norm: float
    delta_out_norm: float
    amplification: float
    theory_bound: float
    psnr_clean: float = float("nan")
    psnr_perturbed: float = float("nan")
    converged: bool = True

    def as_row(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta_in_norm": self.delta_in_norm,
            "delta_out_norm": self.delta_out_norm,
            "amplification": self.amplification,
            "theory_bound": self.theory_bound,
            "psnr_clean": self.psnr_clean,
            "psnr_perturbed": self.psnr_perturbed,
            "converged": int(self.converged),
        }


def robustness_bound(alpha, lam, m, mu_min) -> float:
    """Worst-case output/input perturbation ratio of the fixed point:
    alpha*lam/(1+lam*mu_min) / (1 - L_R).  Requires a certified contraction
    (alpha < alpha_max); approaches lam/m as alpha -> 0 with mu_min = 0.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive (the bound is a limit at 0)")
    l_r = contraction_factor(m, alpha, lam, 0.0) # gradient-step factor only
    if l_r >= 1.0:
        raise ValueError(f"infeasible: alpha={alpha} gives L_R={l_r} >= 1 (need alpha < alpha_max)")
    return float(alpha * lam / (1.0 + lam * mu_min) / (1.0 - l_r))


def _perturbation_gradient(net, op, cfg, x_pert, delta_out):
    """Gradient of ||x*(b+g) - x*(b)||^2 with respect to g.

    The adjoint state is mapped back through the constant term of the
    iteration: alpha*lam * A Q_alpha q.
    """
    adj = backward_fixed_point(net, op, cfg, x_pert, 2.0 * delta_out)
    w = cfg.alpha * cfg.lam
    s = op.solve_normal_plus_identity(adj.q, w, tol=cfg.prox_tol, max_iter=cfg.prox_max_iter)
    return w * op.apply(s), adj.converged


def adversarial_perturb(net, op, cfg, b, epsilon, steps=50, seed=0, x_gt=None, mu_min=None) -> PerturbationReport:
    """Worst-case measurement perturbation of norm epsilon*||b|| by projected
    gradient ascent (gradient step, then renormalization to the sphere).

    The perturbed solves warm-start from the previous perturbed fixed point;
    uniqueness of the fixed point makes the result independent of the start.
    Divergence at a perturbed input is reported as an unstable case with
    infinite amplification.
    """
    b = np.asarray(b, dtype=np.complex128)
    base = forward_deq(net, op, cfg, b)
    if not base.converged:
        raise RuntimeError("adversarial_perturb: forward solve diverged at the unperturbed input")
    if mu_min is None:
        mu_min = op.mu_bounds()[0]
    bound = robustness_bound(cfg.alpha, cfg.lam, cfg.m, mu_min)
    p_clean = psnr(base.x_star, x_gt) if x_gt is not None else float("nan")
    budget = epsilon * norm(b)
    if epsilon == 0.0 or budget == 0.0:
        return PerturbationReport(epsilon, 0.0, 0.0, 0.0, bound, p_clean, p_clean, True)

    rng = np.random.default_rng(seed)
    gamma = rng.standard_normal(b.shape) + 1j * rng.standard_normal(b.shape)
    gamma *= budget / norm(gamma)
    step = 0.1 * budget

    best_u = -np.inf
    best = None
    x_prev = base.x_star
    for _ in range(steps):
        res = forward_deq(net, op, cfg, b + gamma, x0=x_prev)
        if not res.converged:
            return PerturbationReport(
                epsilon, float(norm(gamma)), float("inf"), float("inf"), bound, p_clean, float("nan"), False
            )
        x_prev = res.x_star
        delta_out = res.x_star - base.x_star
        u = norm(delta_out) ** 2
        if u > best_u:
            best_u = u
            best = (gamma.copy(), res.x_star)
        grad, _ = _perturbation_gradient(net, op, cfg, res.x_star, delta_out)
        g = norm(grad)
        if g < EPS:
            break
        gamma = gamma + step * grad / g
        gamma *= budget / norm(gamma)

    gamma_best, x_best = best
    d_in = float(norm(gamma_best))
    d_out = float(np.sqrt(best_u))
    return PerturbationReport(
        epsilon,
        d_in,
        d_out,
        d_out / d_in,
        bound,
        p_clean,
        psnr(x_best, x_gt) if x_gt is not None else float("nan"),
        True,
    )


def gaussian_perturb(net, op, cfg, b, epsilon, trials=50, seed=0, x_gt=None, mu_min=None):
    """i.i.d. complex Gaussian perturbations rescaled to epsilon*||b||;
    one report per trial."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    b = np.asarray(b, dtype=np.complex128)
    base = forward_deq(net, op, cfg, b)
    if not base.converged:
        raise RuntimeError("gaussian_perturb: forward solve diverged at the unperturbed input")
    if mu_min is None:
        mu_min = op.mu_bounds()[0]
    bound = robustness_bound(cfg.alpha, cfg.lam, cfg.m, mu_min)
    p_clean = psnr(base.x_star, x_gt) if x_gt is not None else float("nan")
    budget = epsilon * norm(b)
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(trials):
        if budget == 0.0:
            reports.append(PerturbationReport(epsilon, 0.0, 0.0, 0.0, bound, p_clean, p_clean, True))
            continue
        delta = rng.standard_normal(b.shape) + 1j * rng.standard_normal(b.shape)
        delta *= budget / norm(delta)
        res = forward_deq(net, op, cfg, b + delta, x0=base.x_star)
        if not res.converged:
            reports.append(
                PerturbationReport(epsilon, float(norm(delta)), float("inf"), float("inf"), bound, p_clean, float("nan"), False)
            )
            continue
        d_out = float(norm(res.x_star - base.x_star))
        reports.append(
            PerturbationReport(
                epsilon,
                float(norm(delta)),
                d_out,
                d_out / float(norm(delta)),
                bound,
                p_clean,
                psnr(res.x_star, x_gt) if x_gt is not None else float("nan"),
                True,
            )
        )
    return reports
