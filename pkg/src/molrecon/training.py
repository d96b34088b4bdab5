"""End-to-end training of the equilibrium reconstruction.

Two Lipschitz-control regimes: "LR" adds a log-barrier on the local
perturbation-ascent estimate at each fixed point (perturbation frozen after
its own ascent), "SN" spectrally normalizes every layer after each update.
Updates are per-sample (batch size 1) with Adam on the network weights and on
the scalar data-consistency weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import DenoiserNet
from .lipschitz import barrier_term, estimate_local_lipschitz
from .metrics import psnr, ssim
from .numerics import norm
from .solver import MolConfig, backward_deq, forward_deq


@dataclass
class TrainConfig:
    regime: str = "LR"
    epochs: int = 10
    lr_theta: float = 1e-4
    lr_lambda: float = 1.0
    batch_size: int = 1
    m: float = 0.1
    alpha: float = 0.055
    seed: int = 0
    beta0: float | None = None          # LR barrier scale; defaults to 1/m
    beta_decay: float = 0.98
    sn_target: float | None = None      # SN layer-product bound; defaults to 1-m
    n_layers: int = 5
    hidden: int = 64
    kernel: int = 3
    kappa: float = 1e-4
    max_iter_forward: int = 200
    max_iter_backward: int = 200
    lam_init: float = 50.0
    lam0: float = 100.0
    lip_steps: int = 10
    init_normalize: bool = True         # feasible start for the barrier

    def __post_init__(self):
        if self.regime not in ("LR", "SN"):
            raise ValueError("regime must be 'LR' or 'SN'")
        if self.batch_size != 1:
            raise ValueError("only per-sample updates (batch_size=1) are supported")
        if self.beta0 is None:
            self.beta0 = 1.0 / self.m
        if self.sn_target is None:
            self.sn_target = 1.0 - self.m

    def mol_config(self, lam) -> MolConfig:
        return MolConfig(
            alpha=self.alpha,
            lam=lam,
            m=self.m,
            kappa=self.kappa,
            max_iter_forward=self.max_iter_forward,
            max_iter_backward=self.max_iter_backward,
            lam0=self.lam0,
        )


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update; returns new params, mutates the state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError("params/grads shape mismatch")
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grads
    state.v = beta2 * state.v + (1 - beta2) * grads**2
    m_hat = state.m / (1 - beta1**state.t)
    v_hat = state.v / (1 - beta2**state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainState:
    net: DenoiserNet
    lam: float
    adam_theta: AdamState
    adam_lam: AdamState
    epoch: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def initialize(cls, cfg: TrainConfig, image_shape):
        net = DenoiserNet.create(
            image_shape, n_layers=cfg.n_layers, hidden=cfg.hidden, kernel=cfg.kernel, seed=cfg.seed
        )
        if cfg.init_normalize:
            # log-barrier methods need a strictly feasible start; begin inside
            # the constraint set for both regimes
            net.spectral_normalize(cfg.sn_target)
        return cls(net, cfg.lam_init, AdamState.zeros(net.n_params()), AdamState.zeros(1))


def train_epoch(state: TrainState, dataset, cfg: TrainConfig, val_dataset=None) -> TrainState:
    """One pass over the dataset with per-sample updates (Algorithm: solve the
    equilibrium, ascend the perturbation, freeze it, backpropagate through the
    fixed point, update).  Divergent samples contribute no gradient.
    """
    net = state.net
    threshold_sq = (1.0 - cfg.m) ** 2
    beta = cfg.beta0 * cfg.beta_decay**state.epoch
    losses, nfes, p_values, anchors = [], [], [], []
    skipped = 0
    for i, (x_gt, b, op) in enumerate(dataset):
        mol_cfg = cfg.mol_config(state.lam)
        res = forward_deq(net, op, mol_cfg, b)
        nfes.append(res.nfe)
        if not res.converged:
            skipped += 1
            continue
        x_star = res.x_star
        mse = norm(x_star - x_gt) ** 2
        grads_mse, grad_lam, adj = backward_deq(net, op, mol_cfg, x_star, 2.0 * (x_star - x_gt), b)
        if not adj.converged:
            skipped += 1
            continue

        loss = mse
        if cfg.regime == "LR":
            lip_seed = (cfg.seed * 1_000_003 + state.epoch) * 1_000 + i
            lip = estimate_local_lipschitz(net, x_star, steps=cfg.lip_steps, seed=lip_seed)
            penalty, grads_bar, p = barrier_term(net, x_star, lip.eta_star, threshold_sq, beta)
            p_values.append(p)
            loss = mse + penalty
            grads = [
                (dw_m + dw_b, db_m + db_b)
                for (dw_m, db_m), (dw_b, db_b) in zip(grads_mse, grads_bar)
            ]
        else:
            grads = grads_mse
            if len(anchors) < 2:
                anchors.append(x_star)
        losses.append(loss)

        flat = net.flat_params()
        flat = adam_step(flat, DenoiserNet.flatten_grads(grads), state.adam_theta, cfg.lr_theta)
        net.set_flat_params(flat)
        new_lam = adam_step(np.array([state.lam]), np.array([grad_lam]), state.adam_lam, cfg.lr_lambda)
        state.lam = float(max(new_lam[0], 1e-3))  # prox system must stay positive definite

        if cfg.regime == "SN":
            net.spectral_normalize(cfg.sn_target)

    if cfg.regime == "LR":
        lip_value = float(np.sqrt(max(p_values))) if p_values else float("nan")
    else:
        estimates = [
            estimate_local_lipschitz(net, a, steps=cfg.lip_steps, seed=cfg.seed * 7 + k).scale
            for k, a in enumerate(anchors)
        ]
        lip_value = float(max(estimates)) if estimates else float("nan")

    record = {
        "epoch": state.epoch,
        "train_loss": float(np.mean(losses)) if losses else float("nan"),
        "mean_nfe": float(np.mean(nfes)) if nfes else float("nan"),
        "lipschitz": lip_value,
        "max_p": float(max(p_values)) if p_values else float("nan"),
        "beta": beta if cfg.regime == "LR" else float("nan"),
        "lam": state.lam,
        "skipped": skipped,
        "val_psnr": float("nan"),
        "val_ssim": float("nan"),
        "val_nfe": float("nan"),
    }
    if val_dataset is not None:
        metrics = validate(state, val_dataset, cfg)
        record["val_psnr"] = metrics["mean_psnr"]
        record["val_ssim"] = metrics["mean_ssim"]
        record["val_nfe"] = metrics["mean_nfe"]
    state.history.append(record)
    state.epoch += 1
    return state


def validate(state: TrainState, dataset, cfg: TrainConfig) -> dict:
    """Reconstruction metrics over a dataset; solves only, no state change.
    Divergent samples are excluded from means and counted."""
    mol_cfg = cfg.mol_config(state.lam)
    psnrs, ssims, nfes = [], [], []
    diverged = 0
    for x_gt, b, op in dataset:
        res = forward_deq(state.net, op, mol_cfg, b)
        if not res.converged:
            diverged += 1
            continue
        psnrs.append(psnr(res.x_star, x_gt))
        ssims.append(ssim(res.x_star, x_gt))
        nfes.append(res.nfe)
    return {
        "mean_psnr": float(np.mean(psnrs)) if psnrs else float("nan"),
        "mean_ssim": float(np.mean(ssims)) if ssims else float("nan"),
        "mean_nfe": float(np.mean(nfes)) if nfes else float("nan"),
        "n_diverged": diverged,
        "n_samples": len(dataset),
    }
