"""Deep-Sets actor and quantile critic.

Inputs are batched: features ``(B, K, F)``, user mask ``(B, K)`` and, for the
critic, the action ``(B, K)``. Inactive rows are zeroed after every per-user
layer so they never leak into the set aggregates.
"""
from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

NORM_EPS = 1e-8
CRITIC_MODES = ("expected", "distributional", "distr_dueling")


def _glorot(rng, n_in, n_out):
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_in, n_out))


class Module:
    """Named parameters stored as views into one flat vector.

    The flat layout lets the optimizer and the target soft update work on a
    single array. Parameter values must be modified in place.
    """

    params: Dict[str, Tensor]
    flat: np.ndarray

    def _pack(self, arrays: Dict[str, np.ndarray], requires_grad: bool = True):
        self.flat = np.concatenate([np.ravel(v) for v in arrays.values()]).astype(float)
        self.params, i = {}, 0
        for k, v in arrays.items():
            n = np.size(v)
            self.params[k] = Tensor(self.flat[i:i + n].reshape(np.shape(v)), requires_grad)
            i += n
        return self

    def n_params(self) -> int:
        return int(self.flat.size)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def flat_grad(self) -> np.ndarray:
        """Gradients in the flat layout (zeros where none accumulated)."""
        return np.concatenate([np.zeros(p.value.size) if p.grad is None else p.grad.ravel()
                               for p in self.params.values()])

    def state(self) -> Dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state(self, state):
        for k, p in self.params.items():
            v = np.asarray(state[k], float)
            if v.shape != p.shape:
                raise ValueError(f"{k}: shape {v.shape} != {p.shape}")
            p.value[...] = v

    def frozen_copy(self):
        """Copy whose parameters do not require gradients (target network)."""
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone._pack(self.state(), requires_grad=False)
        return clone


def soft_update(target: Module, online: Module, tau: float = 0.005):
    """``target <- (1 - tau) target + tau online`` for every parameter."""
    if target.params.keys() != online.params.keys():
        raise ValueError("parameter names differ")
    for k, t in target.params.items():
        if online.params[k].shape != t.shape:
            raise ValueError(f"{k}: shape {t.shape} != {online.params[k].shape}")
    target.flat *= 1.0 - tau
    target.flat += tau * online.flat


def equivariant(x, mask, lam, gam, activation=None):
    """Deep-Sets layer ``x Lambda + (1 1^T x) Gamma`` over the active users.

    ``activation`` is ``None`` (linear) or ``'relu'``.
    """
    return ad.set_layer(x, lam, gam, mask, relu=activation == "relu")


def masked_normalize(x, mask, eps: float = NORM_EPS):
    """Center over active users, then scale the centered vector to unit norm.

    ``x`` and ``mask`` are ``(B, K)``; the norm is floored through
    ``sqrt(|x_c|^2 + eps^2)`` so an all-equal row maps to zeros.
    """
    return ad.center_normalize(x, mask, eps)


class Actor(Module):
    """Permutation-equivariant policy.

    Parameters
    ----------
    n_features : int
    hidden : int
        Width of the two per-user layers and of the equivariant relu layer.
    simplex : bool
        Append the L1 head (no-CSI portions); otherwise output raw scores.
    rng : numpy Generator
    """

    def __init__(self, n_features: int, hidden: int = 10, simplex: bool = False, rng=None):
        rng = np.random.default_rng(rng)
        self.n_features, self.hidden, self.simplex = n_features, hidden, simplex
        h = hidden
        self._pack({
            "u1_w": _glorot(rng, n_features, h),
            "u1_b": np.zeros(h),
            "u2_w": _glorot(rng, h, h),
            "u2_b": np.zeros(h),
            "eq1_lam": _glorot(rng, h, h),
            "eq1_gam": _glorot(rng, h, h) / h,
            "eq2_lam": _glorot(rng, h, 1),
            "eq2_gam": _glorot(rng, h, 1) / h,
        })

    # layers perturbed by exploration noise
    user_layers = ("u1_w", "u1_b", "u2_w", "u2_b")

    def forward(self, feats, mask, params: Optional[Dict] = None, return_pre=False):
        p = self.params if params is None else params
        m = np.asarray(mask, float)
        m3 = m[..., None]
        x = ad.masked_relu(ad.linear(feats, p["u1_w"], p["u1_b"]), m3)
        x = ad.masked_relu(ad.linear(x, p["u2_w"], p["u2_b"]), m3)
        x = equivariant(x, m3, p["eq1_lam"], p["eq1_gam"], "relu")
        x = equivariant(x, m3, p["eq2_lam"], p["eq2_gam"])
        x = ad.reshape(x, x.shape[:-1])
        z = masked_normalize(x, m)
        out = ad.masked_softplus(z, m)
        if self.simplex:
            tot = ad.sum(out, axis=1, keepdims=True)
            # rows without active users stay all-zero
            out = out / (tot + (m.sum(axis=1, keepdims=True) == 0))
        return (out, z) if return_pre else out


class Critic(Module):
    """Permutation-invariant quantile critic with a dueling head.

    Parameters
    ----------
    n_features : int
        Per-user features, excluding the action column.
    hidden : int
    n_quantiles : int
    mode : {'expected', 'distributional', 'distr_dueling'}
        ``expected`` reads the mean head only, ``distributional`` reads the
        shape head as atoms, ``distr_dueling`` combines both.
    """

    def __init__(self, n_features: int, hidden: int = 10, n_quantiles: int = 50,
                 mode: str = "distr_dueling", rng=None):
        if mode not in CRITIC_MODES:
            raise ValueError(f"mode must be one of {CRITIC_MODES}, got {mode!r}")
        rng = np.random.default_rng(rng)
        self.n_features, self.hidden, self.n_quantiles, self.mode = n_features, hidden, n_quantiles, mode
        h = hidden
        self._pack({
            "c1_w": _glorot(rng, n_features + 1, h),
            "c1_b": np.zeros(h),
            "c2_w": _glorot(rng, h, h),
            "c2_b": np.zeros(h),
            "eq_lam": _glorot(rng, h, h),
            "eq_gam": _glorot(rng, h, h) / h,
            "mean_w": _glorot(rng, h, 1),
            "mean_b": np.zeros(1),
            "shape_w": _glorot(rng, h, n_quantiles),
            "shape_b": np.zeros(n_quantiles),
        })

    def forward(self, feats, action, mask, params: Optional[Dict] = None):
        """Return ``(atoms (B, N), mean (B,), shape (B, N))``.

        In ``expected`` mode the atoms are the mean repeated ``N`` times.
        """
        p = self.params if params is None else params
        m3 = np.asarray(mask, float)[..., None]
        a = action if isinstance(action, Tensor) else Tensor(action)
        x = ad.concat([feats, ad.reshape(a, a.shape + (1,))], axis=-1)
        x = ad.masked_relu(ad.linear(x, p["c1_w"], p["c1_b"]), m3)
        x = ad.masked_relu(ad.linear(x, p["c2_w"], p["c2_b"]), m3)
        x = equivariant(x, m3, p["eq_lam"], p["eq_gam"], "relu")
        pooled = ad.sum(x, axis=1)
        mean_head = ad.reshape(ad.linear(pooled, p["mean_w"], p["mean_b"]), (pooled.shape[0],))
        if self.mode == "expected":
            atoms = ad.reshape(mean_head, (pooled.shape[0], 1)) * np.ones((1, self.n_quantiles))
            return atoms, mean_head, None
        shape = ad.linear(pooled, p["shape_w"], p["shape_b"])
        if self.mode == "distributional":
            return shape, ad.mean(shape, axis=1), shape
        centered = shape - ad.mean(shape, axis=1, keepdims=True)
        atoms = ad.reshape(mean_head, (pooled.shape[0], 1)) + centered
        return atoms, mean_head, shape


def quantile_midpoints(n: int) -> np.ndarray:
    """``tau_i = (2i - 1) / (2n)`` for ``i = 1..n``."""
    return (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)


def quantile_loss(pred, target) -> Tensor:
    """Batch-mean pinball loss of ``pred (B, N)`` against ``target (B, M)``.

    Atoms keep their output order; atom ``i`` is the ``tau_i`` quantile.
    """
    pred = ad.as_tensor(pred)
    if pred.value.ndim == 1:
        pred = ad.reshape(pred, (1, pred.shape[0]))
        target = np.asarray(target, float)[None, :]
    taus = quantile_midpoints(pred.shape[1])
    return ad.mean(ad.pinball(pred, target, taus))


def check_param_budget(actor: Actor, critic: Critic, limit: Optional[int] = 2000) -> int:
    """Total parameter count; raises when it reaches ``limit``."""
    n = actor.n_params() + critic.n_params()
    if limit is not None and n >= limit:
        raise ValueError(f"{n} parameters, budget is < {limit}")
    return n
