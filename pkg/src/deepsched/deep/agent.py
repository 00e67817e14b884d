"""Deep Scheduler: DDPG with a Deep-Sets actor and a quantile critic."""
from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
from typing import Callable, Optional

import numpy as np

from ..env import SchedulingEnv
from ..exceptions import TrainingDivergedError
from ..schedulers.base import BaseScheduler, greedy_allocate
from ..validation import as_generator, check_csi_mode, check_is_fitted, clip_to_budget
from . import autodiff as ad
from .autodiff import Tensor
from .networks import CRITIC_MODES, Actor, Critic, check_param_budget, quantile_loss, soft_update
from .replay import Batch, ReplayBuffer
from .scaling import RewardScaler

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class Adam:
    """Adam over a module's flat parameter vector (default decay constants)."""

    def __init__(self, module, lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.module, self.lr = module, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros_like(module.flat)
        self.v = np.zeros_like(module.flat)
        self.t = 0

    def step(self):
        g = self.module.flat_grad()
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * g
        self.v *= b2
        self.v += (1 - b2) * g * g
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        self.module.flat -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _no_grad(params: dict) -> dict:
    return {k: Tensor(p.value) for k, p in params.items()}


class DeepScheduler(BaseScheduler):
    """Learned scheduler; ``fit(env)`` runs the off-policy training loop.

    Parameters
    ----------
    csi : {'full', 'none'}
        Full CSI ranks users by score and grants thresholds greedily; no CSI
        splits ``W`` by the actor's portions.
    critic_mode : {'expected', 'distributional', 'distr_dueling'}
    scale_rewards : bool
        Store rewards normalised by running return statistics.
    n_steps : int
        Environment steps (one gradient update each once warm).
    hidden : int
        Layer width (10 for the synthetic scenarios).
    n_quantiles, batch_size, buffer_size, gamma, tau, lr : training constants
    explore_prob : float
        Probability of acting with perturbed per-user layers.
    noise_scale : float
        Perturbation std as a fraction of each layer's weight std.
    eval_every : int
        Steps between greedy evaluations (checked at episode ends).
    eval_episodes : int
        Fixed-seed episodes per evaluation; 0 disables it.
    max_params : int or None
        Construction fails when actor + critic reach this many parameters.
    random_state : int
    curve_path, checkpoint_path : str, optional
        Learning-curve CSV and divergence/final checkpoint locations.
    """

    def __init__(self, csi: str = "full", critic_mode: str = "distr_dueling",
                 scale_rewards: bool = True, n_steps: int = 50_000, hidden: int = 10,
                 n_quantiles: int = 50, batch_size: int = 64, buffer_size: int = 5000,
                 gamma: float = 0.95, tau: float = 0.005, lr: float = 1e-3,
                 explore_prob: float = 0.25, noise_scale: float = 0.1,
                 eval_every: int = 2500, eval_episodes: int = 2, eval_seed: int = 900_000,
                 max_params: Optional[int] = 2000, random_state=0,
                 curve_path: Optional[str] = None, checkpoint_path: Optional[str] = None):
        self.csi = csi
        self.critic_mode = critic_mode
        self.scale_rewards = scale_rewards
        self.n_steps = n_steps
        self.hidden = hidden
        self.n_quantiles = n_quantiles
        self.batch_size = batch_size
        self.buffer_size = buffer_size
        self.gamma = gamma
        self.tau = tau
        self.lr = lr
        self.explore_prob = explore_prob
        self.noise_scale = noise_scale
        self.eval_every = eval_every
        self.eval_episodes = eval_episodes
        self.eval_seed = eval_seed
        self.max_params = max_params
        self.random_state = random_state
        self.curve_path = curve_path
        self.checkpoint_path = checkpoint_path

    @property
    def csi_mode(self):
        return self.csi

    @property
    def name(self):
        return f"DeepScheduler[{self.csi},{self.critic_mode},{'scaled' if self.scale_rewards else 'raw'}]"

    # -- construction ------------------------------------------------------

    def build(self, n_users: int, n_features: int):
        """Create networks, targets, optimizers, buffer and scaler."""
        check_csi_mode(self.csi)
        if self.critic_mode not in CRITIC_MODES:
            raise ValueError(f"critic_mode must be one of {CRITIC_MODES}")
        ss = np.random.SeedSequence(self.random_state)
        s_actor, s_critic, s_loop = ss.spawn(3)
        self.actor_ = Actor(n_features, self.hidden, simplex=self.csi == "none",
                            rng=np.random.default_rng(s_actor))
        self.critic_ = Critic(n_features, self.hidden, self.n_quantiles, self.critic_mode,
                              rng=np.random.default_rng(s_critic))
        self.n_params_ = check_param_budget(self.actor_, self.critic_, self.max_params)
        self.actor_target_ = self.actor_.frozen_copy()
        self.critic_target_ = self.critic_.frozen_copy()
        self.actor_opt_ = Adam(self.actor_, self.lr)
        self.critic_opt_ = Adam(self.critic_, self.lr)
        self.buffer_ = ReplayBuffer(self.buffer_size, n_users, n_features)
        self.scaler_ = RewardScaler(self.gamma)
        self.rng_ = np.random.default_rng(s_loop)
        self.n_users_, self.n_features_ = n_users, n_features
        self.steps_ = 0
        self.curves_ = []
        self.evals_ = []
        return self

    # -- acting --------------------------------------------------------------

    def _noisy_params(self, rng) -> dict:
        p = _no_grad(self.actor_.params)
        for w_name, b_name in (("u1_w", "u1_b"), ("u2_w", "u2_b")):
            std = self.noise_scale * float(np.std(p[w_name].value))
            for n in (w_name, b_name):
                p[n] = Tensor(p[n].value + rng.normal(0.0, std, p[n].shape))
        return p

    def scores(self, obs, params=None) -> np.ndarray:
        """Actor output for one observation: scores (full CSI) or portions."""
        params = _no_grad(self.actor_.params) if params is None else params
        return self.actor_.forward(obs.features[None], obs.mask[None], params).value[0]

    def act(self, obs, explore: bool = False, rng=None):
        """Return ``(allocation, actor_output)``; never infeasible."""
        params = None
        if explore:
            params = self._noisy_params(as_generator(rng) if rng is not None else self.rng_)
        a = self.scores(obs, params)
        W = obs.total_bandwidth
        if self.csi == "none":
            w = clip_to_budget(np.where(obs.mask, a * W, 0.0), W)
        else:
            act = np.flatnonzero(obs.mask)
            order = act[np.argsort(-a[act], kind="stable")]
            w = greedy_allocate(order, obs.w_threshold, W)
        return w, a

    def _allocate(self, obs):
        check_is_fitted(self, "actor_")
        return self.act(obs, explore=False)[0]

    # -- updates -------------------------------------------------------------

    def critic_loss(self, batch: Batch, params=None):
        """Loss tensor for one critic step (targets are constants)."""
        nxt = self.actor_target_.forward(batch.next_feats, batch.next_mask).value
        t_atoms, t_mean, _ = self.critic_target_.forward(batch.next_feats, nxt, batch.next_mask)
        cont = self.gamma * (1.0 - batch.done.astype(float))
        atoms, mean, shape = self.critic_.forward(batch.feats, batch.action, batch.mask, params)
        if self.critic_mode == "expected":
            y = batch.reward + cont * t_mean.value
            return ad.mean(ad.square(mean - y))
        y = batch.reward[:, None] + cont[:, None] * t_atoms.value
        loss = quantile_loss(atoms, y)
        if self.critic_mode == "distr_dueling":
            loss = loss + ad.mean(ad.square(ad.sum(shape, axis=1)))
        return loss

    def critic_update(self, batch: Batch) -> Optional[float]:
        if len(batch) == 0:
            return None
        self.critic_.zero_grad()
        loss = self.critic_loss(batch)
        loss.backward()
        self.critic_opt_.step()
        return float(loss.value)

    def actor_loss(self, batch: Batch, critic_fn: Optional[Callable] = None, params=None):
        """``-mean Q(s, pi(s))``; ``critic_fn(feats, action, mask) -> (B,)`` overrides the critic."""
        a = self.actor_.forward(batch.feats, batch.mask, params)
        if critic_fn is None:
            # critic weights as constants: only the action path is differentiated
            q = self.critic_.forward(batch.feats, a, batch.mask, _no_grad(self.critic_.params))[1]
        else:
            q = critic_fn(batch.feats, a, batch.mask)
        return -ad.mean(q)

    def actor_update(self, batch: Batch, critic_fn: Optional[Callable] = None) -> Optional[float]:
        if len(batch) == 0:
            return None
        self.actor_.zero_grad()
        loss = self.actor_loss(batch, critic_fn)
        loss.backward()
        self.actor_opt_.step()
        return float(loss.value)

    def update_targets(self):
        soft_update(self.actor_target_, self.actor_, self.tau)
        soft_update(self.critic_target_, self.critic_, self.tau)

    # -- training loop -------------------------------------------------------

    def fit(self, env: SchedulingEnv, y=None):
        super().fit(env)
        self.build(env.scenario.K, env.n_features[self.csi])
        self.train(env, self.n_steps)
        return self

    def evaluate(self, env: SchedulingEnv, n_episodes: Optional[int] = None):
        """Greedy rollouts on the fixed evaluation seeds; returns metrics list."""
        from ..evaluation import run_episode

        n = self.eval_episodes if n_episodes is None else n_episodes
        ev = SchedulingEnv(env.scenario, env.lookahead, env.user_factory)
        return [run_episode(self, ev, self.eval_seed + i) for i in range(n)]

    def train(self, env: SchedulingEnv, n_steps: int):
        """Run ``n_steps`` more environment steps of training."""
        check_is_fitted(self, "actor_")
        rng = self.rng_
        warm = self.batch_size
        n_cls = len(env.table) - 1
        env.reset(int(rng.integers(2**31)))
        self.scaler_.reset_return()
        obs = env.observe(self.csi)
        ep_gain, c_losses, a_losses = 0.0, [], []
        next_eval = (self.steps_ // self.eval_every + 1) * self.eval_every if self.eval_every else None
        for _ in range(n_steps):
            explore = rng.random() < self.explore_prob
            w, a = self.act(obs, explore=explore)
            _, r, _ = env.step(w)
            nxt = env.observe(self.csi)
            rs = self.scaler_(r) if self.scale_rewards else r
            # episode ends are time limits, not terminal states
            self.buffer_.push(obs.features, obs.mask, a, rs, nxt.features, nxt.mask, False)
            ep_gain += r
            self.steps_ += 1
            if len(self.buffer_) >= warm:
                batch = self.buffer_.sample(self.batch_size, rng)
                cl = self.critic_update(batch)
                al = self.actor_update(batch)
                if not (np.isfinite(cl) and np.isfinite(al)):
                    path = self._divergence_checkpoint()
                    raise TrainingDivergedError(
                        f"non-finite loss at step {self.steps_} (critic={cl}, actor={al})", path)
                self.update_targets()
                c_losses.append(cl)
                a_losses.append(al)
            obs = nxt
            if env.done:
                self._end_episode(env, ep_gain, c_losses, a_losses, n_cls, next_eval)
                if next_eval is not None and self.steps_ >= next_eval:
                    next_eval += self.eval_every
                env.reset(int(rng.integers(2**31)))
                self.scaler_.reset_return()
                obs = env.observe(self.csi)
                ep_gain, c_losses, a_losses = 0.0, [], []
        if self.curve_path:
            self.write_curves(self.curve_path)
        if self.checkpoint_path:
            self.save_checkpoint(self.checkpoint_path)
        return self

    def _end_episode(self, env, gain, c_losses, a_losses, n_cls, next_eval):
        sat = np.zeros(n_cls)
        dep = np.zeros(n_cls)
        for c, ok in env.departed:
            dep[c - 1] += 1
            sat[c - 1] += ok
        row = {"episode": len(self.curves_), "step": self.steps_,
               "gain_per_slot": gain / env.scenario.n_slots,
               "critic_loss": float(np.mean(c_losses)) if c_losses else np.nan,
               "actor_loss": float(np.mean(a_losses)) if a_losses else np.nan}
        for c in range(n_cls):
            row[f"sat_class{c + 1}"] = sat[c] / dep[c] if dep[c] else np.nan
        row["eval_gain_per_slot"] = np.nan
        if next_eval is not None and self.eval_episodes and self.steps_ >= next_eval:
            ms = self.evaluate(env)
            g = float(np.mean([m.gain_per_slot for m in ms]))
            row["eval_gain_per_slot"] = g
            sats = np.nanmean(np.stack([m.satisfaction for m in ms]), axis=0) if ms else []
            for c in range(n_cls):
                row[f"eval_sat_class{c + 1}"] = float(sats[c])
            self.evals_.append((self.steps_, g))
            log.info("step %d eval gain/slot %.4f", self.steps_, g)
        self.curves_.append(row)

    def write_curves(self, path: str):
        """One CSV row per training episode; eval columns filled when evaluated."""
        keys = []
        for r in self.curves_:
            keys += [k for k in r if k not in keys]
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=keys, restval="")
            wr.writeheader()
            wr.writerows(self.curves_)
        return path

    # -- persistence -------------------------------------------------------

    def save_checkpoint(self, path: str):
        """``.npz`` with every parameter matrix, scaler state and RNG state."""
        arrays = {}
        for prefix, mod in (("actor", self.actor_), ("critic", self.critic_),
                            ("actor_target", self.actor_target_),
                            ("critic_target", self.critic_target_)):
            for k, v in mod.state().items():
                arrays[f"{prefix}/{k}"] = v
        meta = {"version": CHECKPOINT_VERSION, "params": self._json_params(),
                "n_users": self.n_users_, "n_features": self.n_features_,
                "steps": self.steps_, "scaler": self.scaler_.state(),
                "rng": self.rng_.bit_generator.state}
        arrays["meta"] = np.array(json.dumps(meta))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        return path

    def _json_params(self):
        return {k: v for k, v in self.get_params().items()
                if isinstance(v, (int, float, str, bool, type(None)))}

    @classmethod
    def load_checkpoint(cls, path: str, env: Optional[SchedulingEnv] = None):
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            est = cls(**meta["params"])
            if env is not None:
                BaseScheduler.fit(est, env)
            est.build(meta["n_users"], meta["n_features"])
            for prefix, mod in (("actor", est.actor_), ("critic", est.critic_),
                                ("actor_target", est.actor_target_),
                                ("critic_target", est.critic_target_)):
                mod.load_state({k: z[f"{prefix}/{k}"] for k in mod.params})
        est.steps_ = meta["steps"]
        est.scaler_.load_state(meta["scaler"])
        est.rng_.bit_generator.state = meta["rng"]
        return est

    def _divergence_checkpoint(self):
        path = self.checkpoint_path
        if path is None:
            fd, path = tempfile.mkstemp(prefix="deepsched-diverged-", suffix=".npz")
            os.close(fd)
        try:
            return self.save_checkpoint(path)
        except OSError:  # pragma: no cover - best effort
            return None
