"""Off-policy soft actor-critic built on the hand-backprop MLPs.

Tanh-squashed diagonal-Gaussian policy, twin critics with Polyak-averaged
targets, uniform replay, fixed entropy coefficient.  All gradients are
computed analytically; the update math lives in module-level functions that
the test suite certifies against central finite differences.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .nets import MLP, Adam, all_finite, he_init, soft_update

LOG_2PI = float(np.log(2.0 * np.pi))
SQUASH_EPS = 1e-6


class BufferTooSmall(RuntimeError):
    """Sampling requested before the buffer holds one full batch."""


@dataclass
class SACHyper:
    discount: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 256
    entropy_coef: float = 0.05
    gradient_steps: int = 1
    warmup: int = 1000
    hidden: tuple = (128, 128)
    buffer_capacity: int = 200_000
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    log_std_bias_init: float = -0.5


class ReplayBuffer:
    """Fixed-capacity ring buffer, uniform sampling with replacement.

    The leading `patch_len` entries of each observation hold the ternary
    occupancy patch and are stored as int8; the exact float32 values are
    reconstructed on sampling, so the round trip is bit-exact.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int = 3, patch_len: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0 <= patch_len <= obs_dim:
            raise ValueError("patch length must fit inside the observation")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.patch_len = patch_len
        tail = obs_dim - patch_len
        self._patch = np.zeros((capacity, patch_len), dtype=np.int8)
        self._patch2 = np.zeros((capacity, patch_len), dtype=np.int8)
        self._tail = np.zeros((capacity, tail), dtype=np.float32)
        self._tail2 = np.zeros((capacity, tail), dtype=np.float32)
        self._act = np.zeros((capacity, act_dim), dtype=np.float32)
        self._rew = np.zeros(capacity, dtype=np.float32)
        self._done = np.zeros(capacity, dtype=np.float32)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, obs, action, next_obs, reward: float, done: bool):
        i = self._next
        p = self.patch_len
        self._patch[i] = obs[:p]
        self._patch2[i] = next_obs[:p]
        self._tail[i] = obs[p:]
        self._tail2[i] = next_obs[p:]
        self._act[i] = action
        self._rew[i] = reward
        self._done[i] = 1.0 if done else 0.0
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _gather_obs(self, idx, patch, tail):
        out = np.empty((idx.size, self.obs_dim), dtype=np.float32)
        out[:, :self.patch_len] = patch[idx]
        out[:, self.patch_len:] = tail[idx]
        return out

    def sample(self, batch_size: int, rng):
        if self._size < batch_size:
            raise BufferTooSmall(f"buffer holds {self._size} < batch {batch_size}")
        idx = rng.integers(0, self._size, size=batch_size)
        return {
            "obs": self._gather_obs(idx, self._patch, self._tail),
            "act": self._act[idx].copy(),
            "next_obs": self._gather_obs(idx, self._patch2, self._tail2),
            "rew": self._rew[idx].copy(),
            "done": self._done[idx].copy(),
        }


class GaussianPolicy:
    """Tanh-squashed diagonal Gaussian over bounded position deltas."""

    def __init__(self, obs_dim: int, act_dim: int, hidden, rng, dtype,
                 action_scale: float, log_std_min: float, log_std_max: float,
                 log_std_bias_init: float = -0.5):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.dtype = dtype
        self.action_scale = float(action_scale)
        self.log_std_min = log_std_min
        self.log_std_max = log_std_max
        self.trunk = MLP([obs_dim, *hidden], rng, dtype=dtype, relu_output=True)
        width = hidden[-1]
        self.w_mu = he_init(rng, width, act_dim, dtype, scale=0.01)
        self.b_mu = np.zeros(act_dim, dtype=dtype)
        self.w_ls = he_init(rng, width, act_dim, dtype, scale=0.01)
        self.b_ls = np.full(act_dim, log_std_bias_init, dtype=dtype)

    @property
    def params(self):
        return [*self.trunk.params, self.w_mu, self.b_mu, self.w_ls, self.b_ls]

    def heads(self, obs, need_cache=False):
        h, cache = self.trunk.forward(obs, need_cache=need_cache)
        mu = h @ self.w_mu + self.b_mu
        ls_raw = h @ self.w_ls + self.b_ls
        ls = np.clip(ls_raw, self.log_std_min, self.log_std_max)
        return mu, ls_raw, ls, h, cache

    def sample(self, obs, eps):
        """Reparameterized sample: a = scale * tanh(mu + sigma * eps).

        Returns (action, log_prob, aux) with aux carrying what the update
        backward passes need.
        """
        mu, ls_raw, ls, h, cache = self.heads(obs, need_cache=True)
        sigma = np.exp(ls)
        u = mu + sigma * eps
        th = np.tanh(u)
        action = self.action_scale * th
        one_m = 1.0 - th * th
        log_prob = (-0.5 * eps * eps - ls - 0.5 * LOG_2PI
                    - np.log(one_m + SQUASH_EPS) - np.log(self.action_scale))
        log_prob = log_prob.sum(axis=-1)
        aux = {"mu": mu, "ls_raw": ls_raw, "ls": ls, "sigma": sigma, "eps": eps,
               "th": th, "one_m": one_m, "h": h, "cache": cache}
        return action, log_prob, aux

    def log_prob(self, obs, actions):
        """Density evaluation at given actions via the inverse squash (tests)."""
        mu, _, ls, _, _ = self.heads(obs)
        sigma = np.exp(ls)
        ratio = np.clip(np.asarray(actions) / self.action_scale, -1 + 1e-12, 1 - 1e-12)
        u = np.arctanh(ratio)
        th = np.tanh(u)
        lp = (-0.5 * ((u - mu) / sigma) ** 2 - ls - 0.5 * LOG_2PI
              - np.log(1.0 - th * th + SQUASH_EPS) - np.log(self.action_scale))
        return lp.sum(axis=-1)

    def mean_action(self, obs):
        mu, *_ = self.heads(obs)
        return self.action_scale * np.tanh(mu)

    def backward(self, aux, d_mu, d_ls):
        """Head + trunk gradients from d(loss)/d(mu) and d(loss)/d(ls)."""
        mask = (aux["ls_raw"] > self.log_std_min) & (aux["ls_raw"] < self.log_std_max)
        d_ls = d_ls * mask
        h = aux["h"]
        g_w_mu = h.T @ d_mu
        g_b_mu = d_mu.sum(axis=0)
        g_w_ls = h.T @ d_ls
        g_b_ls = d_ls.sum(axis=0)
        dh = d_mu @ self.w_mu.T + d_ls @ self.w_ls.T
        trunk_grads, _ = self.trunk.backward(aux["cache"], dh)
        return [*trunk_grads, g_w_mu, g_b_mu, g_w_ls, g_b_ls]

    def copy(self):
        dup = object.__new__(GaussianPolicy)
        dup.__dict__.update({k: v for k, v in self.__dict__.items() if k != "trunk"})
        dup.trunk = self.trunk.copy()
        dup.w_mu = self.w_mu.copy()
        dup.b_mu = self.b_mu.copy()
        dup.w_ls = self.w_ls.copy()
        dup.b_ls = self.b_ls.copy()
        return dup

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec):
        i = 0
        for p in self.params:
            n = p.size
            p[...] = np.asarray(vec[i:i + n], dtype=self.dtype).reshape(p.shape)
            i += n


class TwinCritic:
    """Two independent Q MLPs evaluated as one ensemble batch."""

    def __init__(self, obs_dim: int, act_dim: int, hidden, rng, dtype):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.net = MLP([obs_dim + act_dim, *hidden, 1], rng, dtype=dtype, ensemble=2)

    def q(self, obs, act, need_cache=False):
        x = np.concatenate([obs, act], axis=-1)
        x2 = np.stack([x, x])
        q, cache = self.net.forward(x2, need_cache=need_cache)
        return q[..., 0], cache   # (2, B)

    def copy(self):
        dup = object.__new__(TwinCritic)
        dup.obs_dim = self.obs_dim
        dup.act_dim = self.act_dim
        dup.net = self.net.copy()
        return dup


class SACLearner:
    """Policy, twin critics and their targets, optimizers, and replay."""

    def __init__(self, obs_dim: int, act_dim: int, action_scale: float,
                 hyper: SACHyper = None, rng=None, dtype=np.float32,
                 patch_len: int = 0):
        hyper = hyper or SACHyper()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.hyper = hyper
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.action_scale = float(action_scale)
        self.dtype = dtype
        self.policy = GaussianPolicy(obs_dim, act_dim, hyper.hidden, rng, dtype,
                                     action_scale, hyper.log_std_min, hyper.log_std_max,
                                     hyper.log_std_bias_init)
        self.critic = TwinCritic(obs_dim, act_dim, hyper.hidden, rng, dtype)
        self.target = self.critic.copy()
        self.policy_opt = Adam(self.policy.params, lr=hyper.lr)
        self.critic_opt = Adam(self.critic.net.params, lr=hyper.lr)
        self.buffer = ReplayBuffer(hyper.buffer_capacity, obs_dim, act_dim, patch_len)
        self.updates = 0

    # -- acting ------------------------------------------------------------

    def act(self, obs, rng, deterministic=False):
        o = np.asarray(obs, dtype=self.dtype)[None, :]
        if deterministic:
            return self.policy.mean_action(o)[0]
        eps = rng.standard_normal((1, self.act_dim)).astype(self.dtype)
        action, _, _ = self.policy.sample(o, eps)
        return action[0]

    # -- learning ----------------------------------------------------------

    def update(self, rng):
        batch = self.buffer.sample(self.hyper.batch_size, rng)
        b = self.hyper.batch_size
        eps_next = rng.standard_normal((b, self.act_dim)).astype(self.dtype)
        eps = rng.standard_normal((b, self.act_dim)).astype(self.dtype)
        batch = {k: np.asarray(v, dtype=self.dtype) for k, v in batch.items()}

        c_loss, c_grads = critic_loss_and_grads(self, batch, eps_next)
        self.critic_opt.step(self.critic.net.params, c_grads)

        a_loss, p_grads = actor_loss_and_grads(self, batch, eps)
        self.policy_opt.step(self.policy.params, p_grads)

        soft_update(self.target.net, self.critic.net, self.hyper.tau)
        self.updates += 1
        assert all_finite(self.critic.net) and all_finite(self.policy.trunk), \
            "non-finite parameter after update"
        return {"critic_loss": float(c_loss), "actor_loss": float(a_loss)}

    # -- checkpointing -----------------------------------------------------

    def save(self, path):
        arrays = {}
        for i, p in enumerate(self.policy.params):
            arrays[f"policy_{i}"] = p
        for i, p in enumerate(self.critic.net.params):
            arrays[f"critic_{i}"] = p
        for i, p in enumerate(self.target.net.params):
            arrays[f"target_{i}"] = p
        meta = {
            "obs_dim": self.obs_dim, "act_dim": self.act_dim,
            "action_scale": self.action_scale, "dtype": np.dtype(self.dtype).name,
            "patch_len": self.buffer.patch_len, "updates": self.updates,
            "hyper": asdict(self.hyper),
        }
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                     **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            hyper = SACHyper(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in meta["hyper"].items()})
            learner = cls(meta["obs_dim"], meta["act_dim"], meta["action_scale"],
                          hyper=hyper, rng=np.random.default_rng(0),
                          dtype=np.dtype(meta["dtype"]).type, patch_len=meta["patch_len"])
            for i in range(len(learner.policy.params)):
                learner.policy.params[i][...] = data[f"policy_{i}"]
            for i in range(len(learner.critic.net.params)):
                learner.critic.net.params[i][...] = data[f"critic_{i}"]
                learner.target.net.params[i][...] = data[f"target_{i}"]
            learner.updates = meta["updates"]
        return learner


# -- update math, kept as pure functions so finite differences can audit it --

def compute_target(learner: SACLearner, batch, eps_next):
    """Bootstrap target: r + gamma (1 - done) (min Q'(o', a') - alpha log pi)."""
    h = learner.hyper
    a_next, logp_next, _ = learner.policy.sample(batch["next_obs"], eps_next)
    q_next, _ = learner.target.q(batch["next_obs"], a_next)
    v_next = np.minimum(q_next[0], q_next[1]) - h.entropy_coef * logp_next
    return batch["rew"] + h.discount * (1.0 - batch["done"]) * v_next


def critic_loss(learner: SACLearner, batch, eps_next) -> float:
    y = compute_target(learner, batch, eps_next)
    q, _ = learner.critic.q(batch["obs"], batch["act"])
    return float(np.mean((q[0] - y) ** 2) + np.mean((q[1] - y) ** 2))


def critic_loss_and_grads(learner: SACLearner, batch, eps_next):
    y = compute_target(learner, batch, eps_next)
    q, cache = learner.critic.q(batch["obs"], batch["act"], need_cache=True)
    b = q.shape[1]
    loss = float(np.mean((q[0] - y) ** 2) + np.mean((q[1] - y) ** 2))
    dq = (2.0 / b) * (q - y)          # (2, B)
    grads, _ = learner.critic.net.backward(cache, dq[..., None])
    return loss, grads


def actor_loss(learner: SACLearner, batch, eps) -> float:
    h = learner.hyper
    action, logp, _ = learner.policy.sample(batch["obs"], eps)
    q, _ = learner.critic.q(batch["obs"], action)
    q_min = np.minimum(q[0], q[1])
    return float(np.mean(h.entropy_coef * logp - q_min))


def actor_loss_and_grads(learner: SACLearner, batch, eps):
    h = learner.hyper
    action, logp, aux = learner.policy.sample(batch["obs"], eps)
    q, q_cache = learner.critic.q(batch["obs"], action, need_cache=True)
    b = action.shape[0]
    q_min = np.minimum(q[0], q[1])
    loss = float(np.mean(h.entropy_coef * logp - q_min))

    # route -dQ/da through whichever critic attains the minimum, per sample
    pick = (q[1] < q[0]).astype(learner.dtype)   # 1 when critic 1 is the min
    dy = np.stack([(1.0 - pick), pick]) * (-1.0 / b)
    _, dx = learner.critic.net.backward(q_cache, dy[..., None])
    gq = dx.sum(axis=0)[:, learner.obs_dim:]     # (B, act_dim): d(loss)/d(action)

    th, one_m, sigma, eps_arr = aux["th"], aux["one_m"], aux["sigma"], aux["eps"]
    t_corr = 2.0 * th * one_m / (one_m + SQUASH_EPS)
    da_du = learner.action_scale * one_m
    # d loss / d u  (batch mean already folded into gq; entropy term adds 1/B)
    dlogp_du = t_corr
    d_u = (h.entropy_coef / b) * dlogp_du + gq * da_du
    d_mu = d_u
    d_ls = d_u * sigma * eps_arr - (h.entropy_coef / b)
    grads = learner.policy.backward(aux, d_mu, d_ls)
    return loss, grads
