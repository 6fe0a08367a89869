"""PPO actor-critic training with Action Forging.

Two forging mechanisms act on the actor's output layer:

* a group-sparsity penalty ``sum_j ||[W_j, b_j]||_2`` over output neurons,
  which drives whole actions towards zero weight;
* a wavelet bonus ``h(delta) * psi(x_j)`` added to the logit of each action
  ``j`` (``x_j`` is its percent change), which favours the no-change action.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cohort import CohortConfig, generate_cohort
from .env import DosingEnv, EnvConfig, run_policy
from .errors import DomainError
from .mdp import ActionSpace, RewardConfig, next_dose, pttr
from .nn import Adam, DenseNet, LrSchedule, load_networks, save_networks
from .protocols import DosingPolicy
from .rng import substream

OBS_SCALE = np.array([3.0, 3.0, 15.0, 7.0])
ELIMINATION_EPS = 1e-3
TRAINING_ID_OFFSET = 1_000_000
VALIDATION_ID_OFFSET = 900_000

LOG_COLUMNS = ["pass", "patients", "mean_reward", "train_pttr", "val_pttr", "kl", "actor_iters",
               "actor_lr", "critic_lr", "critic_loss", "regularizer", "available", "used", "h"]


class TrainingError(DomainError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    clip_ratio: float = 0.2
    gamma: float = 0.5
    gae_lambda: float = 0.97
    target_kl: float = 0.02
    entropy_coef: float = 0.0
    actor_iters: int = 20
    critic_iters: int = 80
    patients_per_pass: int = 500
    warmup_patients: int = 20000
    patience: int = 10
    max_passes: int = 400
    actor_lr: float = 1e-4
    critic_lr: float = 1e-5
    lr_decay: float = 0.8
    lr_step: int = 1000
    hidden: tuple = (256, 256, 128, 64)
    validation_patients: int = 500
    rebalance: bool = True
    min_variant_prob: float = 0.1

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise DomainError("gamma and gae_lambda must lie in (0, 1]")
        if self.clip_ratio <= 0 or self.target_kl <= 0:
            raise DomainError("clip_ratio and target_kl must be positive")
        if self.patients_per_pass < 1 or self.patience < 1:
            raise DomainError("patients_per_pass and patience must be positive")

    @property
    def warmup_passes(self) -> int:
        return math.ceil(self.warmup_patients / self.patients_per_pass)


@dataclass(frozen=True)
class ForgingConfig:
    regularizer_coef: float = 0.0
    wavelet_enabled: bool = False
    u: float = 0.2
    d: float = -0.1
    r: float = 1.0
    c1: float = 1e-3
    c2: float = 50.0

    def __post_init__(self):
        if self.r <= 0:
            raise DomainError("wavelet width r must be positive")
        if self.regularizer_coef < 0:
            raise DomainError("regularizer_coef must be non-negative")


# ---- forging arithmetic ------------------------------------------------------

def wavelet_value(x, u: float = 0.2, d: float = -0.1, r: float = 1.0):
    """Piece-wise linear bump: ``u`` at 0, falling from ``d`` near 0 to 0 at ``|x| = r``."""
    x = np.asarray(x, dtype=float)
    out = np.where(x == 0.0, u, (-d / r) * np.abs(x) + d)
    return float(out) if out.ndim == 0 else out


def schedule_h(delta, c1: float = 1e-3, c2: float = 50.0):
    # tanh form of the logistic sigmoid avoids overflow for large |delta|
    out = 0.5 * (1.0 + np.tanh(0.5 * c1 * (np.asarray(delta, dtype=float) - c2)))
    return float(out) if out.ndim == 0 else out


def forging_offset(action_space: ActionSpace, forging: ForgingConfig, delta) -> np.ndarray:
    if not forging.wavelet_enabled:
        return np.zeros(len(action_space))
    psi = wavelet_value(action_space.values, forging.u, forging.d, forging.r)
    return schedule_h(delta, forging.c1, forging.c2) * psi


def normalize_obs(obs) -> np.ndarray:
    return np.asarray(obs, dtype=float) / OBS_SCALE


def policy_logits(actor: DenseNet, obs, forging: ForgingConfig = ForgingConfig(),
                  train_step: float = 0.0, action_space: ActionSpace = ActionSpace()) -> np.ndarray:
    """Forged logits for already normalized observations."""
    return actor(obs) + forging_offset(action_space, forging, train_step)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def output_norms(actor: DenseNet) -> np.ndarray:
    """``||[W_j, b_j]||_2`` for every output neuron ``j``."""
    w, b = actor.weights[-1], actor.biases[-1]
    return np.sqrt(np.sum(w * w, axis=0) + b * b)


def action_regularizer(actor: DenseNet) -> float:
    return float(np.sum(output_norms(actor)))


def action_regularizer_grad(actor: DenseNet) -> tuple[np.ndarray, np.ndarray]:
    """Subgradient of the group norm; zero for groups that are exactly zero."""
    norms = output_norms(actor)
    safe = np.where(norms > 0, norms, 1.0)
    scale = np.where(norms > 0, 1.0 / safe, 0.0)
    return actor.weights[-1] * scale, actor.biases[-1] * scale


# ---- advantages --------------------------------------------------------------

def compute_gae(rewards, values, gamma: float, lam: float):
    """GAE over the last axis; the value after the final step is 0."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise DomainError(f"rewards {rewards.shape} and values {values.shape} differ in shape")
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[:-1])
    for t in range(rewards.shape[-1] - 1, -1, -1):
        next_v = values[..., t + 1] if t + 1 < rewards.shape[-1] else 0.0
        delta = rewards[..., t] + gamma * next_v - values[..., t]
        last = delta + gamma * lam * last
        adv[..., t] = last
    return adv, adv + values


# ---- buffer and updates --------------------------------------------------------

@dataclass
class RolloutBuffer:
    obs: np.ndarray          # (N, 4) normalized
    actions: np.ndarray      # (N,)
    logits: np.ndarray       # (N, K) forged logits at sampling time
    logp: np.ndarray         # (N,)
    rewards: np.ndarray      # (patients, decisions)
    values: np.ndarray       # (patients, decisions)
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)

    def finish(self, gamma: float, lam: float) -> None:
        adv, ret = compute_gae(self.rewards, self.values, gamma, lam)
        self.returns = ret.reshape(-1)
        adv = adv.reshape(-1)
        sd = adv.std()
        self.advantages = (adv - adv.mean()) / (sd if sd > 0 else 1.0)

    def __len__(self):
        return len(self.actions)


def surrogate_grad(logits_new, buffer: RolloutBuffer, clip_ratio: float):
    """Loss ``-mean(min(r A, clip(r) A))`` and its gradient w.r.t. the new logits."""
    logp_all = log_softmax(logits_new)
    n = len(buffer)
    idx = np.arange(n)
    ratio = np.exp(logp_all[idx, buffer.actions] - buffer.logp)
    adv = buffer.advantages
    clipped = np.clip(ratio, 1 - clip_ratio, 1 + clip_ratio)
    loss = -np.mean(np.minimum(ratio * adv, clipped * adv))
    active = ~(((adv > 0) & (ratio > 1 + clip_ratio)) | ((adv < 0) & (ratio < 1 - clip_ratio)))
    coef = -(active * adv * ratio) / n
    grad = -np.exp(logp_all) * coef[:, None]
    grad[idx, buffer.actions] += coef
    return loss, grad


def categorical_kl(logits_old, logits_new) -> float:
    lp_old = log_softmax(logits_old)
    lp_new = log_softmax(logits_new)
    return float(np.mean(np.sum(np.exp(lp_old) * (lp_old - lp_new), axis=-1)))


def actor_update(actor: DenseNet, buffer: RolloutBuffer, cfg: PpoConfig, forging: ForgingConfig,
                 opt: Adam, lr: float | Callable[[int], float], offset: np.ndarray | None = None):
    """Clipped-surrogate steps with KL early stop.

    Returns ``(iterations, kl, stopped_early)``. ``lr`` may be a callable of
    the optimizer's step counter.
    """
    offset = np.zeros(buffer.logits.shape[1]) if offset is None else offset
    kl, iters, stopped = 0.0, 0, False
    for _ in range(cfg.actor_iters):
        out, cache = actor.forward(buffer.obs, cache=True)
        logits = out + offset
        kl = categorical_kl(buffer.logits, logits)
        if kl > cfg.target_kl:
            stopped = True
            break
        loss, g = surrogate_grad(logits, buffer, cfg.clip_ratio)
        if cfg.entropy_coef:
            p = softmax(logits)
            lp = np.log(p)
            ent = -np.sum(p * lp, axis=1)
            g = g + cfg.entropy_coef * p * (lp + ent[:, None]) / len(buffer)
        grads = actor.backward(cache, g)
        if forging.regularizer_coef:
            gw, gb = action_regularizer_grad(actor)
            grads[-2] = grads[-2] + forging.regularizer_coef * gw
            grads[-1] = grads[-1] + forging.regularizer_coef * gb
        if not all(np.all(np.isfinite(x)) for x in grads) or not np.isfinite(loss):
            raise TrainingError("non-finite actor loss or gradient")
        step_lr = lr(opt.step_count) if callable(lr) else lr
        opt.step(actor.parameters(), grads, step_lr)
        iters += 1
    return iters, kl, stopped


def critic_update(critic: DenseNet, obs, returns, cfg: PpoConfig, opt: Adam,
                  lr: float | Callable[[int], float]) -> list:
    """Full-batch MSE steps; returns the loss before every step."""
    returns = np.asarray(returns, dtype=float)
    losses = []
    for _ in range(cfg.critic_iters):
        v, cache = critic.forward(obs, cache=True)
        err = v[:, 0] - returns
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise TrainingError("non-finite critic loss")
        losses.append(loss)
        grads = critic.backward(cache, (2.0 * err / len(err))[:, None])
        step_lr = lr(opt.step_count) if callable(lr) else lr
        opt.step(critic.parameters(), grads, step_lr)
    return losses


# ---- policies built on an actor --------------------------------------------------

class ActorPolicy(DosingPolicy):
    """Deterministic argmax over forged logits."""

    def __init__(self, actor: DenseNet, action_space: ActionSpace = ActionSpace(),
                 forging: ForgingConfig = ForgingConfig(), delta: float = 0.0, name: str = "rl"):
        self.actor = actor
        self.action_space = action_space
        self.offset = forging_offset(action_space, forging, delta)
        self.name = name
        self.possible_actions = available_actions(actor)

    def action_indices(self, obs: np.ndarray) -> np.ndarray:
        return np.argmax(self.actor(normalize_obs(obs)) + self.offset, axis=1)

    def decide_batch(self, obs: np.ndarray, patients, day: int):
        idx = self.action_indices(obs)
        pct = self.action_space.values[idx]
        return next_dose(obs[:, 2], pct), np.full(len(idx), np.nan), pct, idx

    def decide(self, obs, patient, day):
        from .protocols import DoseDecision
        dose, _, pct, _ = self.decide_batch(obs.as_array()[None, :], [patient], day)
        return DoseDecision(dose=float(dose[0]), duration=self.action_space.duration,
                            percent_change=float(pct[0]))


def available_actions(actor: DenseNet, eps: float = ELIMINATION_EPS) -> int:
    return int(np.sum(output_norms(actor) >= eps))


@dataclass(frozen=True)
class ActionCounts:
    available: int
    used: int
    pct_no_change: float


def count_actions(actor: DenseNet, trajectories: Sequence, action_space: ActionSpace = ActionSpace(),
                  eps: float = ELIMINATION_EPS) -> ActionCounts:
    idx = [rec.action_index for t in trajectories for rec in t.records if rec.action_index >= 0]
    if not idx:
        return ActionCounts(available_actions(actor, eps), 0, 0.0)
    idx = np.array(idx)
    return ActionCounts(available=available_actions(actor, eps), used=len(np.unique(idx)),
                        pct_no_change=float(np.mean(idx == action_space.no_change_index)))


# ---- training loop -------------------------------------------------------------

@dataclass
class TrainingResult:
    actor: DenseNet
    critic: DenseNet
    delta: float
    best_pttr: float
    log: list


def default_patient_factory(seed: int, cfg: PpoConfig) -> Callable[[int], list]:
    def factory(pass_index: int) -> list:
        n = cfg.patients_per_pass
        return generate_cohort(CohortConfig(size=n, seed=seed, rebalance_cyp2c9=cfg.rebalance,
                                            min_variant_prob=cfg.min_variant_prob,
                                            id_offset=TRAINING_ID_OFFSET + pass_index * n))
    return factory


def collect_rollout(actor: DenseNet, critic: DenseNet, patients: list, env_cfg: EnvConfig,
                    reward_cfg: RewardConfig, action_space: ActionSpace, offset: np.ndarray,
                    rng: np.random.Generator, engine_factory=None):
    env = DosingEnv(patients, env_cfg, reward_cfg, action_space, engine_factory=engine_factory)
    obs = env.reset()
    done = False
    o_l, a_l, lg_l, lp_l, r_l, v_l = [], [], [], [], [], []
    while not done:
        x = normalize_obs(obs)
        logits = actor(x) + offset
        p = softmax(logits)
        u = rng.random(len(p))
        a = np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), len(action_space) - 1)
        o_l.append(x)
        a_l.append(a)
        lg_l.append(logits)
        lp_l.append(log_softmax(logits)[np.arange(len(a)), a])
        v_l.append(critic(x)[:, 0])
        obs, rew, done = env.step(a)
        r_l.append(rew)
    # flatten patient-major so each patient's decisions are contiguous
    stack = lambda xs: np.stack(xs, axis=1)
    n, t = len(patients), len(a_l)
    buffer = RolloutBuffer(obs=stack(o_l).reshape(n * t, -1), actions=stack(a_l).reshape(-1),
                           logits=stack(lg_l).reshape(n * t, -1), logp=stack(lp_l).reshape(-1),
                           rewards=stack(r_l), values=stack(v_l))
    return buffer, env.trajectories()


def _write_log_row(path, row: dict, header: bool) -> None:
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        if header:
            w.writeheader()
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def train(cfg: PpoConfig = PpoConfig(), forging: ForgingConfig = ForgingConfig(),
          env_cfg: EnvConfig = EnvConfig(), reward_cfg: RewardConfig = RewardConfig(),
          action_space: ActionSpace = ActionSpace(), seed: int = 0,
          patient_factory: Callable[[int], list] | None = None,
          validation_patients: list | None = None, engine_factory=None,
          log_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
          resume: str | Path | None = None, metadata: dict | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainingResult:
    """Train until ``patience`` post-warmup passes bring no validation PTTR gain.

    Validation PTTR is measured with the deterministic policy on a fixed
    natural-distribution cohort; with ``validation_patients=0`` in ``cfg``
    the training rollouts' PTTR is used instead.
    """
    patient_factory = patient_factory or default_patient_factory(seed, cfg)
    if validation_patients is None and cfg.validation_patients:
        validation_patients = generate_cohort(CohortConfig(size=cfg.validation_patients, seed=seed,
                                                           id_offset=VALIDATION_ID_OFFSET))

    net_rng = substream(seed, "training")
    actor = DenseNet.build(4, len(action_space), cfg.hidden, net_rng)
    critic = DenseNet.build(4, 1, cfg.hidden, net_rng)
    start_pass, best, best_state, since_best = 0, -np.inf, None, 0
    actor_steps = critic_steps = 0
    if resume is not None:
        nets, meta = load_networks(resume)
        actor, critic = nets["actor"], nets["critic"]
        start_pass = int(meta["pass"]) + 1
        actor_steps, critic_steps = int(meta["actor_steps"]), int(meta["critic_steps"])
        best, since_best = float(meta["best_pttr"]), int(meta["since_best"])
        best_state = (nets.get("best_actor", actor).copy(), nets.get("best_critic", critic).copy(),
                      float(meta["best_delta"]))
    actor_opt = Adam(actor.parameters())
    critic_opt = Adam(critic.parameters())
    actor_opt.step_count, critic_opt.step_count = actor_steps, critic_steps
    actor_sched = LrSchedule(cfg.actor_lr, cfg.lr_decay, cfg.lr_step)
    critic_sched = LrSchedule(cfg.critic_lr, cfg.lr_decay, cfg.lr_step)

    if log_path is not None and resume is None:
        Path(log_path).unlink(missing_ok=True)
    log = []
    for pass_index in range(start_pass, cfg.max_passes):
        delta = float(pass_index)
        offset = forging_offset(action_space, forging, delta)
        patients = patient_factory(pass_index)
        buffer, trajs = collect_rollout(actor, critic, patients, env_cfg,
                                        reward_cfg, action_space, offset,
                                        substream(seed, "policy", pass_index), engine_factory)
        buffer.finish(cfg.gamma, cfg.gae_lambda)
        a_lr = actor_sched.lr_at(actor_opt.step_count)
        iters, kl, _ = actor_update(actor, buffer, cfg, forging, actor_opt, actor_sched.lr_at, offset)
        c_lr = critic_sched.lr_at(critic_opt.step_count)
        losses = critic_update(critic, buffer.obs, buffer.returns, cfg, critic_opt, critic_sched.lr_at)

        train_pttr = float(np.mean([pttr(t) for t in trajs]))
        policy = ActorPolicy(actor, action_space, forging, delta)
        if validation_patients:
            val_trajs = run_policy(policy, validation_patients, env_cfg, reward_cfg, engine_factory=engine_factory)
            val_pttr = float(np.mean([pttr(t) for t in val_trajs]))
            used = count_actions(actor, val_trajs, action_space).used
        else:
            val_pttr, used = train_pttr, len(np.unique(buffer.actions))
        row = {"pass": pass_index, "patients": (pass_index + 1) * cfg.patients_per_pass,
               "mean_reward": float(buffer.rewards.sum(axis=1).mean()), "train_pttr": train_pttr,
               "val_pttr": val_pttr, "kl": kl, "actor_iters": iters, "actor_lr": a_lr, "critic_lr": c_lr,
               "critic_loss": losses[-1] if losses else float("nan"), "regularizer": action_regularizer(actor),
               "available": available_actions(actor), "used": used,
               "h": float(schedule_h(delta, forging.c1, forging.c2)) if forging.wavelet_enabled else 0.0}
        log.append(row)
        if log_path is not None:
            _write_log_row(log_path, row, header=not Path(log_path).exists())
        if progress is not None:
            progress(row)

        if val_pttr > best:
            best, best_state = val_pttr, (actor.copy(), critic.copy(), delta)
            if pass_index >= cfg.warmup_passes:
                since_best = 0
        elif pass_index >= cfg.warmup_passes:
            since_best += 1
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, actor, critic, best_state, {
                **(metadata or {}), "pass": pass_index, "actor_steps": actor_opt.step_count,
                "critic_steps": critic_opt.step_count, "best_pttr": best, "since_best": since_best,
                "forging": asdict(forging)})
        if since_best >= cfg.patience:
            break

    if best_state is None:
        best_state = (actor.copy(), critic.copy(), float(start_pass))
    return TrainingResult(actor=best_state[0], critic=best_state[1], delta=best_state[2], best_pttr=best, log=log)


def save_checkpoint(path, actor: DenseNet, critic: DenseNet, best_state, metadata: dict) -> None:
    nets = {"actor": actor, "critic": critic}
    meta = dict(metadata)
    if best_state is not None:
        nets["best_actor"], nets["best_critic"] = best_state[0], best_state[1]
        meta["best_delta"] = best_state[2]
    meta["obs_scale"] = OBS_SCALE.tolist()
    save_networks(path, nets, meta)


def load_policy(path, action_space: ActionSpace = ActionSpace(), name: str = "rl") -> ActorPolicy:
    """Deterministic policy from the best actor stored in a checkpoint."""
    nets, meta = load_networks(path)
    actor = nets.get("best_actor", nets["actor"])
    forging = ForgingConfig(**meta.get("forging", {}))
    return ActorPolicy(actor, action_space, forging, float(meta.get("best_delta", meta.get("pass", 0))), name)
