"""Proximal policy optimization for the charging controller.

The trainer drives one environment connection, collects fixed-size
rollouts of (observation, action, reward) transitions across episode
boundaries, and updates the controller with the clipped PPO objective.
Actions are 2n numbers in [0, 1]: the controller output is the mean of
a diagonal Gaussian whose log standard deviation is a free trained
parameter, samples are clamped to the valid range before stepping, and
evaluation uses the bare controller mean. Only the controller itself is
exported; the value head and the exploration noise stay local.

No observation scaling and no reward normalization are applied: raw
protocol values feed the network, and the exported weight file records
an empty transform list. Hyperparameters live in HYPERPARAMETERS and
are written to the run log at startup.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import Optional, TextIO

import json
import torch
import yaml
from torch import nn
from torch.distributions import Normal

from .client import EnvClient, TransportError
from .net import HIDDEN, PolicyMeanNet, export_weights

HYPERPARAMETERS = {
    "rollout_steps": 2048,
    "minibatch_size": 64,
    "epochs": 10,
    "discount": 0.99,
    "gae_lambda": 0.95,
    "clip_ratio": 0.2,
    "learning_rate": 3e-4,
    "value_coef": 0.5,
    "entropy_coef": 0.0,
    "max_grad_norm": 0.5,
    "log_std_init": -1.0,
    "advantage_normalization": True,
    "torch_threads": 1,
}


@dataclass
class TrainSpec:
    """Everything one training run needs.

    ``endpoint`` is either ``serve:<config path>`` (spawn a local server)
    or ``tcp:[host:]port`` (attach to a running one). The reward weights
    are passed through into a spawned server's config; against a remote
    endpoint they are recorded in the run log only, since the server owns
    its reward.
    """

    endpoint: str
    total_steps: int = 10_000
    episode_length: int = 168
    degradation_weight: Optional[float] = None  # per-kWh capacity penalty
    overpower_weight: Optional[float] = None  # per-kW over-threshold penalty
    out_path: str = "policy_weights.json"
    log_path: Optional[str] = None  # default: out_path + ".log"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if self.episode_length <= 0:
            raise ValueError("episode_length must be positive")


class ValueNet(nn.Module):
    """State-value head used only during training, never exported."""

    def __init__(self, n_vehicles: int, hidden=HIDDEN):
        super().__init__()
        sizes = [2 * n_vehicles, *hidden, 1]
        self.linears = nn.ModuleList(
            nn.Linear(n_in, n_out, dtype=torch.float64)
            for n_in, n_out in zip(sizes, sizes[1:])
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for linear in self.linears[:-1]:
            x = torch.tanh(linear(x))
        return self.linears[-1](x).squeeze(-1)


def observation_tensor(reply: dict) -> torch.Tensor:
    """Interleave the reply's health and stored-energy fractions."""
    soh = reply["soh"]
    soc = reply["soc"]
    obs = torch.empty(2 * len(soh), dtype=torch.float64)
    obs[0::2] = torch.tensor(soh, dtype=torch.float64)
    obs[1::2] = torch.tensor(soc, dtype=torch.float64)
    return obs


def _episode_seed(seed: int, episode: int) -> int:
    return (seed * 1_000_003 + episode) & ((1 << 62) - 1)


def _log_line(log: TextIO, doc: dict) -> None:
    log.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    log.flush()


def _resolve_endpoint(spec: TrainSpec) -> tuple[str, Optional[str]]:
    """Reward-weight passthrough: patch a spawned server's config."""
    wants = spec.degradation_weight is not None or spec.overpower_weight is not None
    if not wants or not spec.endpoint.startswith("serve:"):
        return spec.endpoint, None
    src = spec.endpoint[len("serve:"):]
    with open(src) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"config {src!r} is not a mapping")
    reward = doc.setdefault("reward", {})
    if spec.degradation_weight is not None:
        reward["degradation_weight"] = float(spec.degradation_weight)
    if spec.overpower_weight is not None:
        reward["overpower_weight"] = float(spec.overpower_weight)
    fd, tmp = tempfile.mkstemp(prefix="fleetrl_config_", suffix=".yaml")
    with os.fdopen(fd, "w") as fh:
        yaml.safe_dump(doc, fh)
    return "serve:" + tmp, tmp


class _Rollout:
    def __init__(self):
        self.obs: list[torch.Tensor] = []
        self.actions: list[torch.Tensor] = []
        self.logps: list[torch.Tensor] = []
        self.values: list[torch.Tensor] = []
        self.rewards: list[float] = []
        self.dones: list[bool] = []

    def __len__(self) -> int:
        return len(self.rewards)


def _gae(
    rewards: torch.Tensor,
    values: torch.Tensor,
    dones: list[bool],
    last_value: float,
    gamma: float,
    lam: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    n = len(rewards)
    advantages = torch.zeros(n, dtype=torch.float64)
    gae = 0.0
    next_value = last_value
    for t in reversed(range(n)):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = float(rewards[t]) + gamma * next_value * nonterminal - float(values[t])
        gae = delta + gamma * lam * nonterminal * gae
        advantages[t] = gae
        next_value = float(values[t])
    return advantages, advantages + values


def _update(
    policy: PolicyMeanNet,
    value: ValueNet,
    log_std: nn.Parameter,
    optimizer: torch.optim.Optimizer,
    params: list,
    buf: _Rollout,
    last_value: float,
    hp: dict,
) -> dict:
    obs = torch.stack(buf.obs)
    actions = torch.stack(buf.actions)
    old_logps = torch.stack(buf.logps)
    values = torch.stack(buf.values)
    rewards = torch.tensor(buf.rewards, dtype=torch.float64)
    advantages, returns = _gae(
        rewards, values, buf.dones, last_value, hp["discount"], hp["gae_lambda"]
    )

    n = len(buf)
    batch = hp["minibatch_size"]
    policy_losses = []
    value_losses = []
    for _ in range(hp["epochs"]):
        order = torch.randperm(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            if len(idx) < 2:
                continue  # a singleton cannot be advantage-normalized
            adv = advantages[idx]
            if hp["advantage_normalization"]:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            dist = Normal(policy(obs[idx]), log_std.exp())
            logp = dist.log_prob(actions[idx]).sum(-1)
            ratio = (logp - old_logps[idx]).exp()
            clipped = ratio.clamp(1.0 - hp["clip_ratio"], 1.0 + hp["clip_ratio"])
            policy_loss = -torch.min(ratio * adv, clipped * adv).mean()
            value_loss = ((value(obs[idx]) - returns[idx]) ** 2).mean()
            entropy = dist.entropy().sum(-1).mean()
            loss = (
                policy_loss
                + hp["value_coef"] * value_loss
                - hp["entropy_coef"] * entropy
            )
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(params, hp["max_grad_norm"])
            optimizer.step()
            policy_losses.append(policy_loss.item())
            value_losses.append(value_loss.item())
    return {
        "policy_loss": sum(policy_losses) / max(len(policy_losses), 1),
        "value_loss": sum(value_losses) / max(len(value_losses), 1),
    }


def train(spec: TrainSpec) -> str:
    """Run PPO per ``spec`` and return the exported weight file path.

    A transport failure mid-run writes the current controller to
    ``<out_path>.partial`` and re-raises.
    """
    hp = dict(HYPERPARAMETERS)
    torch.manual_seed(spec.seed)
    torch.set_num_threads(hp["torch_threads"])
    endpoint, tmp_config = _resolve_endpoint(spec)
    log_path = spec.log_path or spec.out_path + ".log"
    policy: Optional[PolicyMeanNet] = None
    client = EnvClient(endpoint)
    log = open(log_path, "w")
    try:
        try:
            _log_line(
                log,
                {
                    "event": "start",
                    "endpoint": spec.endpoint,
                    "total_steps": spec.total_steps,
                    "episode_length": spec.episode_length,
                    "seed": spec.seed,
                    "reward_weights": {
                        "degradation_weight": spec.degradation_weight,
                        "overpower_weight": spec.overpower_weight,
                    },
                    "reward_weights_applied": tmp_config is not None,
                    "hyperparameters": hp,
                    "transforms": [],
                },
            )
            episode = 0
            reply = client.reset(
                seed=_episode_seed(spec.seed, episode),
                episode_length=spec.episode_length,
            )
            n_vehicles = len(reply["soh"])
            policy = PolicyMeanNet(n_vehicles)
            value = ValueNet(n_vehicles)
            log_std = nn.Parameter(
                torch.full((2 * n_vehicles,), hp["log_std_init"], dtype=torch.float64)
            )
            params = list(policy.parameters()) + list(value.parameters()) + [log_std]
            optimizer = torch.optim.Adam(params, lr=hp["learning_rate"])

            obs = observation_tensor(reply)
            ep_return = 0.0
            ep_length = 0
            steps_done = 0
            while steps_done < spec.total_steps:
                horizon = min(hp["rollout_steps"], spec.total_steps - steps_done)
                buf = _Rollout()
                for _ in range(horizon):
                    with torch.no_grad():
                        dist = Normal(policy(obs), log_std.exp())
                        raw = dist.sample()
                        logp = dist.log_prob(raw).sum()
                        val = value(obs)
                    act = raw.clamp(0.0, 1.0)
                    reply = client.step(act[0::2].tolist(), act[1::2].tolist())
                    buf.obs.append(obs)
                    buf.actions.append(raw)
                    buf.logps.append(logp)
                    buf.values.append(val)
                    buf.rewards.append(float(reply["reward"]))
                    buf.dones.append(bool(reply["done"]))
                    ep_return += float(reply["reward"])
                    ep_length += 1
                    steps_done += 1
                    if reply["done"]:
                        _log_line(
                            log,
                            {
                                "event": "episode",
                                "index": episode,
                                "return": ep_return,
                                "length": ep_length,
                            },
                        )
                        episode += 1
                        ep_return = 0.0
                        ep_length = 0
                        reply = client.reset(
                            seed=_episode_seed(spec.seed, episode),
                            episode_length=spec.episode_length,
                        )
                    obs = observation_tensor(reply)
                with torch.no_grad():
                    last_value = 0.0 if buf.dones[-1] else float(value(obs))
                losses = _update(
                    policy, value, log_std, optimizer, params, buf, last_value, hp
                )
                _log_line(log, {"event": "update", "steps_done": steps_done, **losses})
            export_weights(policy, spec.out_path, transforms=())
            _log_line(log, {"event": "exported", "path": spec.out_path})
        except TransportError as err:
            partial_path = None
            if policy is not None:
                partial_path = spec.out_path + ".partial"
                export_weights(policy, partial_path, transforms=())
            _log_line(
                log, {"event": "aborted", "error": str(err), "partial": partial_path}
            )
            raise
    finally:
        log.close()
        client.close()
        if tmp_config is not None:
            os.unlink(tmp_config)
    return spec.out_path


def evaluate(
    client: EnvClient,
    policy: PolicyMeanNet,
    episodes: int,
    episode_length: int,
    seed_base: int = 0,
) -> list[float]:
    """Deterministic episode returns: controller mean, no noise."""
    returns = []
    for k in range(episodes):
        reply = client.reset(seed=seed_base + k, episode_length=episode_length)
        total = 0.0
        while not reply["done"]:
            with torch.no_grad():
                act = policy(observation_tensor(reply))
            reply = client.step(act[0::2].tolist(), act[1::2].tolist())
            total += float(reply["reward"])
        returns.append(total)
    return returns


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fleetrl-train",
        description="Train the fleet charging controller with PPO.",
    )
    parser.add_argument("--endpoint", required=True,
                        help="serve:<config path> or tcp:[host:]port")
    parser.add_argument("--steps", type=int, default=10_000)
    parser.add_argument("--episode-length", type=int, default=168)
    parser.add_argument("--degradation-weight", type=float, default=None)
    parser.add_argument("--overpower-weight", type=float, default=None)
    parser.add_argument("--out", default="policy_weights.json")
    parser.add_argument("--log", default=None)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    spec = TrainSpec(
        endpoint=args.endpoint,
        total_steps=args.steps,
        episode_length=args.episode_length,
        degradation_weight=args.degradation_weight,
        overpower_weight=args.overpower_weight,
        out_path=args.out,
        log_path=args.log,
        seed=args.seed,
    )
    try:
        path = train(spec)
    except TransportError as err:
        sys.stderr.write(f"fleetrl-train: transport failure: {err}\n")
        return 1
    sys.stdout.write(path + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
