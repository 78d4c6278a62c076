"""The policy, encoder, value and adaptation networks plus checkpoint I/O.

Checkpoints are ``.npz`` archives. Besides one array per parameter (keyed
``<net>/<index>``) they hold ``__format__`` (``"quadadapt-nn"``),
``__version__`` (integer) and ``__meta__`` (a JSON string with the
architecture and any normalization constants), so a file can be checked and
rebuilt without outside knowledge.
"""
from __future__ import annotations

import json

import numpy as np

from ..vehicle import ENV_DIM
from .layers import Conv1dStack, Mlp, Sequential

FORMAT = "quadadapt-nn"
VERSION = 1

STATE_DIM = 8
ACTION_DIM = 4
LATENT_DIM = 8
HISTORY = 100


class PolicyNets:
    """Base policy pi(x, z), encoder mu(e), value V(x, z), adaptation phi(history)."""

    def __init__(self, seed: int = 0, latent: int = LATENT_DIM, policy_hidden=(256, 256), encoder_hidden=(128,), history: int = HISTORY, env_dim: int = ENV_DIM, policy_input: int = STATE_DIM):
        rng = np.random.default_rng(seed)
        self.arch = {
            "latent": latent,
            "policy_hidden": list(policy_hidden),
            "encoder_hidden": list(encoder_hidden),
            "history": history,
            "env_dim": env_dim,
            "policy_input": policy_input,
        }
        n_in = policy_input + latent
        self.policy = Mlp([n_in, *policy_hidden, ACTION_DIM], "tanh", rng=rng, final_scale=0.01)
        self.encoder = Mlp([env_dim, *encoder_hidden, latent], "tanh", rng=rng)
        self.value = Mlp([n_in, *policy_hidden, 1], "tanh", rng=rng)
        self.adaptation = Conv1dStack(policy_input + ACTION_DIM, history, latent, rng=rng)
        self.log_std = np.full(ACTION_DIM, -1.0)

    def nets(self) -> dict:
        return {"policy": self.policy, "encoder": self.encoder, "value": self.value, "adaptation": self.adaptation}

    def save(self, path, meta: dict | None = None):
        arrays = {}
        for name, net in self.nets().items():
            for i, p in enumerate(net.params):
                arrays[f"{name}/{i}"] = p
        arrays["log_std"] = self.log_std
        info = {"arch": self.arch, **(meta or {})}
        np.savez(
            path,
            __format__=np.array(FORMAT),
            __version__=np.array(VERSION),
            __meta__=np.array(json.dumps(info, sort_keys=True)),
            **arrays,
        )

    @classmethod
    def load(cls, path):
        """Returns ``(nets, meta)``; raises ``ValueError`` on a foreign file."""
        with np.load(path, allow_pickle=False) as data:
            if "__format__" not in data or str(data["__format__"]) != FORMAT:
                raise ValueError(f"{path} is not a {FORMAT} checkpoint")
            if int(data["__version__"]) != VERSION:
                raise ValueError(f"unsupported checkpoint version {int(data['__version__'])}")
            meta = json.loads(str(data["__meta__"]))
            arch = meta["arch"]
            out = cls(
                latent=arch["latent"],
                policy_hidden=arch["policy_hidden"],
                encoder_hidden=arch["encoder_hidden"],
                history=arch["history"],
                env_dim=arch["env_dim"],
                policy_input=arch["policy_input"],
            )
            for name, net in out.nets().items():
                for i, p in enumerate(net.params):
                    p[...] = data[f"{name}/{i}"]
            out.log_std[...] = data["log_std"]
        return out, meta


def copy_params(src: Sequential, dst: Sequential):
    for a, b in zip(src.params, dst.params):
        b[...] = a
