"""The charging controller network and its on-disk weight formats.

The controller maps an interleaved observation vector, one (health
fraction, stored-energy fraction) pair per vehicle, through two tanh
hidden layers of 64 units to a sigmoid output pair per vehicle: a charge
decision and a rate fraction, both in (0, 1). Everything runs in float64
so exported weights reproduce the simulator's inference bit-for-bit.

Two serializations exist and loaders tell them apart by the leading
bytes: a binary layout under the magic ``EVPW`` and a JSON twin. The
JSON flavor carries a ``transforms`` list naming any observation or
reward transform applied during training (empty means raw protocol
values went straight into the network).
"""

from __future__ import annotations

import json
import struct
from typing import Sequence

import torch
from torch import nn

WEIGHTS_MAGIC = b"EVPW"
WEIGHTS_VERSION = 1
HIDDEN = (64, 64)


class PolicyMeanNet(nn.Module):
    """Deterministic controller: 2n inputs -> 64 -> 64 -> 2n outputs."""

    def __init__(self, n_vehicles: int, hidden: Sequence[int] = HIDDEN):
        super().__init__()
        if n_vehicles <= 0:
            raise ValueError("n_vehicles must be positive")
        self.n_vehicles = n_vehicles
        sizes = [2 * n_vehicles, *hidden, 2 * n_vehicles]
        self.linears = nn.ModuleList(
            nn.Linear(n_in, n_out, dtype=torch.float64)
            for n_in, n_out in zip(sizes, sizes[1:])
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for linear in self.linears[:-1]:
            x = torch.tanh(linear(x))
        return torch.sigmoid(self.linears[-1](x))


def _layer_activations(net: PolicyMeanNet) -> list[str]:
    return ["tanh"] * (len(net.linears) - 1) + ["sigmoid"]


def export_weights(
    net: PolicyMeanNet, path: str, transforms: Sequence[str] = ()
) -> None:
    """Write the JSON weight file, recording applied transforms."""
    layers = []
    for linear, activation in zip(net.linears, _layer_activations(net)):
        layers.append(
            {
                "activation": activation,
                "weights": linear.weight.detach().to(torch.float64).tolist(),
                "bias": linear.bias.detach().to(torch.float64).tolist(),
            }
        )
    doc = {
        "format": "evpw",
        "version": WEIGHTS_VERSION,
        "n_vehicles": net.n_vehicles,
        "layers": layers,
        "transforms": list(transforms),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_weights_json(path: str) -> PolicyMeanNet:
    """Rebuild a controller from the JSON weight file."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "evpw" or doc.get("version") != WEIGHTS_VERSION:
        raise ValueError(f"{path!r} is not a supported weight file")
    layers = doc["layers"]
    net = PolicyMeanNet(
        doc["n_vehicles"], hidden=tuple(len(layer["bias"]) for layer in layers[:-1])
    )
    with torch.no_grad():
        for linear, layer in zip(net.linears, layers):
            linear.weight.copy_(torch.tensor(layer["weights"], dtype=torch.float64))
            linear.bias.copy_(torch.tensor(layer["bias"], dtype=torch.float64))
    return net


def export_weights_binary(net: PolicyMeanNet, path: str) -> None:
    """Write the compact binary weight file (no metadata header)."""
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(
            struct.pack("<III", WEIGHTS_VERSION, net.n_vehicles, len(net.linears))
        )
        for linear, activation in zip(net.linears, _layer_activations(net)):
            w = linear.weight.detach().to(torch.float64).numpy()
            b = linear.bias.detach().to(torch.float64).numpy()
            name = activation.encode()
            fh.write(struct.pack("<III", w.shape[0], w.shape[1], len(name)))
            fh.write(name)
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())
