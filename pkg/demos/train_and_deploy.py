"""
Train a charging controller, then drive a fleet with it
=======================================================

The full loop: the trainer package (fleetrl, in harness/) optimizes the
charging controller against a simulator server it spawns itself, writes
a portable weight file, and the simulator CLI then runs a fleet under
those weights. The two packages only share the wire protocol and the
weight-file format.
"""

import json
import subprocess
import sys

try:
    from fleetrl.ppo import TrainSpec, train
except ImportError:
    sys.exit("fleetrl is not installed; run `pip install -e harness/` first")

CONFIG = """\
version: 1
sim:
  seed: 5
  horizon_ticks: 168
fleet:
  count: 3
  pack_kwh: 30.0
  kwh_per_km: 0.15
  depot_zones: [1, 2]
stations:
  - {zone: 1, ports: 2, port_kw: 50.0, station_kw: 120.0}
  - {zone: 2, ports: 2, port_kw: 50.0, station_kw: 120.0}
battery:
  reference_cycles: 1.0e+9
  stages:
    - {index: 1, soh_low: 0.0, soh_high: 1.0, alpha: 1.0e+9, beta: 1.0e+9, psi: 0.0}
demand:
  kind: poisson
  poisson: {rate_per_hour: 4.0, zones: [1, 2]}
"""

with open("train_demo_config.yaml", "w") as fh:
    fh.write(CONFIG)

# a short run for demonstration; the defaults train for 10_000 steps
spec = TrainSpec(
    endpoint="serve:train_demo_config.yaml",
    total_steps=2_000,
    episode_length=168,
    degradation_weight=100.0,  # passed through into the spawned server
    out_path="trained_controller.json",
    seed=1,
)
weights = train(spec)
print("weights written to", weights)

# every training event is one JSON line; show the last few episode returns
episodes = [json.loads(line) for line in open(weights + ".log")
            if '"event":"episode"' in line]
print("training episodes:", len(episodes),
      "last returns:", [round(e["return"], 1) for e in episodes[-3:]])

# hand the weight file to the simulator CLI
result = subprocess.run(
    ["evfleet", "run", "--config", "train_demo_config.yaml",
     "--policy", "neural", "--weights", weights, "--out", "out_trained_run"],
    capture_output=True, text=True, check=True,
)
summary = json.loads(result.stdout)
print("deployed run:", summary["completions"], "rides,",
      round(summary["revenue"], 2), "revenue")
