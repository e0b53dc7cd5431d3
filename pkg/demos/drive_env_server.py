"""
Driving the environment server over the wire
============================================

Starts the line-delimited JSON environment server as a subprocess and
plays two short episodes against it with a fixed action: every vehicle
requests charging at half rate. Each request is one JSON line; each
reply is one JSON line. This is the full integration surface a trainer
needs, no imports from the simulator required.
"""

import json
import subprocess
import sys

CONFIG = """\
version: 1
sim:
  seed: 3
  horizon_ticks: 168
fleet:
  count: 3
  pack_kwh: 60.0
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

with open("env_demo_config.yaml", "w") as fh:
    fh.write(CONFIG)

proc = subprocess.Popen(
    [sys.executable, "-m", "evfleetsim.cli", "serve",
     "--config", "env_demo_config.yaml"],
    stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
)

def send(msg):
    proc.stdin.write(json.dumps(msg) + "\n")
    proc.stdin.flush()
    return json.loads(proc.stdout.readline())

print("server says:", proc.stdout.readline().strip())

for episode in range(2):
    obs = send({"kind": "reset", "seed": 100 + episode, "episode_length": 24})
    ret = 0.0
    while not obs["done"]:
        obs = send({"kind": "step",
                    "decisions": [True, True, True],
                    "rates": [0.5, 0.5, 0.5]})
        ret += obs["reward"]
    print(f"episode {episode}: return {ret:.3f}, "
          f"final median soh {sorted(obs['soh'])[1]:.6f}")

send({"kind": "close"})
proc.wait(timeout=10)
print("server exited with", proc.returncode)
