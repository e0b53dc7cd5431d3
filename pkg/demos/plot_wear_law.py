"""
How a pack ages: stress factors by state of charge and rate
===========================================================

Evaluates the per-tick capacity-loss law across state of charge and
charge rate for each aging stage, and plots the two stress curves.
The state-of-charge term explodes as the pack approaches full, which
is why charging policies that park fleets at 100% destroy them.
"""

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from evfleetsim.battery import (
    BatteryState, DEFAULT_STAGES, RateSignal, capacity_loss_step, stage_for_soh,
)

# the three stages and their fitted constants
for stage in DEFAULT_STAGES:
    print(f"stage {stage.index}: soh ({stage.soh_low:.3f}, {stage.soh_high:.3f}] "
          f"alpha={stage.alpha} beta={stage.beta} psi={stage.psi}")

# which stage handles a given health level; boundaries go to the worse stage
for soh in (1.0, 0.95, 0.933, 0.90, 0.866, 0.50):
    print(f"soh {soh:.3f} -> stage {stage_for_soh(soh).index}")

cap = 71.7
socs = np.linspace(0.0, 0.999, 400)
loss_by_soc = []
for frac in socs:
    state = BatteryState(frac * cap, cap, cap, 298.15)
    loss_by_soc.append(capacity_loss_step(state, RateSignal(0.5, 1.0)))

rates = np.linspace(0.01, 2.0, 400)
state_half = BatteryState(0.5 * cap, cap, cap, 298.15)
loss_by_rate = [capacity_loss_step(state_half, RateSignal(r, 1.0)) for r in rates]

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
ax1.semilogy(socs, loss_by_soc)
ax1.set_xlabel("state of charge (fraction)")
ax1.set_ylabel("capacity loss per tick (kWh)")
ax1.set_title("loss vs state of charge, C = 0.5")
ax2.plot(rates, loss_by_rate)
ax2.set_xlabel("charge rate (capacity multiples per hour)")
ax2.set_title("loss vs rate, 50% state of charge")
fig.tight_layout()
fig.savefig("wear_law.png", dpi=120)
print("figure written to wear_law.png")
