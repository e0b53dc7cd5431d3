import pytest

# 3 taxis, small packs so charging genuinely matters inside an episode,
# and a wear law gentle enough that fleets survive training horizons
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


@pytest.fixture(scope="session")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("world") / "world.yaml"
    path.write_text(CONFIG)
    return str(path)
