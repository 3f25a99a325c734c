"""Wall time on the 123-bus feeder and the effect of a 30 % higher cable
resistance on the three-phase LV feeder."""

import numpy as np

from dsse.harness.scenario import ScenarioConfig, bench, run_scenario

print("median wall time per estimate (11 calls)")
for r in bench(("six_bus", "ieee123")):
    print(f"  {r['network']:<8} {r['mode']:<4} {r['n_states']:>4} states "
          f"{1e3 * r['median_s']:8.2f} ms  {r['iterations']} iteration(s)")

print("\nLV feeder, CST AMVE % by step (mean of 10 seeds)")
for rx in (1.0, 1.3):
    amve = np.mean([[run_scenario(ScenarioConfig(network="lv23", seed=s, rx_scale=rx, modes=("cst",),
                                                 timing_repeats=1)).value("cst", k, "amve_pct")
                     for k in range(3)] for s in range(10)], axis=0)
    print(f"  R x {rx:.1f}: " + "  ".join(f"{a:.3f}" for a in amve))
