"""Six-bus case study: one meter on area 1, then a second meter on an
industrial area (bus 3). Loading 80/60/40 % over three steps."""

import numpy as np

from dsse.harness.scenario import ScenarioConfig, run_scenario

SEEDS = range(20)


def mean_table(reps, modes):
    cols = ("amve_pct", "aave_deg", "quality", "time_s")
    print(f"{'mode':<5}{'load':>6}{'AMVE %':>9}{'AAVE deg':>10}{'quality':>9}{'time ms':>9}")
    for mode in modes:
        for s, load in enumerate((0.8, 0.6, 0.4)):
            v = np.mean([[r.value(mode, s, c) for c in cols] for r in reps], axis=0)
            print(f"{mode:<5}{load:>6.0%}{v[0]:>9.3f}{v[1]:>10.4f}{v[2]:>9.2f}{1e3 * v[3]:>9.2f}")


one = [run_scenario(ScenarioConfig(seed=s, timing_repeats=3)) for s in SEEDS]
print(f"one meter (bus 1), mean over {len(SEEDS)} seeds")
mean_table(one, ("wls", "cs", "cst"))

two = [run_scenario(ScenarioConfig(seed=s, meters=("1", "3"), modes=("cs", "cst"), timing_repeats=3))
       for s in SEEDS]
print("\nsecond meter on bus 3 (industrial)")
mean_table(two, ("cs", "cst"))

# one seed in full, as written by the harness
print("\nseed 0, one meter")
print(one[0].table())
