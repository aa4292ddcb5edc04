"""A small Monte Carlo study comparing the five estimators.

Twenty replicates of the homogeneous design (true effect 1 at every level)
take about ten seconds. Scale ``replications`` to 500 for the full study;
the acceptance suite runs exactly that.

Run: python demos/simulation_study.py
"""

import warnings

from wqte.simulation import SimScenario, oracle_qte, run_experiment

scenario = SimScenario.homogeneous(replications=20, B=100)
oracle = oracle_qte(scenario, M=1_000_000, seed=scenario.seed)

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    report = run_experiment(scenario, oracle=oracle, progress=lambda k, m: print(f"\r{k}/{m}", end=""))
print()

out = report.to_dict()
print(f"missing {out['missing_rate']:.1%}, follow-up share {out['double_sampled_fraction_of_missing']:.1%}")
print("relative bias in percent by tau level")
for name, stats in out["estimators"].items():
    print(f"  {name:18s}", " ".join(f"{b:6.1f}" for b in stats["relative_bias_x100"]))
for name, inf in out["inference"].items():
    print(f"{name}: asymptotic coverage", [round(c, 2) for c in inf["asymptotic_coverage"]])
    print(f"{' ' * len(name)}  band coverage {inf['uniform_band_coverage']:.2f}")
