#!/usr/bin/env python3
"""Model selection: the CECE winner can disagree with the ECE winner.

A unified calibrator often posts the best global ECE while leaving whole
subpopulations miscalibrated. Selecting by cluster-binned error picks the
variant that is also stronger on discrimination (AUC).
"""

from clustercal.harness import ExperimentConfig, run_experiment, select_model


def main():
    cfg = ExperimentConfig.from_dict({
        "data": {"synthetic": {
            "n_subpops": 3, "samples_per_subpop": 700, "d": 2,
            "base_rates": [0.3, 0.5, 0.7], "miscal_offsets": [2.0, -2.0, 1.0],
            "noise": 0.7, "seed": 7}},
        "model": {"synthetic_scores": {}},
        "embedding": {"kind": "raw"},
        "clustering": {"method": "kmeans", "k": 3},
        "methods": ["platt", "temperature", "beta"],
        "seed": 7,
    })
    report = run_experiment(cfg)

    print(f"{'variant':<22}{'CECE':>8}{'ECE':>8}{'AUC':>8}")
    for row in report.rows:
        print(f"{row['variant']:<22}{row['CECE']:>8.4f}"
              f"{row['ECE']:>8.4f}{row['AUC']:>8.4f}")

    sel = select_model(report, "CECE")
    print(f"\nselected by CECE: {sel['selected']}")
    print(f"selected by ECE:  {sel['ece_selected']}")
    if sel["ece_disagrees"]:
        print("the two criteria disagree; CECE favors the per-cluster fit")
    if sel["auc_ordering_violations"]:
        print("AUC-ordering violations:", sel["auc_ordering_violations"])


if __name__ == "__main__":
    main()
