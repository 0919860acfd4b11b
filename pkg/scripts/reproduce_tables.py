#!/usr/bin/env python3
"""Check the report arithmetic against the reference result tables.

Feeds the published per-fold AUROC values through fold aggregation and the
preliminary-test sensitivity/specificity pairs through balanced accuracy,
then runs submission selection over the four candidate rows.
"""
from atypia.experiment import compare_fold_values, render_comparison, render_report
from atypia.metrics import (
    MetricsReport,
    aggregate_folds,
    balanced_accuracy,
    format_fraction,
    select_submission,
)

CV_ROWS = [
    ("convnext real", [93.84, 94.74, 93.63, 95.68, 95.21]),
    ("convnext real+synth", [93.55, 94.40, 93.74, 95.22, 94.96]),
    ("lunit real", [94.22, 94.97, 94.13, 95.25, 95.31]),
    ("lunit real+synth", [93.83, 94.49, 93.96, 95.08, 94.78]),
]

PRELIM_ROWS = [
    ("convnext real", 95.42, 88.61, 88.73, 88.58),
    ("convnext real+synth", 94.99, 88.89, 87.32, 89.27),
    ("lunit real", 93.81, 86.39, 85.92, 86.51),
    ("lunit real+synth", 94.01, 88.33, 88.73, 88.23),
]


def main() -> None:
    print("Cross-validation AUROC (%), five folds:")
    print(render_report([(name, aggregate_folds(values)) for name, values in CV_ROWS]))

    print("Regime deltas (real minus real+synth):")
    for backbone in ("convnext", "lunit"):
        real = next(v for n, v in CV_ROWS if n == f"{backbone} real")
        synth = next(v for n, v in CV_ROWS if n == f"{backbone} real+synth")
        print(f"-- {backbone} --")
        print(render_comparison(compare_fold_values(real, synth, "real", "real+synth")))

    print("Preliminary-test balanced accuracy (%):")
    candidates = []
    for name, area, acc, sens, spec in PRELIM_ROWS:
        ba = balanced_accuracy(sens / 100, spec / 100)
        print(f"  {name:22s} sens {sens:6.2f}  spec {spec:6.2f}  -> BA {format_fraction(ba)}")
        candidates.append(
            (
                name,
                MetricsReport(
                    auroc=area,
                    accuracy=acc,
                    sensitivity=sens,
                    specificity=spec,
                    balanced_accuracy=balanced_accuracy(sens, spec),
                    threshold=0.5,
                ),
            )
        )
    print(f"\nsubmission pick (highest AUROC): {select_submission(candidates)}")


if __name__ == "__main__":
    main()
