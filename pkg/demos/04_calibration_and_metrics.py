"""Fit gate thresholds on one synthetic suite and score another."""
from vlmguard import compute_error_map, compute_metrics
from vlmguard.harness.evaluation import LabeledMetrics, calibrate, evaluate, records_from_metrics
from vlmguard.harness.fixtures import make_suite


def labelled(suite):
    return [LabeledMetrics(f.id, f.truth, compute_metrics(compute_error_map(f.image))) for f in suite]


fit = labelled(make_suite(20, 20, 20, seed=1))
test = labelled(make_suite(30, 30, 30, seed=2))

th = calibrate(fit)
print(f"t_s={th.t_s:.3g} t_cc1={th.t_cc1:.3g} t_cc2={th.t_cc2:.3g}")
report = evaluate(records_from_metrics(test, th))
print("\n".join(report.summary_lines()))
