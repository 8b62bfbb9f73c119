"""
Measured runs against the predicted ceiling
===========================================

Every bundled measurement should sit at or below the grid-search MFU for
its model, cluster, GPU count and context length.
"""

import collections

import numpy as np

from fsdp_plan import load_measurements, validate_against_measurements

records = load_measurements()
print(f"{len(records)} records, {sum(r.oom for r in records)} out-of-memory")

report = validate_against_measurements(records)
print(f"checked {len(report.checked)}, flagged {len(report.flagged)}")

# How close do real runs get to the model? Group the measured/predicted
# ratios by experiment family.
ratios = collections.defaultdict(list)
for row in report.checked:
    ratios[row.record.source].append(row.ratio)
for source, values in ratios.items():
    v = np.array(values)
    print(f"{source:<20} n={len(v):>3}  ratio median {np.median(v):.2f}  max {v.max():.2f}")

# The two reference runs.
for row in report.checked:
    r = row.record
    if (r.model_name, r.num_gpus, r.context_length) in {("13B", 8, 10240), ("1.3B", 4, 55936)}:
        print(f"{r.model_name} {r.cluster_name} N={r.num_gpus} ctx={r.context_length}: "
              f"measured {r.mfu:.2f}, predicted {row.predicted_mfu:.3f}")

# Emptying the CUDA cache costs a few points of MFU in the ablations.
abl = [row for row in report.checked if row.record.source == "ablation-13b-8gpu"]
for flag in (True, False):
    v = [row.record.mfu for row in abl if row.record.empty_cache is flag]
    if v:
        print(f"empty_cache={flag}: mean measured MFU {np.mean(v):.3f} over {len(v)} runs")
