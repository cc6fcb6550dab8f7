"""Parameter and FLOPs accounting for the default network, with a per-component breakdown."""
from collections import defaultdict

from lightunetr import ModelConfig, build_model, cost_report

model = build_model(ModelConfig(), seed=0)

for shape in [(112, 112, 80), (96, 96, 96)]:
    report = cost_report(model, shape)
    print(report.summary("mac2"))
    print(report.summary("mac1"))

# where the compute goes, grouped by top-level component
report = cost_report(model, (112, 112, 80))
by_part = defaultdict(int)
for row in report.rows:
    by_part[row.name.split(".")[0]] += row.flops("mac2")
total = report.total_flops("mac2")
for part, flops in sorted(by_part.items(), key=lambda kv: -kv[1]):
    print(f"{part:12s} {flops / 1e9:7.3f}G  {100 * flops / total:5.1f}%")
