"""Static complexity profile of the student model.

Walks the layer graph once, counting exact parameters and MACs per layer;
totals for the frozen default sit within 10% of the published 1.1419 M
params / 581.354 MMACs row (docs/profiler_reconciliation.md details the
residual gap).
"""

from lmkit.config import default_config
from lmkit.profiler import profile

cfg = default_config()
report = profile(cfg)
print(report.as_table())

print("\nwidth-multiplier sweep (pointwise cost scales quadratically):")
print(f"{'alpha':>6} {'params':>10} {'MMACs':>10}")
for alpha in (0.25, 0.5, 0.75, 1.0):
    r = profile(default_config(alpha=alpha))
    print(f"{alpha:>6} {r.total_params:>10} {r.mmacs:>10.2f}")
