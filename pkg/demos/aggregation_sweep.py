"""Spatial and lag-1 correlation of area profiles as each area aggregates
more customers (20 generator seeds per point)."""

from dsse.harness.generator import correlation_sweep

print(f"{'customers':>9}{'spatial':>10}{'lag-1':>9}")
for row in correlation_sweep():
    print(f"{row['customers']:>9}{row['spatial']:>10.3f}{row['lag1']:>9.3f}")
