"""
Five ways to drive the same loop
================================

Runs the four fixed baselines and the co-driver policy over three seeds
and prints the comparison the way the CLI does, plus a few savings figures
and the qualitative checks.
"""

from maps_sim.harness import MAPS, canonical_suite, emit_report, ordering_checks, report_markdown, run_suite, savings

report = run_suite(canonical_suite(repetitions=3, seed_base=0))
print(report_markdown(report))

for other in ("HighHigh", "LowHigh"):
    print(
        f"MAPS vs {other}: comp {savings(report, MAPS, other, 'comp_w'):+.1f}%, "
        f"total {savings(report, MAPS, other, 'total_w'):+.1f}%"
    )

print()
for name, ok in ordering_checks(report).items():
    print(f"{'holds ' if ok else 'broken'}  {name}")

paths = emit_report(report, "suite_out")
print(f"\nwrote {len(paths)} files to suite_out/")
