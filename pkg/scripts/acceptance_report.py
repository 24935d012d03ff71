"""Print one PASS/FAIL line per acceptance criterion (same checks as ``disc selftest``)."""

import sys

from disc.acceptance import run_all

results = run_all()
for r in results:
    print(r.line())
sys.exit(0 if all(r.passed for r in results) else 1)
