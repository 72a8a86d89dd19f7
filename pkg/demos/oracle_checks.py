"""Run the independent reference checks and print their statistics."""
from dmra.oracle import CHECKS

for name, check in CHECKS.items():
    rep = check()
    print("\n".join(rep.lines()))
    print()
