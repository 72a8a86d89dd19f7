"""Success rate and NMSE against SNR on a built-in scenario.

Small trial counts keep this under a couple of minutes; the ``dmra bench``
command runs the same harness with CSV/JSON output.
"""
import sys

from dmra import DmraConfig
from dmra.bench import run_trials, scenario, summarize

name = sys.argv[1] if len(sys.argv) > 1 else "scenario2"
trials = int(sys.argv[2]) if len(sys.argv) > 2 else 10

spec = scenario(name)
print(f"{name}: clusters {spec.cluster_sizes}, mu={spec.mu}, M={spec.m_count}")
results = run_trials(spec, [10.0, 20.0, 30.0], trials, DmraConfig(sigma_sq=spec.sigma_sq), seed=0)
print(f"{'snr':>6} {'success':>8} {'nmse':>10} {'rsnr':>8}")
for row in summarize(results):
    print(f"{row['snr_db']:6.0f} {row['success_rate']:8.2f} {row['nmse']:10.2e} "
          f"{row['rsnr_db']:8.2f}")
