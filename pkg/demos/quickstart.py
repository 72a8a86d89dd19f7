"""Recover two closely spaced sinusoids from 100 noisy samples.

Run with ``python demos/quickstart.py``.
"""
import numpy as np

from dmra import DmraConfig, dmra
from dmra.bench import rsnr
from dmra.core import add_noise, synthesize

m = 100
# 0.6 / M apart: below the DFT resolution 1/M
truth = np.array([0.200, 0.206, 0.550])
gains = np.array([10.0, 10.0 * np.exp(1j), 8.0j])
clean = synthesize(truth, gains, m)
y = add_noise(clean, 1.0, seed=3)

res = dmra(y, DmraConfig(sigma_sq=1.0))
print("true frequencies     ", np.round(truth, 5))
print("estimated frequencies", np.round(res.omegas, 5))
print("estimated |gains|    ", np.round(np.abs(res.gains), 3))
print("accepted by CFAR     ", res.accepted)
print("RSNR (dB)            ", round(rsnr(res.reconstruct(m), clean), 2))

# the periodogram is limited to the 1/M bin spacing
spec = np.abs(np.fft.ifft(y)) ** 2
print("largest DFT bins     ", np.sort(np.argsort(spec)[-3:]) / m)

print("stage-1 grid sizes   ", res.trace["stage1"]["grid_sizes"])
print("stage-2 atom counts  ", res.trace["stage2"]["atoms"])
