"""
Conditional maps and memory
===========================

The map that governs the next step can depend on what happened earlier.
We compare conditional maps across histories, with and without an
environment that is refreshed before every step.
"""

import numpy as np

from qtraj.dilation import DilatedProcess, SpectralHamiltonian, conditional_map, markovianity_check
from qtraj.qcore import PAULI_Z
from qtraj.trajectories import build_ic_basis

spec = SpectralHamiltonian.from_spectra(PAULI_Z / 2, [1.0, -1.0])
basis = build_ic_basis(2)
rho_s, rho_e = np.eye(2) / 2, np.eye(2) / 2

for reset in (False, True):
    proc = DilatedProcess.from_spectral(spec, rho_s, rho_e, steps=3, t=np.pi / 4, reset=reset)
    verdict = markovianity_check(proc, basis)
    print(f"reset={reset!s:5}  markovian={verdict.markovian!s:5}  "
          f"max deviation={verdict.max_deviation:.3e}  maps compared={verdict.n_maps}")

# every conditional map of a product Hamiltonian fixes the maximally mixed state
proc = DilatedProcess.from_spectral(spec, rho_s, rho_e, steps=3, t=np.pi / 4)
cmap = conditional_map(proc, history=[(2, 3)], outcome=0, basis=basis)
print("history probability:", round(cmap.probability, 6))
print("Phi[I/2] =\n", np.round(cmap.channel(np.eye(2) / 2), 12))
