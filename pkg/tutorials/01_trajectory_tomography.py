"""
Recording a process with causal breaks
======================================

A qubit talks to a two-level environment for three time steps. We record
the joint probabilities of every elementary trajectory, then use that table
to predict the final state under controls we never applied.
"""

import numpy as np

from qtraj.dilation import DilatedProcess, SpectralHamiltonian, final_system_state
from qtraj.qcore import PAULI_Z, QuantumChannel, trace_distance
from qtraj.sampling import random_channel
from qtraj.trajectories import build_ic_basis, is_mixed_wrt_basis, reconstruct_final_state, tomograph_process

rng = np.random.default_rng(2024)

# H = sigma_z / 2 (x) B with a mixed environment
spec = SpectralHamiltonian.from_spectra(PAULI_Z / 2, [1.0, -1.0])
plus = np.full((2, 2), 0.5)
proc = DilatedProcess.from_spectral(spec, plus, np.eye(2) / 2, steps=3, t=np.pi / 4)

# 4 outcomes x 4 repreparations per intermediate step, 4 final outcomes
basis = build_ic_basis(2)
table = tomograph_process(proc, basis)
print("table entries:", len(table), " normalisation error:", table.normalization_error())

# predict the outcome of two controls from the table alone
controls = [random_channel(2, rng), QuantumChannel.from_unitary(np.array([[0, 1], [1, 0]]))]
predicted = reconstruct_final_state(table, controls)
simulated = final_system_state(proc, controls)
print("trace distance prediction vs simulation:", trace_distance(predicted, simulated))

# the identity needs negative weights on the causal breaks: it is coherent
verdict = is_mixed_wrt_basis(QuantumChannel.identity(2), basis)
print("identity is a mixture of causal breaks:", verdict.mixed, " most negative weight:",
      round(verdict.witness, 4))
