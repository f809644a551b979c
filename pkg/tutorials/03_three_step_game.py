"""
Undoing dephasing by interference
=================================

Alice prepares a qubit, it dephases, Bob acts, it dephases again and
Charlie checks it. A NOT gate from Bob makes the two dephasing steps cancel;
a measure-and-reprepare strategy cannot do that, and the memory the
environment holds shows up as correlations between Bob and Charlie.
"""

import numpy as np

from qtraj.control import mutual_information_experiment, three_step_game
from qtraj.dilation import SpectralHamiltonian
from qtraj.qcore import PAULI_X, PAULI_Z, QuantumChannel
from qtraj.trajectories import build_ic_basis

spec = SpectralHamiltonian.from_spectra(PAULI_Z / 2, [1.0, -1.0])
rho_e, t = np.eye(2) / 2, np.pi / 4
plus = np.full((2, 2), 0.5)

game = three_step_game(plus, QuantumChannel.identity(2), spec, rho_e, t)
print(f"dephasing factor f = {game.f:.4f}")
print(f"Bob idle: F12 = {game.fidelity_12:.4f} (closed form {game.fidelity_formula:.4f}), "
      f"F13 = {game.fidelity_13:.4f}")

game = three_step_game(plus, QuantumChannel.from_unitary(PAULI_X, name="not"), spec, rho_e, t)
print(f"Bob applies NOT: F13 after Charlie undoes it = {game.fidelity_after(PAULI_X):.12f}")

# Bob measures and reprepares |+> whatever he sees
basis = build_ic_basis(2)
bob = QuantumChannel(sum(basis.causal_break(2, k).superop for k in range(4)), 2, 2)
game = three_step_game(plus, bob, spec, rho_e, t)
print(f"Bob reprepares |+>: F13 = {game.fidelity_13:.4f}")

for mode in ("quantum", "classical-strategy", "markovian-reset"):
    res = mutual_information_experiment(spec, rho_e, plus, plus, mode=mode, t=t)
    print(f"I(B:C) {mode:>18}: {res.I:.10f} bits")
