"""
Scaling parameters and decoupling pulses
========================================

Free evolution under a product Hamiltonian shrinks each coherence by a
factor exp(-ell). Cycling the system through all of its levels with shift
pulses makes every gap appear equally often, and the shrinking disappears.
"""

import numpy as np

from qtraj.control import (
    ControlCoefficientTensor,
    decoupling_scaling_parameters,
    max_finite,
    multistep_scaling_parameters,
    run_decoupling_sequence,
)
from qtraj.decomposition import conditional_scaling_parameters, decompose_channel
from qtraj.dilation import SpectralHamiltonian, reduced_channel

spec = SpectralHamiltonian.from_spectra([1.0, 0.2, -0.7], [0.9, -0.4, 0.3])
rho_e = np.diag([0.5, 0.3, 0.2])
t = 0.8

ell = conditional_scaling_parameters(spec, rho_e, t)
dec = decompose_channel(reduced_channel(spec.unitary(t), rho_e, 3))
print("one free step, closed form vs polar decomposition:")
for key in sorted(ell):
    if key[0] != key[1]:
        print(f"  ell{key} = {ell[key]:.10f}   {dec.ell[key]:.10f}")

# three free steps with no pulses
free = decompose_channel(reduced_channel(spec.unitary(3 * t), rho_e, 3))
print("three free steps, max ell:", round(free.max_ell(), 6))

# three free steps, each followed by the shift G
ch = run_decoupling_sequence(spec, rho_e, t)
print("shift sequence, max ell (simulated):", decompose_channel(ch).max_ell())
print("shift sequence, max ell (closed form):", max_finite(decoupling_scaling_parameters(spec, rho_e, t)))
coeffs = ControlCoefficientTensor.shift_sequence(3)
print("shift sequence, max ell (coefficient formula):",
      max_finite(multistep_scaling_parameters(spec, coeffs, rho_e, t)))
