import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from qtraj.dilation import (
    DilatedProcess,
    SpectralHamiltonian,
    build_product_hamiltonian,
    conditional_environment_state,
    conditional_map,
    dephasing_factor,
    final_system_state,
    markovianity_check,
    reduced_channel,
    run_dilated_process,
)
from qtraj.errors import DimensionError, InvalidStateError, UndefinedConditionalError
from qtraj.qcore import PAULI_X, PAULI_Z, QuantumChannel, partial_trace, projector
from qtraj.sampling import (
    random_channel,
    random_density_matrix,
    random_hermitian,
    random_unitary,
)
from qtraj.trajectories import build_ic_basis

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_spectrum_forms_agree():
    b = np.diag([1.0, -0.5, 0.25])
    pairs = [(v, projector(np.eye(3)[i])) for i, v in enumerate(np.diag(b))]
    h1, _ = build_product_hamiltonian(PAULI_Z / 2, [1.0, -0.5, 0.25])
    h2, _ = build_product_hamiltonian([0.5, -0.5], b)
    h3, _ = build_product_hamiltonian([(0.5, projector([1, 0])), (-0.5, projector([0, 1]))], pairs)
    expected = np.kron(PAULI_Z / 2, b)
    for h in (h1, h2, h3):
        assert np.allclose(h, expected)


def test_spectrum_validation():
    with pytest.raises(InvalidStateError):
        SpectralHamiltonian.from_spectra(np.array([[0, 1], [0, 0]]), [1.0])
    with pytest.raises(InvalidStateError):
        SpectralHamiltonian.from_spectra([(1.0, projector([1, 0])), (0.0, projector([1, 0]))], [1.0])
    with pytest.raises(InvalidStateError):
        SpectralHamiltonian.from_spectra([np.nan, 1.0], [1.0])


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 3), st.integers(2, 3))
def test_spectral_unitary_matches_expm(seed, d, d_e):
    rng = np.random.default_rng(seed)
    s, b = random_hermitian(d, rng), random_hermitian(d_e, rng)
    spec = SpectralHamiltonian.from_spectra(s, b)
    assert np.allclose(spec.hamiltonian, np.kron(s, b))
    t = rng.uniform(0, 4)
    assert np.allclose(spec.unitary(t), expm(-1j * np.kron(s, b) * t), atol=1e-12)
    rho_e = random_density_matrix(d_e, rng)
    p = spec.env_populations(rho_e)
    assert p.sum() == pytest.approx(1.0)


def test_process_validation():
    with pytest.raises(DimensionError):
        DilatedProcess(np.eye(4) / 4, [np.eye(6)], 2, 2)
    with pytest.raises(InvalidStateError):
        DilatedProcess(np.eye(4) / 4, [2 * np.eye(4)], 2, 2)
    with pytest.raises(DimensionError):
        DilatedProcess(np.eye(4) / 4, [np.eye(4)], 2, 2, reset_state=np.eye(3) / 3)
    proc = DilatedProcess(np.eye(4) / 4, [np.eye(4)], 2, 2)
    with pytest.raises(DimensionError):
        run_dilated_process(proc, [])


def test_control_then_unitary_order():
    # a NOT control before a CNOT-like unitary distinguishes the two orders
    cnot = np.eye(4)[[0, 1, 3, 2]]
    proc = DilatedProcess(np.kron(projector([1, 0]), projector([1, 0])), [cnot], 2, 2)
    omega = run_dilated_process(proc, [QuantumChannel.from_unitary(PAULI_X)])
    # |0>|0> -> NOT -> |1>|0> -> CNOT -> |1>|1>
    assert np.isclose(omega[3, 3].real, 1.0)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 3), st.integers(2, 4))
def test_reduced_channel_is_partial_trace(seed, d, d_e):
    rng = np.random.default_rng(seed)
    w = random_unitary(d * d_e, rng)
    rho_e = random_density_matrix(d_e, rng, rank=int(rng.integers(1, d_e + 1)))
    ch = reduced_channel(w, rho_e, d)
    assert ch.is_cp() and ch.is_tp()
    rho = random_density_matrix(d, rng)
    direct = partial_trace(w @ np.kron(rho, rho_e) @ w.conj().T, (d, d_e), keep="S")
    assert np.allclose(ch(rho), direct)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 4))
def test_dephasing_factor_is_a_trace(seed, d_e):
    rng = np.random.default_rng(seed)
    b = random_hermitian(d_e, rng)
    rho_e = random_density_matrix(d_e, rng)
    t, w = rng.uniform(0, 5), rng.uniform(0.5, 2)
    expected = np.trace(rho_e @ expm(-1j * b * w * t))
    assert dephasing_factor(b, rho_e, t, omega=w) == pytest.approx(expected, abs=1e-12)


def test_dephasing_factor_multiplies_coherence():
    rng = np.random.default_rng(7)
    spec = SpectralHamiltonian.from_spectra(PAULI_Z / 2, [0.3, -1.1, 0.8])
    rho_e = random_density_matrix(3, rng)
    rho = random_density_matrix(2, rng)
    t = 0.9
    out = reduced_channel(spec.unitary(t), rho_e, 2)(rho)
    f = dephasing_factor(spec, rho_e, t)
    assert np.isclose(out[0, 1], rho[0, 1] * f)
    assert np.isclose(out[0, 0], rho[0, 0])


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_conditional_map_is_reduced_step(seed):
    rng = np.random.default_rng(seed)
    basis = build_ic_basis(2)
    proc = DilatedProcess(random_density_matrix(6, rng), [random_unitary(6, rng)] * 2, 2, 3)
    hist = [(int(rng.integers(4)), int(rng.integers(4)))]
    k = int(rng.integers(4))
    cmap = conditional_map(proc, hist, k, basis)
    p, tau = conditional_environment_state(proc, hist, k, basis)
    assert cmap.step == 2 and cmap.probability == pytest.approx(p)
    assert np.allclose(cmap.channel.superop, reduced_channel(proc.unitaries[1], tau, 2).superop)
    assert cmap.channel.is_cp(1e-8) and cmap.channel.is_tp()


def test_conditional_map_rejects_impossible_history():
    basis = build_ic_basis(2)
    # start in the kernel of the rank-one element Pi_1 so outcome 1 never occurs
    w, v = np.linalg.eigh(basis.povm[1])
    proc = DilatedProcess.from_hamiltonian(np.zeros((4, 4)), projector(v[:, 0]), np.eye(2) / 2, 3, 1.0)
    with pytest.raises(UndefinedConditionalError):
        conditional_map(proc, [], 1, basis)
    with pytest.raises(DimensionError):
        conditional_map(proc, [(0, 0), (0, 0)], 0, basis)


@pytest.fixture(scope="module")
def correlating_process():
    spec = SpectralHamiltonian.from_spectra(PAULI_Z / 2, [1.0, -1.0])
    return spec, DilatedProcess.from_spectral(spec, np.eye(2) / 2, np.eye(2) / 2, 3, np.pi / 4)


def test_markovianity_detects_memory(correlating_process):
    spec, proc = correlating_process
    verdict = markovianity_check(proc, build_ic_basis(2))
    assert not verdict.markovian
    assert verdict.max_deviation > 0.1
    assert verdict.n_maps == 4 + 4**3


def test_markovianity_with_reset(correlating_process):
    spec, _ = correlating_process
    proc = DilatedProcess.from_spectral(spec, np.eye(2) / 2, np.eye(2) / 2, 3, np.pi / 4, reset=True)
    verdict = markovianity_check(proc, build_ic_basis(2))
    assert verdict.markovian
    assert verdict.max_deviation < 1e-12


def test_single_step_with_product_state_is_markovian():
    rng = np.random.default_rng(8)
    proc = DilatedProcess(np.kron(random_density_matrix(2, rng), random_density_matrix(3, rng)),
                          [random_unitary(6, rng)], 2, 3)
    assert markovianity_check(proc, build_ic_basis(2)).markovian


def test_markovianity_threads_agree(correlating_process):
    _, proc = correlating_process
    basis = build_ic_basis(2)
    assert markovianity_check(proc, basis, threads=3) == markovianity_check(proc, basis)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_reset_process_composes_reduced_channels(seed):
    rng = np.random.default_rng(seed)
    rho_e = random_density_matrix(2, rng)
    us = [random_unitary(4, rng) for _ in range(2)]
    rho = random_density_matrix(2, rng)
    proc = DilatedProcess(np.kron(rho, rho_e), us, 2, 2, reset_state=rho_e)
    controls = [random_channel(2, rng) for _ in range(2)]
    expected = rho
    for c, u in zip(controls, us):
        expected = reduced_channel(u, rho_e, 2)(c(expected))
    assert np.allclose(final_system_state(proc, controls), expected)
