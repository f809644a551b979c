"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a one-line verdict before asserting, so the terminal
summary lists all ten criteria whether they pass or fail.
"""

import contextlib
import itertools
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.linalg import expm, null_space

from conftest import record_acceptance
from qtraj.control import (
    ControlCoefficientTensor,
    decoupling_scaling_parameters,
    dephasing_fidelity,
    max_finite,
    multistep_scaling_parameters,
    mutual_information_experiment,
    run_decoupling_sequence,
    control_sequence_unitary,
    three_step_game,
)
from qtraj.decomposition import (
    conditional_scaling_parameters,
    decompose_channel,
    gell_mann_basis,
)
from qtraj.dilation import (
    DilatedProcess,
    SpectralHamiltonian,
    conditional_map,
    final_system_state,
    reduced_channel,
)
from qtraj.qcore import PAULI_X, PAULI_Z, QuantumChannel, trace_distance
from qtraj.sampling import (
    random_channel,
    random_density_matrix,
    random_pure_state,
    random_unitary,
)
from qtraj.trajectories import (
    build_ic_basis,
    classical_joint_probability,
    reconstruct_final_state,
    tomograph_process,
)

# frozen from the independent oracle in test_control.py
GOLDEN_DISCORD_GAP = 0.3137053902199
GOLDEN_I_QUANTUM = 0.39047394892657
GOLDEN_I_CLASSICAL = 0.0767685587067


def _seeded(n):
    return np.random.default_rng(np.random.SeedSequence(20240600 + n))


def _ginibre_state(d, rng):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


# ---------------------------------------------------------------- criterion 1

def test_c01_reconstruction_matches_dilation():
    rng = _seeded(1)
    start = time.perf_counter()
    worst = 0.0
    bases = {2: build_ic_basis(2)}
    for _ in range(50):
        d, d_e, steps = 2, int(rng.choice([2, 3])), int(rng.choice([2, 3]))
        # correlated initial state and a different joint unitary at every step
        proc = DilatedProcess(random_density_matrix(d * d_e, rng),
                              [random_unitary(d * d_e, rng) for _ in range(steps - 1)], d, d_e)
        controls = [random_channel(d, rng, n_kraus=int(rng.integers(1, 4)))
                    for _ in range(steps - 1)]
        table = tomograph_process(proc, bases[d])
        rho_rec = reconstruct_final_state(table, controls)
        rho_sim = final_system_state(proc, controls)
        worst = max(worst, trace_distance(rho_rec, rho_sim))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 60
    record_acceptance(1, ok, f"reconstruction vs dilation, max trace distance {worst:.2e} "
                             f"(< 1e-8), {elapsed:.1f} s (< 60 s)")
    assert worst < 1e-8
    assert elapsed < 60


# ---------------------------------------------------------------- criterion 2

def test_c02_not_gate_recovery():
    rng = _seeded(2)
    bob = QuantumChannel.from_unitary(PAULI_X, name="not")
    worst = 0.0
    for _ in range(10):
        d_e = int(rng.integers(2, 5))
        spec = SpectralHamiltonian.from_spectra(PAULI_Z / 2, rng.uniform(-2, 2, d_e))
        rho_e = random_density_matrix(d_e, rng)
        t = rng.uniform(0, 2 * np.pi)
        for _ in range(20):
            psi = random_pure_state(2, rng)
            game = three_step_game(np.outer(psi, psi.conj()), bob, spec, rho_e, t)
            worst = max(worst, abs(1.0 - game.fidelity_after(PAULI_X)))
    record_acceptance(2, worst < 1e-10, f"NOT-gate recovery, max |1 - F| {worst:.2e} (< 1e-10)")
    assert worst < 1e-10


# ---------------------------------------------------------------- criterion 3

def test_c03_entanglement_breaking_monotonicity():
    # ensemble fixed in advance: Haar rho1, S = sigma_z / 2, d_E in {2, 3}
    # with B spectrum uniform in [-1, 1], Ginibre rho_E, t in [0, pi]; Bob's
    # weights a[l, k] draw a Dirichlet distribution over l for every k so
    # the mixture is trace preserving
    rng = _seeded(3)
    basis = build_ic_basis(2)
    breaks = [basis.causal_break(l, k).superop for l in range(4) for k in range(4)]
    worst_increase = -math.inf
    best_drop = 0.0
    eligible = 0
    for _ in range(100):
        psi = random_pure_state(2, rng)
        d_e = int(rng.choice([2, 3]))
        spec = SpectralHamiltonian.from_spectra(PAULI_Z / 2, rng.uniform(-1, 1, d_e))
        rho_e = _ginibre_state(d_e, rng)
        t = rng.uniform(0, np.pi)
        w = rng.dirichlet(np.ones(4), size=4).T.reshape(-1)
        bob = QuantumChannel(np.einsum("n,nab->ab", w, np.array(breaks)), 2, 2, name="mixture")
        assert bob.is_tp()
        game = three_step_game(np.outer(psi, psi.conj()), bob, spec, rho_e, t)
        worst_increase = max(worst_increase, game.fidelity_13 - game.fidelity_12)
        if game.f.real <= 0.9 and abs(psi[0] * psi[1]) >= 0.3:
            eligible += 1
            best_drop = max(best_drop, game.fidelity_12 - game.fidelity_13)
    ok = worst_increase <= 1e-10 and best_drop >= 0.05
    record_acceptance(3, ok, f"causal-break mixtures, max F13 - F12 {worst_increase:.2e} (<= 1e-10), "
                             f"largest strict drop {best_drop:.3f} over {eligible} eligible (>= 0.05)")
    assert worst_increase <= 1e-10
    assert best_drop >= 0.05


# ---------------------------------------------------------------- criterion 4

def test_c04_dephasing_fidelity_formula():
    rng = _seeded(4)
    bob = QuantumChannel.identity(2)
    worst = 0.0
    for _ in range(100):
        d_e = int(rng.integers(2, 5))
        b = rng.normal(size=(d_e, d_e)) + 1j * rng.normal(size=(d_e, d_e))
        b = (b + b.conj().T) / 2
        spec = SpectralHamiltonian.from_spectra(PAULI_Z / 2, b)
        rho_e = random_density_matrix(d_e, rng)
        t = rng.uniform(0, 2 * np.pi)
        psi = random_pure_state(2, rng)
        game = three_step_game(np.outer(psi, psi.conj()), bob, spec, rho_e, t)
        # f from a matrix exponential, independent of the spectral machinery
        f = np.trace(rho_e @ expm(-1j * b * t))
        mu2, nu2 = abs(psi[0]) ** 2, abs(psi[1]) ** 2
        formula = 1 - 2 * mu2 * nu2 * (1 - f.real)
        worst = max(worst, abs(game.fidelity_12 - formula),
                    abs(dephasing_fidelity(psi, f) - formula))
    record_acceptance(4, worst < 1e-10, f"dephasing fidelity formula, max error {worst:.2e} (< 1e-10)")
    assert worst < 1e-10


# ---------------------------------------------------------------- criterion 5

def test_c05_conditional_maps_are_unital():
    rng = _seeded(5)
    worst = 0.0
    bases = {d: build_ic_basis(d) for d in (2, 3)}
    for _ in range(100):
        d, d_e = int(rng.choice([2, 3])), int(rng.choice([2, 3]))
        steps = int(rng.choice([2, 3, 4]))
        s = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        spec = SpectralHamiltonian.from_spectra(s + s.conj().T, rng.uniform(-1, 1, d_e))
        proc = DilatedProcess.from_spectral(spec, random_density_matrix(d, rng),
                                            random_density_matrix(d_e, rng), steps,
                                            rng.uniform(0, np.pi))
        basis = bases[d]
        depth = int(rng.integers(0, steps - 1))
        history = [tuple(rng.integers(0, basis.size, 2)) for _ in range(depth)]
        outcome = None if rng.random() < 0.2 else int(rng.integers(0, basis.size))
        cmap = conditional_map(proc, history, outcome, basis)
        mixed = np.eye(d) / d
        worst = max(worst, 2 * trace_distance(cmap.channel(mixed), mixed))
    record_acceptance(5, worst < 1e-10, f"conditional maps unital, max ||Phi[I/d] - I/d||_1 "
                                        f"{worst:.2e} (< 1e-10)")
    assert worst < 1e-10


# ---------------------------------------------------------------- criterion 6

def _random_pulse(d, rng):
    perm = rng.permutation(d)
    p = np.zeros((d, d), dtype=complex)
    p[perm, np.arange(d)] = np.exp(1j * rng.uniform(0, 2 * np.pi, d))
    return perm, p


def test_c06_decoupling():
    rng = _seeded(6)
    vanish = 0.0
    for d in (2, 3):
        for _ in range(5):
            d_e = int(rng.integers(2, 4))
            spec = SpectralHamiltonian.from_spectra(rng.uniform(-1, 1, d), rng.uniform(-1, 1, d_e))
            rho_e = random_density_matrix(d_e, rng)
            t = rng.uniform(0, np.pi)
            simulated = decompose_channel(run_decoupling_sequence(spec, rho_e, t)
                                          .conjugated(spec.s_basis)).max_ell()
            closed = max_finite(decoupling_scaling_parameters(spec, rho_e, t))
            vanish = max(vanish, simulated, closed)

    gap = 0.0
    for _ in range(20):
        d, d_e = int(rng.choice([2, 3])), int(rng.choice([2, 3]))
        spec = SpectralHamiltonian.from_spectra(rng.uniform(-1, 1, d), rng.uniform(-1, 1, d_e))
        rho_e = random_density_matrix(d_e, rng)
        t = rng.uniform(0, np.pi)
        pulses = [_random_pulse(d, rng) for _ in range(int(rng.integers(1, 4)))]
        perms = [p for p, _ in pulses]
        unitaries = [u for _, u in pulses]

        # evolve-then-pulse: permutation closed form against simulation
        frames, cur = [list(range(d))], np.arange(d)
        for p in perms[:-1]:
            cur = p[cur]
            frames.append(list(cur))
        final = np.arange(d)
        for p in perms:
            final = p[final]
        with pytest.warns(UserWarning) if _unbalanced(frames, d) else contextlib.nullcontext():
            closed = decoupling_scaling_parameters(spec, rho_e, t, permutations=frames)
        dec = decompose_channel(run_decoupling_sequence(spec, rho_e, t, unitaries)
                                .conjugated(spec.s_basis))
        for (mu, mp), v in closed.items():
            a, b = sorted((final[mu], final[mp]))
            if v < 10:
                gap = max(gap, abs(dec.ell[(a, b)] - v))

        # pulse-then-evolve: multistep coefficient formula against simulation
        ell = multistep_scaling_parameters(spec, ControlCoefficientTensor.from_unitaries(unitaries),
                                           rho_e, t)
        w = control_sequence_unitary(spec, t, unitaries, evolve_first=False)
        dec = decompose_channel(reduced_channel(w, rho_e, d).conjugated(spec.s_basis))
        for (mu, mp), v in dec.ell.items():
            reach = [ell[(mu, nu, mp, nq)] for nu, nq in itertools.product(range(d), repeat=2)
                     if math.isfinite(ell[(mu, nu, mp, nq)])]
            if v < 10:
                gap = max(gap, abs(reach[0] - v))
    ok = vanish < 1e-10 and gap < 1e-7
    record_acceptance(6, ok, f"decoupling, max ell under full cycle {vanish:.2e} (< 1e-10), "
                             f"route gap on random sequences {gap:.2e} (< 1e-7)")
    assert vanish < 1e-10
    assert gap < 1e-7


def _unbalanced(frames, d):
    counts = np.zeros((d, d), dtype=int)
    for p in frames:
        counts[np.arange(d), p] += 1
    return not np.all(counts == counts[0])


# ---------------------------------------------------------------- criterion 7

def _gell_mann_block(kraus, weights, basis):
    m = np.zeros((basis.d**2, basis.d**2))
    for i, fi in enumerate(basis.elements):
        for j, fj in enumerate(basis.elements):
            out = sum(w * k @ fj @ k.conj().T for w, k in zip(weights, kraus))
            m[i, j] = np.trace(fi @ out).real
    return m


def test_c07_scaling_formula_cross_check():
    rng = _seeded(7)
    worst = 0.0
    for _ in range(50):
        d, d_e = int(rng.choice([2, 3])), int(rng.integers(2, 5))
        s_vals = rng.uniform(-1, 1, d)
        b = rng.normal(size=(d_e, d_e)) + 1j * rng.normal(size=(d_e, d_e))
        b = b + b.conj().T
        spec = SpectralHamiltonian.from_spectra(np.diag(s_vals), b)
        p_env = rng.dirichlet(np.ones(d_e))
        t = rng.uniform(0, np.pi)
        ell = conditional_scaling_parameters(spec, p_env, t)
        # in the S eigenbasis the channel mixes diagonal phase unitaries, one per B level
        kraus = [np.diag(np.exp(-1j * spec.s_values * bg * t)) for bg in spec.b_values]
        gm = gell_mann_basis(d)
        m = _gell_mann_block(kraus, p_env, gm)
        for (mu, mp), v in ell.items():
            if mu == mp:
                continue
            idx = list(gm.pair_index[(mu, mp)])
            sv = np.linalg.svd(m[np.ix_(idx, idx)], compute_uv=False)
            worst = max(worst, *(abs(v + math.log(x)) for x in sv))
    ts = np.linspace(0, np.pi, 64)
    spec = SpectralHamiltonian.from_spectra([0.5, -0.5], [1.0, -1.0])
    special = max(abs(conditional_scaling_parameters(spec, [0.5, 0.5], t)[(0, 1)]
                      + math.log(abs(math.cos(t)))) for t in ts)
    ok = worst < 1e-8 and special < 1e-8
    record_acceptance(7, ok, f"scaling formula vs block singular values {worst:.2e} (< 1e-8), "
                             f"-ln|cos t| special case {special:.2e} (< 1e-8)")
    assert worst < 1e-8
    assert special < 1e-8


# ---------------------------------------------------------------- criterion 8

def test_c08_mutual_information_ordering():
    rng = _seeded(8)
    worst_order, worst_reset = -math.inf, 0.0
    for _ in range(25):
        d, d_e = int(rng.choice([2, 3])), int(rng.choice([2, 3]))
        spec = SpectralHamiltonian.from_spectra(rng.uniform(-1, 1, d), rng.uniform(-1, 1, d_e))
        rho_e = random_density_matrix(d_e, rng)
        rho1 = random_density_matrix(d, rng)
        rho2p = random_density_matrix(d, rng)
        t = rng.uniform(0, np.pi)
        kw = dict(rho2_prime=rho2p, t=t)
        i_q = mutual_information_experiment(spec, rho_e, rho1, mode="quantum", **kw).I
        i_cl = mutual_information_experiment(spec, rho_e, rho1, mode="classical-strategy", **kw).I
        i_r = mutual_information_experiment(spec, rho_e, rho1, mode="markovian-reset", **kw).I
        worst_order = max(worst_order, i_cl - i_q, -i_cl)
        worst_reset = max(worst_reset, i_r)

    spec = SpectralHamiltonian.from_spectra(PAULI_Z / 2, np.diag([1.0, -1.0]))
    plus = np.full((2, 2), 0.5)
    kw = dict(rho2_prime=plus, t=np.pi / 4)
    i_q = mutual_information_experiment(spec, np.eye(2) / 2, plus, mode="quantum", **kw).I
    i_cl = mutual_information_experiment(spec, np.eye(2) / 2, plus, mode="classical-strategy", **kw).I
    gap = i_q - i_cl
    ok = (worst_order <= 1e-12 and worst_reset < 1e-10 and gap > 0
          and abs(gap - GOLDEN_DISCORD_GAP) < 1e-10)
    record_acceptance(8, ok, f"I_q >= I_cl >= 0 (worst slack {worst_order:.2e}), reset I "
                             f"{worst_reset:.2e} (< 1e-10), canonical gap {gap:.13f}")
    assert worst_order <= 1e-12
    assert worst_reset < 1e-10
    assert gap > 0
    assert abs(i_q - GOLDEN_I_QUANTUM) < 1e-10
    assert abs(i_cl - GOLDEN_I_CLASSICAL) < 1e-10
    assert abs(gap - GOLDEN_DISCORD_GAP) < 1e-10


# ---------------------------------------------------------------- criterion 9

def _stinespring_unitary(transition):
    """Unitary on ``S (x) E`` (``E`` of size d**2) that acts as the stochastic
    matrix on diagonal states when E starts in ``|0>``."""
    d = transition.shape[0]
    d_e = d * d
    iso = np.zeros((d * d_e, d), dtype=complex)
    for i, j in itertools.product(range(d), repeat=2):
        # Kraus sqrt(T_ij) |i><j| tagged by environment level (i, j)
        iso[i * d_e + i * d + j, j] = math.sqrt(transition[i, j])
    u = np.zeros((d * d_e, d * d_e), dtype=complex)
    cols = [s * d_e for s in range(d)]
    u[:, cols] = iso
    rest = [c for c in range(d * d_e) if c not in cols]
    u[:, rest] = null_space(iso.conj().T)
    return u


def _measure_prepare(mu):
    d = mu.shape[0]
    kraus = [math.sqrt(mu[j, i]) * np.outer(np.eye(d)[j], np.eye(d)[i])
             for i, j in itertools.product(range(d), repeat=2) if mu[j, i] > 0]
    return QuantumChannel.from_kraus(kraus)


def test_c09_classical_embedding():
    rng = _seeded(9)
    worst = 0.0
    for _ in range(20):
        d, steps = int(rng.choice([2, 3])), int(rng.choice([2, 3]))
        p0 = rng.dirichlet(np.ones(d))
        transitions = [rng.dirichlet(np.ones(d), size=d).T for _ in range(steps - 1)]
        interventions = [rng.dirichlet(np.ones(d), size=d).T for _ in range(steps - 1)]
        env0 = np.zeros((d * d, d * d))
        env0[0, 0] = 1.0
        proc = DilatedProcess(np.kron(np.diag(p0), env0),
                              [_stinespring_unitary(t) for t in transitions], d, d * d,
                              reset_state=env0)
        rho = final_system_state(proc, [_measure_prepare(m) for m in interventions])
        for x in range(d):
            p_cl = classical_joint_probability(p0, transitions, interventions, x)
            worst = max(worst, abs(p_cl - rho[x, x].real))
    record_acceptance(9, worst < 1e-12, f"classical embedding, max |p_cl - p_q| {worst:.2e} (< 1e-12)")
    assert worst < 1e-12


# ---------------------------------------------------------------- criterion 10

SCENARIOS = ("tomography", "reconstruct", "markov-test", "game", "mutualinfo", "decouple",
             "scaling-sweep")


def test_c10_cli_determinism(tmp_path):
    mismatched = []
    for name in SCENARIOS:
        for fmt in ("json", "csv"):
            outs = []
            for run in range(2):
                path = tmp_path / f"{name}-{run}.{fmt}"
                res = subprocess.run([sys.executable, "-m", "qtraj.cli", name, "--deterministic",
                                      "--format", fmt, "--out", str(path)],
                                     capture_output=True, text=True)
                assert res.returncode == 0, res.stderr
                outs.append(path.read_bytes())
            if outs[0] != outs[1]:
                mismatched.append(f"{name}/{fmt}")
    ok = not mismatched
    record_acceptance(10, ok, f"determinism, {2 * len(SCENARIOS) - len(mismatched)}/"
                              f"{2 * len(SCENARIOS)} canonical reports byte-identical")
    assert not mismatched
