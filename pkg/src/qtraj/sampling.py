"""Seeded random states, unitaries and channels."""

from __future__ import annotations

import numpy as np
from scipy.stats import unitary_group

from .qcore import QuantumChannel


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def random_unitary(d: int, rng=None) -> np.ndarray:
    """Haar-random ``d x d`` unitary."""
    if d == 1:
        return np.exp(2j * np.pi * _rng(rng).random()) * np.ones((1, 1), dtype=complex)
    return unitary_group.rvs(d, random_state=_rng(rng)).astype(complex)


def random_pure_state(d: int, rng=None) -> np.ndarray:
    """Haar-random normalised state vector."""
    rng = _rng(rng)
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_density_matrix(d: int, rng=None, rank: int | None = None) -> np.ndarray:
    """Random mixed state from the induced (Ginibre) measure."""
    rng = _rng(rng)
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(d: int, rng=None, scale: float = 1.0) -> np.ndarray:
    rng = _rng(rng)
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * 0.5 * (g + g.conj().T)


def random_channel(d: int, rng=None, n_kraus: int = 2, d_out: int | None = None) -> QuantumChannel:
    """Random CPTP map from a Haar-random isometry."""
    rng = _rng(rng)
    d_out = d if d_out is None else d_out
    u = random_unitary(d_out * n_kraus, rng)
    iso = u[:, :d]
    kraus = [iso[i * d_out : (i + 1) * d_out, :] for i in range(n_kraus)]
    return QuantumChannel.from_kraus(kraus, name="random")


def random_probability(n: int, rng=None) -> np.ndarray:
    """Uniform point on the probability simplex."""
    return _rng(rng).dirichlet(np.ones(n))
