"""Dense statevector reference: exact evolution, spectra, thermal averages.

Everything here scales exponentially in site count and exists to validate
the network engines on small grids and to answer the thermal-equilibrium
questions that need full spectra.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .models import TermSum
from .tensor_core import NoConvergence, TooLarge, krylov_expm_apply
from .timeseries import EvolutionConfig, TimeSeries

_VECTOR_CAP = 1 << 22
_DENSE_CAP = 1 << 12


class OutOfRange(ValueError):
    """Target value outside the physically reachable interval."""


@dataclass(frozen=True)
class StateVector:
    """Dense amplitudes plus the local dimensions they factorize over."""

    amplitudes: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        dim = int(np.prod(self.dims, dtype=np.int64))
        if dim > _VECTOR_CAP:
            raise TooLarge(f"statevector dimension {dim} exceeds {_VECTOR_CAP}")
        if self.amplitudes.size != dim:
            raise ValueError("amplitude count does not match dims")


@dataclass(frozen=True)
class EffectiveTempQuery:
    """Gibbs-matching problem: find T with thermal energy = e_init."""

    hamiltonian: TermSum
    e_init: float
    t_bounds: tuple[float, float] = (1e-8, 1e12)

    def __post_init__(self):
        lo, hi = self.t_bounds
        if not 0 < lo < hi:
            raise ValueError("t_bounds must be an increasing positive pair")


def product_statevector(local_states) -> np.ndarray:
    """Kron product of local vectors, site 0 slowest."""
    vecs = [np.asarray(v, dtype=complex).reshape(-1) for v in local_states]
    dim = 1
    for v in vecs:
        dim *= v.size
        if dim > _VECTOR_CAP:
            raise TooLarge(f"statevector dimension exceeds {_VECTOR_CAP}")
    return reduce(np.kron, vecs)


def apply_site_matrix(v: np.ndarray, dims, site: int, mat: np.ndarray) -> np.ndarray:
    dims = tuple(dims)
    dl = int(np.prod(dims[:site], dtype=np.int64)) if site else 1
    d = dims[site]
    dr = v.size // (dl * d)
    w = v.reshape(dl, d, dr)
    out = np.tensordot(np.asarray(mat), w, (1, 1))
    return np.ascontiguousarray(out.transpose(1, 0, 2)).reshape(-1)


def apply_term_sum(h: TermSum, v: np.ndarray) -> np.ndarray:
    """H v by streaming term application; never materializes H."""
    if v.size > _VECTOR_CAP:
        raise TooLarge(f"statevector dimension exceeds {_VECTOR_CAP}")
    out = h.constant * v if h.constant else np.zeros_like(v, dtype=complex)
    if out.dtype != complex:
        out = out.astype(complex)
    for coeff, ops in h.terms:
        w = v
        for site, mid in ops:
            w = apply_site_matrix(w, h.dims, site, h.mat(mid))
        out = out + coeff * w
    return out


def term_sum_sparse(h: TermSum):
    """CSR matrix of a TermSum; one kron chain per term."""
    import scipy.sparse as sp

    dims = tuple(h.dims)
    dim = int(np.prod(dims, dtype=np.int64))
    if dim > _VECTOR_CAP:
        raise TooLarge(f"statevector dimension {dim} exceeds {_VECTOR_CAP}")
    total = sp.identity(dim, dtype=complex, format="csr") * h.constant
    for coeff, ops in h.terms:
        site_mats: dict[int, np.ndarray] = {}
        for site, mid in ops:
            m = h.mat(mid)
            site_mats[site] = m @ site_mats[site] if site in site_mats else m
        facs = [
            sp.csr_matrix(site_mats[s]) if s in site_mats else sp.identity(dims[s])
            for s in range(len(dims))
        ]
        total = total + coeff * reduce(lambda a, b: sp.kron(a, b, format="csr"), facs)
    return total.tocsr()


# streaming term application beats assembling a matrix only for tiny
# problems; above this dimension the one-off CSR build pays for itself
_SPARSE_MIN_DIM = 1 << 10


def term_sum_matvec(h: TermSum):
    dim = int(np.prod(h.dims, dtype=np.int64))
    if dim >= _SPARSE_MIN_DIM:
        mat = term_sum_sparse(h)
        return lambda v: mat @ v
    return lambda v: apply_term_sum(h, v)


def krylov_evolve_exact(
    h: TermSum,
    psi0: np.ndarray,
    config: EvolutionConfig,
    observables=None,
) -> TimeSeries:
    """Evolve psi0 on the config time grid and record observables.

    Observables may be TermSums or callables on the state; recorded values
    take the real part. A `norm` column is always present.
    """
    records, _ = evolve_on_grid(
        h,
        psi0,
        config.time_grid(),
        observables,
        tol=min(config.krylov_tol, 1e-8),
        m_max=max(config.krylov_m_max, 30),
    )
    times = records.pop("t")
    meta = {
        "engine": "krylov_exact",
        "n_sites": len(h.dims),
        "dims": list(h.dims),
        "dt": config.dt,
        "t_max": config.t_max,
        "stride": config.stride,
        "tol": min(config.krylov_tol, 1e-8),
    }
    return TimeSeries(times, records, meta)


def evolve_on_grid(
    h: TermSum,
    psi0: np.ndarray,
    times,
    observables=None,
    tol: float = 1e-8,
    m_max: int = 60,
):
    """Evolve psi0 through the strictly increasing grid `times`.

    Local error per unit time is held at `tol` by step doubling: each trial
    step is compared against two half steps and halved until the difference
    passes. Returns (records, final_state); krylov_evolve_exact is the
    packaged form.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a strictly increasing 1D grid")
    observables = observables or {}
    mv = term_sum_matvec(h)
    v = np.asarray(psi0, dtype=complex).copy()
    records = {name: [] for name in observables}
    records["t"] = []
    records["norm"] = []

    def record(t):
        records["t"].append(t)
        records["norm"].append(float(np.linalg.norm(v)))
        for name, obs in observables.items():
            if isinstance(obs, TermSum):
                val = np.vdot(v, apply_term_sum(obs, v))
            else:
                val = obs(v)
            records[name].append(float(np.real(val)))

    record(times[0])
    for t0, t1 in zip(times[:-1], times[1:]):
        v = _advance(mv, v, t1 - t0, tol, m_max)
        record(t1)
    return {k: np.asarray(arr) for k, arr in records.items()}, v


def _advance(mv, v, span, tol, m_max):
    remaining = float(span)
    step = remaining
    floor = 1e-12 * max(1.0, span)
    while remaining > floor:
        step = min(step, remaining)
        ktol = max(1e-13, 0.05 * tol * step)
        try:
            one = krylov_expm_apply(mv, v, -1j * step, m_max=m_max, tol=ktol)
            half = krylov_expm_apply(mv, v, -0.5j * step, m_max=m_max, tol=ktol)
            two = krylov_expm_apply(mv, half, -0.5j * step, m_max=m_max, tol=ktol)
        except NoConvergence:
            step *= 0.5
            if step < 1e-10:
                raise
            continue
        err = float(np.linalg.norm(one - two))
        if err <= tol * step or step <= 1e-10:
            v = two
            remaining -= step
            if err < 0.05 * tol * step:
                step *= 1.6
        else:
            step *= 0.5
    return v


def hamiltonian_spectrum(h: TermSum, max_dim: int = _DENSE_CAP) -> np.ndarray:
    return np.linalg.eigvalsh(h.to_dense(max_dim=max_dim))


def _spectrum_of(h) -> np.ndarray:
    if isinstance(h, TermSum):
        return hamiltonian_spectrum(h)
    return np.asarray(h, dtype=float)


def thermal_energy(h, temperature: float) -> float:
    """Canonical <H> at the given temperature.

    Accepts a TermSum (diagonalized densely, capped dimension) or a
    precomputed spectrum; the Boltzmann weights are max-shifted so low
    temperatures stay finite.
    """
    if temperature <= 0:
        raise OutOfRange("temperature must be positive")
    lam = _spectrum_of(h)
    x = -(lam - lam.min()) / temperature
    w = np.exp(x - x.max())
    return float(np.sum(lam * w) / np.sum(w))


def effective_temperature(query: EffectiveTempQuery, tol: float = 1e-6) -> float:
    """Temperature whose canonical energy matches the query's e_init."""
    evals = _spectrum_of(query.hamiltonian)
    return temperature_from_spectrum(evals, query.e_init, query.t_bounds, tol)


def temperature_from_spectrum(
    evals: np.ndarray,
    e_target: float,
    t_bounds: tuple[float, float] = (1e-8, 1e12),
    tol: float = 1e-6,
) -> float:
    """Bisect thermal_energy(T) = e_target; E(T) is strictly increasing.

    The reachable band is (ground energy, infinite-temperature mean); targets
    outside it raise OutOfRange.
    """
    lam = np.asarray(evals, dtype=float)
    e0 = float(lam.min())
    e_inf = float(lam.mean())
    if not e0 < e_target < e_inf:
        raise OutOfRange(
            f"target energy {e_target} outside reachable ({e0}, {e_inf})"
        )
    t_lo, t_hi = t_bounds
    while thermal_energy(lam, t_hi) < e_target:
        t_hi *= 2.0
        if t_hi > 1e15:
            raise OutOfRange("target energy needs unphysically hot ensemble")
    while thermal_energy(lam, t_lo) > e_target:
        t_lo *= 0.5
        if t_lo < 1e-15:
            raise OutOfRange("target energy needs unphysically cold ensemble")
    while t_hi - t_lo > tol:
        t_mid = 0.5 * (t_lo + t_hi)
        if thermal_energy(lam, t_mid) < e_target:
            t_lo = t_mid
        else:
            t_hi = t_mid
    return 0.5 * (t_lo + t_hi)


def reduced_entropy(psi, dims=None, keep=None) -> float:
    """Entanglement entropy (nats) of the `keep` sites in a pure state.

    Accepts (vector, dims, keep) or (StateVector, keep).
    """
    if isinstance(psi, StateVector):
        if keep is None:
            keep = dims
        dims = psi.dims
        psi = psi.amplitudes
    dims = tuple(dims)
    keep = sorted(keep)
    rest = [s for s in range(len(dims)) if s not in keep]
    dk = int(np.prod([dims[s] for s in keep], dtype=np.int64))
    if dk > _DENSE_CAP:
        raise TooLarge(f"subsystem dimension {dk} exceeds {_DENSE_CAP}")
    t = np.asarray(psi).reshape(dims)
    t = t.transpose(keep + rest)
    mat = t.reshape(dk, -1)
    s = np.linalg.svd(mat, compute_uv=False)
    p = s**2
    p = p[p > 1e-300]
    p = p / p.sum()
    return float(-np.sum(p * np.log(p)))
