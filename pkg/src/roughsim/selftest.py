"""Fast invariant sweep across the library for the selftest subcommand.

Each check re-derives a known-good fact from scratch (closed forms,
brute force at toy sizes) so a broken install or numerical stack fails
here in seconds instead of hours into a scan.
"""

from __future__ import annotations

import itertools
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .classical import TransferSpec, analytic_eigenpairs, kink_end_to_end, transfer_matrix
from .dmrg import dmrg_ground_state, fit_bkt, fit_correlation_length
from .exact import (
    hamiltonian_spectrum,
    krylov_evolve_exact,
    product_statevector,
    term_sum_matvec,
    term_sum_sparse,
    temperature_from_spectrum,
    thermal_energy,
)
from .lattice import build_square_lattice, build_tree_layout
from .models import (
    ModelParams,
    SOSParams,
    domain_wall_product_state,
    observable_imbalance,
    sos_hamiltonian,
    sos_mpo,
    tfim_hamiltonian,
)
from .network import ttn_product_state
from .tdvp import EvolutionRun, evolve
from .tensor_core import TruncationSpec, svd_split
from .timeseries import EvolutionConfig, TimeSeries


def _check_svd_split_reconstructs():
    rng = np.random.default_rng(7)
    t = rng.normal(size=(4, 3, 5)) + 1j * rng.normal(size=(4, 3, 5))
    u, s, vh, lost = svd_split(t, (0, 1), TruncationSpec(chi_max=64, cutoff=0.0))
    back = np.einsum("abk,k,kc->abc", u, s, vh)
    assert lost <= 1e-24, f"full-rank split discarded weight {lost}"
    err = np.max(np.abs(back - t))
    assert err <= 1e-12, f"split does not reconstruct the tensor: {err}"


def _check_lattice_bookkeeping():
    lat = build_square_lattice(4, 4)
    assert len(lat.bonds()) == 24, "4x4 open grid must have 24 bonds"
    assert len(lat.interface_bonds()) == 4
    layout = build_tree_layout(lat)
    leaves = sorted(layout.leaf_site.values())
    assert leaves == list(range(16)), "tree leaves must cover every site once"


def _check_hamiltonian_is_hermitian():
    lat = build_square_lattice(2, 3)
    ham = tfim_hamiltonian(lat, ModelParams(g=0.8, j=1.0))
    assert len(ham.terms) == len(lat.bonds()) + lat.n_sites
    mat = term_sum_sparse(ham).toarray()
    assert np.max(np.abs(mat - mat.conj().T)) <= 1e-14, "tfim matrix not hermitian"


def _check_quench_matches_dense_propagator():
    lat = build_square_lattice(2, 2)
    ham = tfim_hamiltonian(lat, ModelParams(g=1.0, j=1.0))
    dw = domain_wall_product_state(lat)
    v0 = product_statevector([dw[s] for s in range(lat.n_sites)])
    obs = observable_imbalance(lat)
    ts = krylov_evolve_exact(
        ham, v0, EvolutionConfig(dt=0.25, t_max=1.0), observables={"imbalance": obs}
    )
    lam, vecs = np.linalg.eigh(term_sum_sparse(ham).toarray())
    v1 = vecs @ (np.exp(-1j * lam) * (vecs.conj().T @ v0))
    ref = float(np.real(np.vdot(v1, term_sum_matvec(obs)(v1))))
    err = abs(ts["imbalance"][-1] - ref)
    assert err <= 1e-8, f"krylov vs dense propagator disagree by {err}"


def _check_evolution_conserves_norm_and_energy():
    lat = build_square_lattice(2, 2)
    ham = tfim_hamiltonian(lat, ModelParams(g=0.6, j=1.0))
    trunc = TruncationSpec(chi_max=16, cutoff=0.0)
    state = ttn_product_state(build_tree_layout(lat), domain_wall_product_state(lat), trunc)
    cfg = EvolutionConfig(dt=0.05, t_max=1.0, truncation=trunc)
    ts = evolve(state, EvolutionRun(hamiltonian=ham, config=cfg))
    norm_err = np.max(np.abs(ts["norm"] - 1.0))
    assert norm_err <= 1e-10, f"norm drift {norm_err}"
    e = ts["energy"]
    drift = np.max(np.abs(e - e[0])) / max(1.0, abs(e[0]))
    assert drift <= 1e-9, f"energy drift {drift}"


def _check_thermal_energy_increases():
    lat = build_square_lattice(2, 2)
    lam = hamiltonian_spectrum(tfim_hamiltonian(lat, ModelParams(g=1.0, j=1.0)))
    grid = [thermal_energy(lam, t) for t in (0.2, 0.5, 1.0, 2.0, 5.0, 20.0)]
    assert np.all(np.diff(grid) > 0), "canonical energy must increase with T"
    target = 0.6 * lam.min()
    t_cross = temperature_from_spectrum(lam, target)
    res = abs(thermal_energy(lam, t_cross) - target)
    assert res <= 1e-5 * abs(target), f"bisection residual {res}"


def _check_ground_state_matches_dense():
    params = SOSParams(lx=4, n_max=2, g=0.7, j=1.0)
    res = dmrg_ground_state(sos_mpo(params), chi=16)
    lam = np.linalg.eigvalsh(term_sum_sparse(sos_hamiltonian(params)).toarray())
    err = abs(res.energy - lam[0])
    assert err <= 1e-8, f"dmrg energy off dense ground state by {err}"
    assert res.variance <= 1e-6, f"energy variance {res.variance}"


def _check_transfer_kink_matches_brute_force():
    q, m, lx, alpha = 0.45, 3, 4, 1.2
    got = kink_end_to_end(TransferSpec(q=q, m=m, lx=lx, alpha=alpha))
    num = den = 0.0
    for heights in itertools.product(range(m), repeat=lx):
        w = q ** sum(abs(a - b) for a, b in zip(heights, heights[1:]))
        num += w * np.cos(alpha * (heights[-1] - heights[0]))
        den += w
    err = abs(got - num / den)
    assert err <= 1e-12, f"eigenbasis kink vs enumeration differ by {err}"


def _check_transfer_spectrum_matches_dense():
    system = analytic_eigenpairs(0.6, 12)
    lam = np.linalg.eigvalsh(transfer_matrix(0.6, 12))[::-1]
    err = np.max(np.abs(system.lam - lam))
    assert err <= 1e-10, f"closed-form spectrum off dense by {err}"


def _check_fits_recover_planted_values():
    l = np.arange(1.0, 40.0)
    fit = fit_correlation_length(l, 0.8 * np.exp(-l / 5.0) + 0.1)
    assert abs(fit.xi - 5.0) <= 0.05, f"xi {fit.xi} vs planted 5.0"
    g = np.arange(1.00, 1.33, 0.02)
    xi = 0.08 * np.exp(1.1 / np.sqrt(1.38 - g))
    bkt = fit_bkt(g, xi, window=(1.05, 1.33))
    assert abs(bkt.g_r - 1.38) <= 0.01, f"g_r {bkt.g_r} vs planted 1.38"


def _check_csv_roundtrip_is_lossless():
    ts = TimeSeries(
        np.array([0.0, 1 / 3, 2 / 3]),
        {"a": np.array([np.pi, -np.e, 1e-17]), "b": np.array([1.0, 2.0, 3.0])},
        {"label": "selftest"},
    )
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "roundtrip.csv"
        ts.to_csv(path)
        back = TimeSeries.from_csv(path)
    assert np.array_equal(back.times, ts.times), "time column not bit-identical"
    for k in ts.columns:
        assert np.array_equal(back[k], ts[k]), f"column {k} not bit-identical"


CHECKS = [
    ("svd split reconstructs at full rank", _check_svd_split_reconstructs),
    ("lattice bond and tree bookkeeping", _check_lattice_bookkeeping),
    ("spin hamiltonian is hermitian", _check_hamiltonian_is_hermitian),
    ("krylov quench matches dense propagator", _check_quench_matches_dense_propagator),
    ("evolution conserves norm and energy", _check_evolution_conserves_norm_and_energy),
    ("thermal energy increases with T", _check_thermal_energy_increases),
    ("ground state matches dense diagonalization", _check_ground_state_matches_dense),
    ("transfer kink matches brute force", _check_transfer_kink_matches_brute_force),
    ("transfer spectrum matches dense", _check_transfer_spectrum_matches_dense),
    ("fitters recover planted parameters", _check_fits_recover_planted_values),
    ("csv roundtrip is lossless", _check_csv_roundtrip_is_lossless),
]


def run_selftest(stream=None) -> int:
    """Run every check; report one line each; return the failure count."""
    stream = sys.stderr if stream is None else stream
    failures = 0
    for name, check in CHECKS:
        t0 = time.perf_counter()
        try:
            check()
        except Exception as exc:
            failures += 1
            print(f"FAIL {name}: {exc!r}", file=stream, flush=True)
        else:
            print(f"ok   {name} ({time.perf_counter() - t0:.2f}s)", file=stream, flush=True)
    return failures
