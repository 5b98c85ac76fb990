import numpy as np
import pytest
import scipy.linalg

from roughsim.exact import (
    EffectiveTempQuery,
    OutOfRange,
    StateVector,
    apply_term_sum,
    effective_temperature,
    evolve_on_grid,
    hamiltonian_spectrum,
    krylov_evolve_exact,
    product_statevector,
    reduced_entropy,
    temperature_from_spectrum,
    thermal_energy,
)
from roughsim.lattice import build_square_lattice
from roughsim.models import (
    SX,
    SZ,
    ModelParams,
    TermSum,
    domain_wall_product_state,
    observable_domain_wall,
    observable_imbalance,
    tfim_hamiltonian,
)
from roughsim.tensor_core import TooLarge
from roughsim.timeseries import EvolutionConfig
from roughsim.tensor_core import TruncationSpec

PLUS = np.array([1.0, 1.0]) / np.sqrt(2)


def random_state(dim, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class TestMatvec:
    def test_sigma_z_on_up(self):
        t = TermSum((2,))
        t.add(1.0, [(0, SZ)])
        up = np.array([1.0, 0.0], dtype=complex)
        np.testing.assert_allclose(apply_term_sum(t, up), up)

    def test_matches_dense(self):
        lat = build_square_lattice(2, 2)
        h = tfim_hamiltonian(lat, ModelParams(g=0.8))
        dense = h.to_dense()
        v = random_state(16, seed=5)
        np.testing.assert_allclose(apply_term_sum(h, v), dense @ v, atol=1e-13)

    def test_linearity(self):
        lat = build_square_lattice(2, 2)
        h = tfim_hamiltonian(lat, ModelParams(g=0.8))
        u, v = random_state(16, 1), random_state(16, 2)
        lhs = apply_term_sum(h, 2.0 * u - 1j * v)
        rhs = 2.0 * apply_term_sum(h, u) - 1j * apply_term_sum(h, v)
        np.testing.assert_allclose(lhs, rhs, atol=1e-13)

    def test_constant_contributes(self):
        t = TermSum((2, 2))
        t.add(0.7)
        t.add(1.0, [(0, SX)])
        v = random_state(4, 3)
        np.testing.assert_allclose(apply_term_sum(t, v), t.to_dense() @ v, atol=1e-13)


class TestProductVector:
    def test_site_zero_slowest(self):
        up = np.array([1.0, 0.0])
        down = np.array([0.0, 1.0])
        psi = product_statevector([up, down])
        expected = np.zeros(4)
        expected[0b01] = 1.0  # site 0 is the high bit
        np.testing.assert_allclose(psi, expected)

    def test_cap(self):
        with pytest.raises(TooLarge):
            product_statevector([PLUS] * 23)


class TestEvolution:
    def test_rabi_law(self):
        """Single spin in a transverse field: <sx(t)> = cos(2 g t)."""
        h = TermSum((2,))
        h.add(-1.0, [(0, SZ)])
        obs = TermSum((2,))
        obs.add(1.0, [(0, SX)])
        cfg = EvolutionConfig(dt=0.05, t_max=3.0, truncation=TruncationSpec(chi_max=2))
        ts = krylov_evolve_exact(h, PLUS.astype(complex), cfg, {"sx": obs})
        np.testing.assert_allclose(ts["sx"], np.cos(2.0 * ts.times), atol=1e-8)

    def test_zero_field_freezes_observables(self):
        lat = build_square_lattice(2, 4)
        h = tfim_hamiltonian(lat, ModelParams(g=0.0))
        psi = product_statevector(
            [domain_wall_product_state(lat)[s] for s in range(lat.n_sites)]
        )
        cfg = EvolutionConfig(dt=0.2, t_max=2.0, truncation=TruncationSpec(chi_max=2))
        ts = krylov_evolve_exact(
            h,
            psi,
            cfg,
            {"imb": observable_imbalance(lat), "d": observable_domain_wall(lat)},
        )
        np.testing.assert_allclose(ts["imb"], 1.0, atol=1e-9)
        np.testing.assert_allclose(ts["d"], lat.lx, atol=1e-9)

    def test_matches_dense_expm(self):
        rng = np.random.default_rng(9)
        h = TermSum((2, 2, 2))
        for pair in ((0, 1), (1, 2)):
            m = rng.standard_normal((2, 2))
            h.add(0.7, [(pair[0], m + m.T), (pair[1], SX)])
        h.add(-0.4, [(1, SZ)])
        dense = h.to_dense()
        v0 = random_state(8, 4)
        times = np.linspace(0, 2.0, 9)
        records, final = evolve_on_grid(h, v0, times, tol=1e-10)
        ref = scipy.linalg.expm(-1j * times[-1] * dense) @ v0
        np.testing.assert_allclose(final, ref, atol=1e-10)

    def test_norm_and_energy_conserved(self):
        lat = build_square_lattice(2, 2)
        h = tfim_hamiltonian(lat, ModelParams(g=0.75))
        psi = product_statevector(
            [domain_wall_product_state(lat)[s] for s in range(4)]
        )
        cfg = EvolutionConfig(dt=0.5, t_max=10.0, truncation=TruncationSpec(chi_max=2))
        ts = krylov_evolve_exact(h, psi, cfg, {"e": h})
        np.testing.assert_allclose(ts["norm"], 1.0, atol=1e-10)
        assert np.max(np.abs(ts["e"] - ts["e"][0])) < 1e-9 * max(1.0, abs(ts["e"][0]))

    def test_grid_validation(self):
        h = TermSum((2,))
        h.add(1.0, [(0, SZ)])
        with pytest.raises(ValueError):
            evolve_on_grid(h, PLUS.astype(complex), [0.0, 0.0, 1.0])

    def test_callable_observable(self):
        h = TermSum((2,))
        h.add(-1.0, [(0, SZ)])
        cfg = EvolutionConfig(dt=0.1, t_max=0.5, truncation=TruncationSpec(chi_max=2))
        ts = krylov_evolve_exact(
            h, PLUS.astype(complex), cfg, {"p_up": lambda v: abs(v[0]) ** 2}
        )
        np.testing.assert_allclose(ts["p_up"], 0.5, atol=1e-9)


class TestThermal:
    def test_two_level_tanh(self):
        evals = np.array([-1.0, 1.0])
        for t in (0.3, 1.0, 5.0):
            assert abs(thermal_energy(evals, t) + np.tanh(1.0 / t)) < 1e-12

    def test_limits(self):
        lat = build_square_lattice(2, 2)
        h = tfim_hamiltonian(lat, ModelParams(g=1.0))
        evals = hamiltonian_spectrum(h)
        assert abs(thermal_energy(evals, 1e9)) < 1e-6  # traceless
        assert abs(thermal_energy(evals, 1e-6) - evals[0]) < 1e-9

    def test_term_sum_input(self):
        lat = build_square_lattice(2, 2)
        h = tfim_hamiltonian(lat, ModelParams(g=1.0))
        evals = hamiltonian_spectrum(h)
        # independent brute-force 16-term Boltzmann sum
        z = np.sum(np.exp(-evals / 1.0))
        ref = np.sum(evals * np.exp(-evals / 1.0)) / z
        assert abs(thermal_energy(h, 1.0) - ref) < 1e-12

    def test_monotone_in_temperature(self):
        lat = build_square_lattice(2, 2)
        evals = hamiltonian_spectrum(tfim_hamiltonian(lat, ModelParams(g=0.6)))
        grid = np.logspace(-2, 3, 40)
        es = [thermal_energy(evals, t) for t in grid]
        assert np.all(np.diff(es) > 0)

    def test_nonpositive_temperature(self):
        with pytest.raises(OutOfRange):
            thermal_energy(np.array([-1.0, 1.0]), 0.0)


class TestEffectiveTemperature:
    def setup_method(self):
        lat = build_square_lattice(3, 2)
        self.h = tfim_hamiltonian(lat, ModelParams(g=1.0))
        self.evals = hamiltonian_spectrum(self.h)

    def test_roundtrip(self):
        for t_true in (0.4, 1.7, 6.0):
            e = thermal_energy(self.evals, t_true)
            t_got = temperature_from_spectrum(self.evals, e, tol=1e-9)
            assert abs(t_got - t_true) < 1e-6

    def test_query_form(self):
        e = thermal_energy(self.evals, 1.3)
        q = EffectiveTempQuery(hamiltonian=self.h, e_init=e)
        assert abs(effective_temperature(q) - 1.3) < 1e-5

    def test_monotone_in_energy(self):
        targets = np.linspace(self.evals[0] * 0.9, self.evals[0] * 0.1, 6)
        temps = [temperature_from_spectrum(self.evals, e) for e in targets]
        assert np.all(np.diff(temps) > 0)

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            temperature_from_spectrum(self.evals, 0.0)  # infinite-T boundary
        with pytest.raises(OutOfRange):
            temperature_from_spectrum(self.evals, self.evals[0] - 1.0)

    def test_matches_grid_scan(self):
        e_init = thermal_energy(self.evals, 2.2)
        grid = np.linspace(0.5, 5.0, 9001)
        scan = np.array([thermal_energy(self.evals, t) for t in grid])
        t_grid = grid[np.argmin(np.abs(scan - e_init))]
        q = EffectiveTempQuery(hamiltonian=self.h, e_init=e_init)
        assert abs(effective_temperature(q) - t_grid) < 1e-3

    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            EffectiveTempQuery(hamiltonian=self.h, e_init=-1.0, t_bounds=(1.0, 0.5))


class TestReducedEntropy:
    def test_product_state(self):
        psi = product_statevector([PLUS, PLUS, PLUS])
        assert abs(reduced_entropy(psi, (2, 2, 2), [0])) < 1e-12

    def test_bell_pair(self):
        bell = np.array([1.0, 0, 0, 1.0]) / np.sqrt(2)
        assert abs(reduced_entropy(bell, (2, 2), [0]) - np.log(2)) < 1e-12

    def test_complement_symmetry(self):
        psi = random_state(2**8, seed=7)
        dims = (2,) * 8
        keep = [0, 2, 5]
        rest = [s for s in range(8) if s not in keep]
        a = reduced_entropy(psi, dims, keep)
        b = reduced_entropy(psi, dims, rest)
        assert abs(a - b) < 1e-10

    def test_state_vector_form(self):
        bell = np.array([1.0, 0, 0, 1.0]) / np.sqrt(2)
        sv = StateVector(amplitudes=bell, dims=(2, 2))
        assert abs(reduced_entropy(sv, [1]) - np.log(2)) < 1e-12

    def test_subsystem_cap(self):
        psi = random_state(2**14, seed=1)
        with pytest.raises(TooLarge):
            reduced_entropy(psi, (2,) * 14, list(range(13)))


class TestStateVectorType:
    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            StateVector(amplitudes=np.ones(3), dims=(2, 2))
