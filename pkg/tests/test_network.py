import numpy as np
import pytest

from roughsim.exact import product_statevector, reduced_entropy
from roughsim.lattice import build_square_lattice, build_tree_layout
from roughsim.models import (
    KinkSpec,
    domain_wall_product_state,
    kink_operator,
    kink_statevector_value,
    observable_domain_wall,
    observable_imbalance,
    tfim_hamiltonian,
    ModelParams,
)
from roughsim.network import (
    BadLocalState,
    mps_from_tensors,
    mps_product_state,
    ttn_product_state,
)
from roughsim.tensor_core import TooLarge, TruncationSpec

PLUS = np.array([1.0, 1.0]) / np.sqrt(2)
UP = np.array([1.0, 0.0])


def dw_state_4x4(chi=8, noise=1e-12):
    lat = build_square_lattice(4, 4)
    lay = build_tree_layout(lat)
    locs = domain_wall_product_state(lat)
    st = ttn_product_state(lay, locs, TruncationSpec(chi_max=chi), pad_noise=noise)
    return lat, st, locs


def generic_state(chi=6, noise=0.05, seed=2):
    """Weakly entangled non-product state: noisy padding then renormalize."""
    lat = build_square_lattice(4, 4)
    lay = build_tree_layout(lat)
    rng = np.random.default_rng(seed)
    locs = {}
    for s in range(16):
        v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        locs[s] = v / np.linalg.norm(v)
    st = ttn_product_state(lay, locs, TruncationSpec(chi_max=chi), pad_noise=noise)
    return lat, st


def isometry_residual(state):
    """Max deviation of non-center tensors from isometries toward the center."""
    worst = 0.0
    for nid, t in state.tensors.items():
        if nid == state.center:
            continue
        toward = state.next_hop(nid, state.center)
        leg = state.leg(nid, toward)
        axes = [ax for ax in range(t.ndim) if ax != leg]
        mat = np.tensordot(t.conj(), t, (axes, axes))
        worst = max(worst, np.max(np.abs(mat - np.eye(mat.shape[0]))))
    return worst


class TestProductConstruction:
    def test_statevector_matches_kron_exactly(self):
        lat, st, locs = dw_state_4x4(noise=0.0)
        psi = st.to_statevector()
        ref = product_statevector([locs[s] for s in range(16)])
        # global phase is fixed by construction; compare directly
        assert np.max(np.abs(psi - ref)) < 1e-14

    def test_statevector_with_default_noise(self):
        lat, st, locs = dw_state_4x4(noise=1e-12)
        psi = st.to_statevector()
        ref = product_statevector([locs[s] for s in range(16)])
        assert np.max(np.abs(psi - ref)) < 1e-9

    def test_padding_leaves_observables_exact(self):
        """Padded-in directions carry zero weight: expectations are unchanged."""
        from roughsim.exact import apply_term_sum

        lat, st, locs = dw_state_4x4(noise=0.0)
        ref = product_statevector([locs[s] for s in range(16)])
        imb = observable_imbalance(lat)
        want = np.vdot(ref, apply_term_sum(imb, ref)).real
        got = sum(
            coeff * st.expect_product({s: imb.mat(m) for s, m in term_ops})
            for coeff, term_ops in imb.terms
        ).real
        assert got == pytest.approx(want, abs=1e-13)

    def test_noise_restricted_to_padding(self):
        # first-order cross terms vanish, so even with noise the product
        # values survive far below the noise scale
        lat, st, locs = dw_state_4x4(chi=8, noise=1e-6)
        val = st.expect_product({0: np.array([[0.0, 1.0], [1.0, 0.0]])})
        assert abs(val.real + 1.0) < 1e-10

    def test_norm_one(self):
        _, st, _ = dw_state_4x4()
        assert st.norm() == pytest.approx(1.0, abs=1e-12)

    def test_bond_dims_respect_caps(self):
        lat, st, _ = dw_state_4x4(chi=8)
        lay = st.layout
        for a in st.neighbors:
            for b in st.neighbors[a]:
                if a < b:
                    n_in = bin(st.side_sites(b, a)).count("1")
                    cap = min(2**n_in, 2 ** (16 - n_in), 8)
                    assert st.bond_dim(a, b) == cap

    def test_bad_local_state(self):
        lat = build_square_lattice(2, 2)
        lay = build_tree_layout(lat)
        locs = {s: UP for s in range(4)}
        locs[2] = np.zeros(2)
        with pytest.raises(BadLocalState):
            ttn_product_state(lay, locs, TruncationSpec(chi_max=4))
        # chains declare their dimensions up front, so size mismatches are caught
        with pytest.raises(BadLocalState):
            mps_product_state(
                (2, 2), {0: UP, 1: np.ones(3)}, TruncationSpec(chi_max=2)
            )


class TestCanonicalForm:
    def test_isometries_toward_center(self):
        _, st = generic_state()
        assert isometry_residual(st) < 1e-10

    def test_center_carries_norm(self):
        _, st = generic_state()
        t = st.tensors[st.center]
        assert np.linalg.norm(t) == pytest.approx(st.norm(), abs=1e-12)

    def test_move_center_preserves_state(self):
        _, st = generic_state()
        before = st.to_statevector()
        st.move_center(3)
        assert st.center == 3
        assert isometry_residual(st) < 1e-10
        after = st.to_statevector()
        assert np.max(np.abs(before - after)) < 1e-12

    def test_move_center_round_trip(self):
        _, st = generic_state()
        start = st.center
        before = st.to_statevector()
        for target in (0, 7, 25, start):
            st.move_center(target)
        after = st.to_statevector()
        assert np.max(np.abs(before - after)) < 1e-12

    def test_canonicalize_idempotent(self):
        _, st = generic_state()
        before = st.to_statevector()
        st.canonicalize(st.center)
        assert np.max(np.abs(before - st.to_statevector())) < 1e-12


class TestExpectations:
    def test_product_ops_vs_dense(self):
        lat, st = generic_state()
        psi = st.to_statevector()
        rng = np.random.default_rng(8)
        ops = {}
        for site in (0, 5, 11):
            m = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
            ops[site] = m
        got = st.expect_product(ops)
        ref = psi.copy().reshape([2] * 16)
        for site, m in ops.items():
            ref = np.tensordot(m, ref, (1, site))
            ref = np.moveaxis(ref, 0, site)
        ref_val = np.vdot(psi, ref.reshape(-1))
        assert abs(got - ref_val) < 1e-11

    def test_empty_ops_gives_norm_squared(self):
        _, st = generic_state()
        assert st.expect_product({}) == pytest.approx(st.norm() ** 2, abs=1e-12)

    def test_gate_product_vs_dense(self):
        lat, st = generic_state()
        psi = st.to_statevector()
        spec = KinkSpec(alpha=0.9)
        got = st.expect_gate_product(
            __import__("roughsim.models", fromlist=["kink_gates"]).kink_gates(lat, spec)
        )
        ref = kink_statevector_value(lat, spec, psi)
        assert abs(got.real - ref) < 1e-11

    def test_kink_operator_dispatch_2d(self):
        lat, st = generic_state()
        psi = st.to_statevector()
        spec = KinkSpec(alpha=1.0, l=3)
        got = kink_operator(st, spec, "2D")
        ref = kink_statevector_value(lat, spec, psi)
        assert abs(got - ref) < 1e-11

    def test_kink_flat_interface_is_one(self):
        lat, st, _ = dw_state_4x4()
        assert kink_operator(st, KinkSpec(alpha=1.0), "2D") == pytest.approx(
            1.0, abs=1e-10
        )


class TestEntropy:
    def test_bond_entropy_vs_dense(self):
        lat, st = generic_state()
        lay = st.layout
        a, b = lay.children[lay.root]
        psi = st.to_statevector()
        psi = psi / np.linalg.norm(psi)
        keep = lay.subtree_leaves(a)
        ref = reduced_entropy(psi, (2,) * 16, keep)
        got = st.bond_entropy(a, lay.root)
        assert abs(got - ref) < 1e-10

    def test_product_state_entropy_zero(self):
        _, st, _ = dw_state_4x4(noise=0.0)
        lay = st.layout
        a, _ = lay.children[lay.root]
        assert st.bond_entropy(a, lay.root) < 1e-12

    def test_schmidt_spectrum_normalized(self):
        _, st = generic_state()
        lay = st.layout
        a, b = lay.children[lay.root]
        s = st.schmidt_spectrum(a, lay.root)
        assert np.sum(s**2) == pytest.approx(st.norm() ** 2, rel=1e-10)


class TestStatevectorOrdering:
    def test_matches_kron_convention(self):
        # site 0 is the slowest index in both engines
        lat = build_square_lattice(2, 2)
        lay = build_tree_layout(lat)
        locs = {0: UP, 1: PLUS, 2: PLUS, 3: UP}
        st = ttn_product_state(lay, locs, TruncationSpec(chi_max=4), pad_noise=0.0)
        ref = product_statevector([locs[s] for s in range(4)])
        assert np.max(np.abs(st.to_statevector() - ref)) < 1e-14

    def test_too_large_guard(self):
        lat = build_square_lattice(8, 8)
        lay = build_tree_layout(lat)
        locs = domain_wall_product_state(lat)
        st = ttn_product_state(lay, locs, TruncationSpec(chi_max=2), pad_noise=0.0)
        with pytest.raises(TooLarge):
            st.to_statevector()


class TestPersistence:
    def test_save_load_roundtrip(self, tmp_path):
        _, st = generic_state()
        p = tmp_path / "state.npz"
        st.save(p)
        from roughsim.network import TreeState

        back = TreeState.load(p)
        assert np.max(np.abs(back.to_statevector() - st.to_statevector())) < 1e-13
        assert back.center == st.center


class TestMPS:
    def test_product_state_matches_kron(self):
        locs = {0: UP, 1: PLUS, 2: UP, 3: PLUS}
        st = mps_product_state((2, 2, 2, 2), locs, TruncationSpec(chi_max=4), 0.0)
        ref = product_statevector([locs[s] for s in range(4)])
        assert np.max(np.abs(st.to_statevector() - ref)) < 1e-14

    def test_from_tensors_convention(self):
        # (left, phys, right) with dummy edges, a two-site singlet-like state
        a = np.zeros((1, 2, 2))
        a[0, 0, 0] = 1.0
        a[0, 1, 1] = 1.0
        b = np.zeros((2, 2, 1))
        b[0, 1, 0] = 1.0
        b[1, 0, 0] = -1.0
        st = mps_from_tensors([a, b], center=1)
        psi = st.to_statevector()
        ref = np.array([0.0, 1.0, -1.0, 0.0])
        assert np.max(np.abs(psi - ref)) < 1e-14

    def test_expectations_on_chain(self):
        rng = np.random.default_rng(4)
        locs = {}
        for i in range(6):
            v = rng.standard_normal(3) + 1j * rng.standard_normal(3)
            locs[i] = v / np.linalg.norm(v)
        st = mps_product_state((3,) * 6, locs, TruncationSpec(chi_max=5), 1e-12)
        ref = product_statevector([locs[s] for s in range(6)])
        m = rng.standard_normal((3, 3))
        got = st.expect_product({2: m})
        want = np.vdot(ref, _apply(ref, (3,) * 6, 2, m))
        assert abs(got - want) < 1e-10

    def test_center_moves_along_chain(self):
        locs = {i: PLUS for i in range(5)}
        st = mps_product_state((2,) * 5, locs, TruncationSpec(chi_max=4), 1e-12)
        before = st.to_statevector()
        st.move_center(0)
        assert np.max(np.abs(before - st.to_statevector())) < 1e-12


def _apply(v, dims, site, mat):
    t = v.reshape(dims)
    t = np.tensordot(mat, t, (1, site))
    return np.moveaxis(t, 0, site).reshape(-1)
