import pytest
from hypothesis import given, strategies as st

from roughsim.lattice import (
    NonPowerOfTwo,
    OddHeight,
    build_square_lattice,
    build_tree_layout,
    partition_top_bottom,
)


class TestLattice:
    def test_counts_8x8(self):
        lat = build_square_lattice(8, 8)
        assert lat.n_sites == 64
        assert len(lat.horizontal_bonds()) == 56
        assert len(lat.vertical_bonds()) == 56
        assert len(lat.bonds()) == 112
        assert len(lat.interface_bonds()) == 8

    def test_site_coords_roundtrip(self):
        lat = build_square_lattice(5, 3)
        for s in range(lat.n_sites):
            i, j = lat.coords(s)
            assert lat.site(i, j) == s

    def test_row_major_bottom_first(self):
        lat = build_square_lattice(4, 2)
        assert lat.row_sites(0) == [0, 1, 2, 3]
        assert lat.row_sites(1) == [4, 5, 6, 7]
        assert lat.column_sites(2) == [2, 6]

    def test_bonds_are_nearest_neighbor(self):
        lat = build_square_lattice(4, 4)
        for a, b in lat.bonds():
            xa, ya = lat.coords(a)
            xb, yb = lat.coords(b)
            assert abs(xa - xb) + abs(ya - yb) == 1

    def test_no_duplicate_bonds(self):
        lat = build_square_lattice(6, 4)
        bonds = lat.bonds()
        assert len(bonds) == len(set(bonds))
        assert len(bonds) == 2 * 6 * 4 - 6 - 4

    def test_column_bonds_ordered(self):
        lat = build_square_lattice(4, 4)
        cb = lat.column_bonds(1)
        assert cb == [(1, 5), (5, 9), (9, 13)]

    def test_interface_bonds_straddle_middle(self):
        lat = build_square_lattice(4, 4)
        for a, b in lat.interface_bonds():
            assert lat.coords(a)[1] == 1
            assert lat.coords(b)[1] == 2

    def test_interface_needs_even_height(self):
        with pytest.raises(OddHeight):
            build_square_lattice(4, 3).interface_bonds()

    def test_bad_extents(self):
        with pytest.raises(ValueError):
            build_square_lattice(0, 4)

    def test_out_of_range_site(self):
        lat = build_square_lattice(2, 2)
        with pytest.raises(ValueError):
            lat.site(2, 0)
        with pytest.raises(ValueError):
            lat.coords(4)


class TestPartition:
    def test_halves(self):
        lat = build_square_lattice(4, 4)
        top, bottom = partition_top_bottom(lat)
        assert sorted(top + bottom) == list(range(16))
        assert all(lat.coords(s)[1] >= 2 for s in top)
        assert all(lat.coords(s)[1] < 2 for s in bottom)

    def test_odd_height_rejected(self):
        with pytest.raises(OddHeight):
            partition_top_bottom(build_square_lattice(4, 3))


class TestTreeLayout:
    def test_8x8_shape(self):
        lay = build_tree_layout(build_square_lattice(8, 8))
        assert lay.n_nodes == 127
        assert lay.depth == 6
        assert lay.merge_axes == ("x", "y", "x", "y", "x", "y")
        assert lay.root == 126
        internal = [n for n in range(lay.n_nodes) if n in lay.children]
        assert len(internal) == 63

    def test_every_site_is_a_leaf(self):
        lat = build_square_lattice(4, 4)
        lay = build_tree_layout(lat)
        assert sorted(lay.subtree_leaves(lay.root)) == list(range(16))
        for s in range(16):
            assert lay.leaf_site[s] == s

    def test_parents_consistent(self):
        lay = build_tree_layout(build_square_lattice(4, 2))
        for node, (a, b) in lay.children.items():
            assert lay.parent[a] == node
            assert lay.parent[b] == node
        assert lay.parent[lay.root] is None

    def test_root_splits_top_from_bottom(self):
        # the last merge runs along y, so the root edge carries exactly the
        # interface bipartition the entropy probe wants
        lat = build_square_lattice(8, 8)
        lay = build_tree_layout(lat)
        a, b = lay.children[lay.root]
        rows_a = {lat.coords(s)[1] for s in lay.subtree_leaves(a)}
        rows_b = {lat.coords(s)[1] for s in lay.subtree_leaves(b)}
        assert rows_a == {0, 1, 2, 3}
        assert rows_b == {4, 5, 6, 7}

    def test_first_merge_pairs_columns(self):
        lat = build_square_lattice(4, 4)
        lay = build_tree_layout(lat)
        first_layer = [n for n in lay.children if all(c < 16 for c in lay.children[n])]
        for n in first_layer:
            a, b = lay.children[n]
            (xa, ya), (xb, yb) = lat.coords(a), lat.coords(b)
            assert ya == yb and xb == xa + 1 and xa % 2 == 0

    def test_thin_grid_forces_axis(self):
        lay = build_tree_layout(build_square_lattice(2, 8))
        assert lay.merge_axes == ("x", "y", "y", "y")
        assert lay.n_nodes == 2 * 8 * 2 - 1

    def test_non_power_of_two_rejected(self):
        with pytest.raises(NonPowerOfTwo):
            build_tree_layout(build_square_lattice(3, 4))
        with pytest.raises(NonPowerOfTwo):
            build_tree_layout(build_square_lattice(1, 1))

    @given(
        st.sampled_from([1, 2, 4, 8]),
        st.sampled_from([1, 2, 4, 8]),
        st.sampled_from(["x", "y"]),
    )
    def test_layout_is_a_binary_tree(self, lx, ly, first):
        if lx * ly < 2:
            return
        lat = build_square_lattice(lx, ly)
        lay = build_tree_layout(lat, first_merge=first)
        assert lay.n_nodes == 2 * lat.n_sites - 1
        seen = sorted(lay.subtree_leaves(lay.root))
        assert seen == list(range(lat.n_sites))
