"""Square-lattice geometry and the binary merge layout used by tree states.

Sites live on an Lx x Ly open-boundary grid, indexed row-major:
site(i, j) = j * lx + i with column i in [0, lx) and row j in [0, ly).
Row 0 is the bottom row; the domain-wall interface sits between rows
ly/2 - 1 and ly/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class NonPowerOfTwo(ValueError):
    """Grid extents must be powers of two to build the binary merge tree."""


class OddHeight(ValueError):
    """Operation needs an even number of rows (a middle interface)."""


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Lattice:
    lx: int
    ly: int

    @property
    def n_sites(self) -> int:
        return self.lx * self.ly

    def site(self, i: int, j: int) -> int:
        if not (0 <= i < self.lx and 0 <= j < self.ly):
            raise ValueError(f"site ({i}, {j}) outside {self.lx} x {self.ly} grid")
        return j * self.lx + i

    def coords(self, s: int) -> tuple[int, int]:
        if not 0 <= s < self.n_sites:
            raise ValueError(f"site index {s} out of range")
        return s % self.lx, s // self.lx

    def column_sites(self, i: int) -> list[int]:
        """Sites of column i ordered bottom to top."""
        return [self.site(i, j) for j in range(self.ly)]

    def row_sites(self, j: int) -> list[int]:
        return [self.site(i, j) for i in range(self.lx)]

    def horizontal_bonds(self) -> list[tuple[int, int]]:
        return [
            (self.site(i, j), self.site(i + 1, j))
            for j in range(self.ly)
            for i in range(self.lx - 1)
        ]

    def vertical_bonds(self) -> list[tuple[int, int]]:
        return [
            (self.site(i, j), self.site(i, j + 1))
            for j in range(self.ly - 1)
            for i in range(self.lx)
        ]

    def bonds(self) -> list[tuple[int, int]]:
        """All nearest-neighbor bonds, open boundaries."""
        return self.horizontal_bonds() + self.vertical_bonds()

    def column_bonds(self, i: int) -> list[tuple[int, int]]:
        """Vertical bonds within column i, ordered bottom to top."""
        return [(self.site(i, j), self.site(i, j + 1)) for j in range(self.ly - 1)]

    def interface_bonds(self) -> list[tuple[int, int]]:
        """Vertical bonds crossing the middle horizontal cut."""
        if self.ly % 2:
            raise OddHeight(f"ly = {self.ly} has no middle interface")
        j = self.ly // 2 - 1
        return [(self.site(i, j), self.site(i, j + 1)) for i in range(self.lx)]


def build_square_lattice(lx: int, ly: int) -> Lattice:
    if lx < 1 or ly < 1:
        raise ValueError("grid extents must be positive")
    return Lattice(lx, ly)


def partition_top_bottom(lat: Lattice) -> tuple[list[int], list[int]]:
    """Site lists (top half, bottom half) split at the middle row."""
    if lat.ly % 2:
        raise OddHeight(f"ly = {lat.ly} cannot be split into equal halves")
    half = lat.ly // 2
    top = [s for j in range(half, lat.ly) for s in lat.row_sites(j)]
    bottom = [s for j in range(half) for s in lat.row_sites(j)]
    return top, bottom


@dataclass(frozen=True)
class TreeLayout:
    """Binary merge tree over a lattice.

    Leaves are nodes 0 .. n_sites-1 (leaf id == site id); internal nodes
    follow in merge order, the root last. `merge_axes` records the merge
    direction of each layer, alternating between x and y whenever both
    directions still have more than one block.
    """

    lattice: Lattice
    children: dict[int, tuple[int, int]]
    parent: dict[int, int | None]
    leaf_site: dict[int, int]
    merge_axes: tuple[str, ...]
    root: int
    n_nodes: int
    depth: int = field(default=0)

    def subtree_leaves(self, node: int) -> list[int]:
        if node not in self.children:
            return [node]
        a, b = self.children[node]
        return self.subtree_leaves(a) + self.subtree_leaves(b)


def build_tree_layout(lat: Lattice, first_merge: str = "x") -> TreeLayout:
    """Pairwise merge layout: blocks fuse along alternating axes.

    With first_merge = "x", columns pair up first (blocks 2k and 2k+1 along
    x), then the merged blocks pair along y, and so on until one block spans
    the grid. Each non-trivial layer requires the current block count along
    its axis to be even, hence the power-of-two constraint.
    """
    if first_merge not in ("x", "y"):
        raise ValueError("first_merge must be 'x' or 'y'")
    if not (_is_pow2(lat.lx) and _is_pow2(lat.ly)):
        raise NonPowerOfTwo(f"{lat.lx} x {lat.ly} grid does not pair down to one block")
    if lat.n_sites < 2:
        raise NonPowerOfTwo("need at least two sites to build a tree")

    blocks = {(i, j): lat.site(i, j) for i in range(lat.lx) for j in range(lat.ly)}
    nbx, nby = lat.lx, lat.ly
    children: dict[int, tuple[int, int]] = {}
    parent: dict[int, int | None] = {}
    axes: list[str] = []
    next_id = lat.n_sites
    prefer = first_merge
    while nbx * nby > 1:
        axis = prefer
        if axis == "x" and nbx == 1:
            axis = "y"
        if axis == "y" and nby == 1:
            axis = "x"
        new_blocks = {}
        if axis == "x":
            nbx //= 2
            for bj in range(nby):
                for bi in range(nbx):
                    a = blocks[(2 * bi, bj)]
                    b = blocks[(2 * bi + 1, bj)]
                    children[next_id] = (a, b)
                    parent[a] = next_id
                    parent[b] = next_id
                    new_blocks[(bi, bj)] = next_id
                    next_id += 1
        else:
            nby //= 2
            for bj in range(nby):
                for bi in range(nbx):
                    a = blocks[(bi, 2 * bj)]
                    b = blocks[(bi, 2 * bj + 1)]
                    children[next_id] = (a, b)
                    parent[a] = next_id
                    parent[b] = next_id
                    new_blocks[(bi, bj)] = next_id
                    next_id += 1
        blocks = new_blocks
        axes.append(axis)
        prefer = "y" if axis == "x" else "x"
    root = blocks[(0, 0)]
    parent[root] = None
    leaf_site = {s: s for s in range(lat.n_sites)}
    return TreeLayout(
        lattice=lat,
        children=children,
        parent=parent,
        leaf_site=leaf_site,
        merge_axes=tuple(axes),
        root=root,
        n_nodes=next_id,
        depth=len(axes),
    )
