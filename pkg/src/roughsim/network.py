"""Loop-free tensor-network states with a movable orthogonality center.

One engine covers both state families: the binary tree over a 2D lattice
(physical legs on the leaves) and the open chain (physical leg on every
node). Tensor legs are ordered as the node's neighbor list, with the
physical leg last when present. All tensors except the center are
isometries pointing toward the center.
"""

from __future__ import annotations

import json

import numpy as np

from .lattice import TreeLayout
from .tensor_core import (
    ShapeMismatch,
    TooLarge,
    TruncationSpec,
    entropy_from_spectrum,
    qr_isometrize,
)


class BadLocalState(ValueError):
    """A local state vector has the wrong dimension or zero norm."""


_STATEVECTOR_CAP = 1 << 22


def apply_leg_matrix(t: np.ndarray, mat: np.ndarray, leg: int) -> np.ndarray:
    """out[..., o, ...] = sum_i mat[o, i] t[..., i, ...] on the given leg."""
    if mat.shape[1] != t.shape[leg]:
        raise ShapeMismatch(f"matrix {mat.shape} vs leg extent {t.shape[leg]}")
    # first/last legs reduce to a single gemm without copies
    if leg == 0:
        return (mat @ t.reshape(t.shape[0], -1)).reshape((mat.shape[0],) + t.shape[1:])
    if leg == t.ndim - 1:
        out = t.reshape(-1, t.shape[-1]) @ mat.T
        return out.reshape(t.shape[:-1] + (mat.shape[0],))
    out = np.tensordot(mat, t, (1, leg))
    return np.moveaxis(out, 0, leg)


def env_through(t: np.ndarray, ins: dict[int, np.ndarray], out_leg: int) -> np.ndarray:
    """Environment matrix (out, in) of conj(t) [insertions] t across one leg."""
    tt = t
    for leg, mat in ins.items():
        tt = apply_leg_matrix(tt, mat, leg)
    axes = tuple(ax for ax in range(t.ndim) if ax != out_leg)
    return np.tensordot(t.conj(), tt, (axes, axes))


class TreeState:
    """Mutable network state over a fixed loop-free topology."""

    def __init__(self, neighbors, phys_site, dims, tensors, center, sweep_root):
        self.neighbors = {n: tuple(v) for n, v in neighbors.items()}
        self.phys_site = dict(phys_site)  # node -> site index or None
        self.dims = tuple(int(d) for d in dims)
        self.tensors = dict(tensors)
        self.center = center
        self.sweep_root = sweep_root
        self.site_node = {s: n for n, s in self.phys_site.items() if s is not None}
        self._leg = {
            n: {nb: i for i, nb in enumerate(nbrs)} for n, nbrs in self.neighbors.items()
        }
        self._mutation_hooks: list = []
        self._build_topology()

    # -- topology ---------------------------------------------------------

    def _build_topology(self):
        ids = sorted(self.neighbors)
        if ids != list(range(len(ids))):
            raise ValueError("node ids must be dense 0..K-1")
        k = len(ids)
        self.n_nodes = k
        hop = np.full((k, k), -1, dtype=np.int32)
        for src in range(k):
            hop[src][src] = src
            stack = [(src, src)]
            seen = {src}
            while stack:
                node, first = stack.pop()
                for nb in self.neighbors[node]:
                    if nb in seen:
                        continue
                    seen.add(nb)
                    step = nb if node == src else first
                    hop[src][nb] = step
                    stack.append((nb, step))
        self._hop = hop
        # per directed edge: bitmask of nodes / sites on the tail's side
        root = 0
        parent = {root: None}
        order = [root]
        for node in order:
            for nb in self.neighbors[node]:
                if nb not in parent:
                    parent[nb] = node
                    order.append(nb)
        sub_nodes = {n: 1 << n for n in range(k)}
        sub_sites = {
            n: (1 << self.phys_site[n]) if self.phys_site[n] is not None else 0
            for n in range(k)
        }
        for node in reversed(order):
            p = parent[node]
            if p is not None:
                sub_nodes[p] |= sub_nodes[node]
                sub_sites[p] |= sub_sites[node]
        all_nodes = (1 << k) - 1
        all_sites = (1 << len(self.dims)) - 1
        self._side_nodes = {}
        self._side_sites = {}
        for a in range(k):
            for b in self.neighbors[a]:
                if parent[a] == b:
                    self._side_nodes[(a, b)] = sub_nodes[a]
                    self._side_sites[(a, b)] = sub_sites[a]
                else:
                    self._side_nodes[(a, b)] = all_nodes ^ sub_nodes[b]
                    self._side_sites[(a, b)] = all_sites ^ sub_sites[b]

    def leg(self, node: int, nb: int) -> int:
        return self._leg[node][nb]

    def phys_leg(self, node: int) -> int:
        if self.phys_site[node] is None:
            raise ValueError(f"node {node} carries no physical leg")
        return len(self.neighbors[node])

    def next_hop(self, a: int, b: int) -> int:
        return int(self._hop[a][b])

    def path(self, a: int, b: int) -> list[int]:
        out = [a]
        while out[-1] != b:
            out.append(self.next_hop(out[-1], b))
        return out

    def side_nodes(self, a: int, b: int) -> int:
        return self._side_nodes[(a, b)]

    def side_sites(self, a: int, b: int) -> int:
        return self._side_sites[(a, b)]

    def node_of_site(self, site: int) -> int:
        return self.site_node[site]

    def bond_dim(self, a: int, b: int) -> int:
        return self.tensors[a].shape[self.leg(a, b)]

    # -- mutation ---------------------------------------------------------

    def add_mutation_hook(self, fn):
        self._mutation_hooks.append(fn)

    def set_tensor(self, node: int, arr: np.ndarray):
        self.tensors[node] = arr
        for fn in self._mutation_hooks:
            fn(node)

    def copy(self) -> "TreeState":
        out = object.__new__(type(self))
        out.__dict__.update(self.__dict__)
        out.tensors = {n: t.copy() for n, t in self.tensors.items()}
        out._mutation_hooks = []
        return out

    def norm(self) -> float:
        t = self.tensors[self.center]
        return float(np.sqrt(np.vdot(t, t).real))

    def normalize(self):
        n = self.norm()
        if n == 0:
            raise ValueError("zero-norm state")
        self.set_tensor(self.center, self.tensors[self.center] / n)

    def split_toward(self, a: int, b: int) -> np.ndarray:
        """QR the tensor at a, isolating the leg toward b; a becomes isometric.

        Returns r with legs (new bond at a, old bond toward b). The caller
        decides where r goes.
        """
        leg_b = self.leg(a, b)
        t = self.tensors[a]
        kept = tuple(ax for ax in range(t.ndim) if ax != leg_b)
        q, r = qr_isometrize(t, kept)
        q = np.moveaxis(q, -1, leg_b)
        self.set_tensor(a, q)
        return r

    def absorb_bond(self, r: np.ndarray, from_node: int, into: int):
        """Contract r (new bond, old bond) into `into`'s leg toward from_node."""
        leg = self.leg(into, from_node)
        self.set_tensor(into, apply_leg_matrix(self.tensors[into], r, leg))

    def move_center(self, target: int):
        while self.center != target:
            nxt = self.next_hop(self.center, target)
            r = self.split_toward(self.center, nxt)
            self.absorb_bond(r, self.center, nxt)
            self.center = nxt

    def canonicalize(self, center: int):
        """Fresh QR sweep toward `center` from the outside in."""
        dist = {center: 0}
        order = [center]
        for node in order:
            for nb in self.neighbors[node]:
                if nb not in dist:
                    dist[nb] = dist[node] + 1
                    order.append(nb)
        for node in sorted(dist, key=lambda n: -dist[n]):
            if node == center:
                continue
            nxt = self.next_hop(node, center)
            r = self.split_toward(node, nxt)
            self.absorb_bond(r, node, nxt)
        self.center = center

    # -- measurement ------------------------------------------------------

    def expect_product(self, ops: dict[int, np.ndarray]) -> complex:
        """<state| prod_site O_site |state> for single-site operators.

        Subtrees without insertions contract to the identity by the canonical
        form, so only branches touching `ops` cost anything.
        """
        for site, mat in ops.items():
            d = self.dims[site]
            if np.shape(mat) != (d, d):
                raise ShapeMismatch(f"operator at site {site} has shape {np.shape(mat)}")
        touched = 0
        for site in ops:
            touched |= 1 << site
        c = self.center
        t = self.tensors[c]
        tt = t
        for nb in self.neighbors[c]:
            env = self._product_env(nb, c, ops, touched)
            if env is not None:
                tt = apply_leg_matrix(tt, env, self.leg(c, nb))
        sc = self.phys_site[c]
        if sc is not None and sc in ops:
            tt = apply_leg_matrix(tt, np.asarray(ops[sc]), self.phys_leg(c))
        return complex(np.vdot(t, tt))

    def _product_env(self, a, b, ops, touched):
        if not (self.side_sites(a, b) & touched):
            return None
        ins = {}
        for nb in self.neighbors[a]:
            if nb == b:
                continue
            env = self._product_env(nb, a, ops, touched)
            if env is not None:
                ins[self.leg(a, nb)] = env
        site = self.phys_site[a]
        if site is not None and site in ops:
            ins[self.phys_leg(a)] = np.asarray(ops[site])
        return env_through(self.tensors[a], ins, self.leg(a, b))

    # gate products -------------------------------------------------------

    def expect_gate_product(self, gates) -> complex:
        """Expectation of an ordered product of factorized two-site gates.

        Each gate is (site_a, site_b, channels) with channels a list of
        (weight, A, B), meaning the gate sum_c w_c A_c(site_a) B_c(site_b).
        When gates share a site, halves multiply in gate order (lower index
        to the left). Channel choices of gates crossing a tree edge are
        tracked in keyed environments, so the cost stays polynomial as long
        as few gates cross any one cut (true for column-local gate strings).
        """
        gates = [(sa, sb, list(ch)) for sa, sb, ch in gates]
        for sa, sb, _ in gates:
            if sa == sb:
                raise ValueError("gate endpoints must be distinct sites")
        c = self.center
        child_envs = [self._gate_env(nb, c, gates) for nb in self.neighbors[c]]
        t = self.tensors[c]
        total = 0.0 + 0.0j
        for key, ins, weight in self._gate_branches(c, None, gates, child_envs):
            if key:
                raise RuntimeError("gate left dangling at the tree top")
            tt = t
            for leg, mat in ins.items():
                tt = apply_leg_matrix(tt, mat, leg)
            total += weight * np.vdot(t, tt)
        return complex(total)

    def _gate_env(self, a, b, gates):
        here = self.side_sites(a, b)
        if not any((here >> sa) & 1 or (here >> sb) & 1 for sa, sb, _ in gates):
            return {(): None}  # no gate touches this subtree
        child_envs = [
            self._gate_env(nb, a, gates) for nb in self.neighbors[a] if nb != b
        ]
        t = self.tensors[a]
        leg_b = self.leg(a, b)
        out: dict = {}
        for key, ins, weight in self._gate_branches(a, b, gates, child_envs):
            mat = weight * env_through(t, ins, leg_b)
            if key in out:
                out[key] = out[key] + mat
            else:
                out[key] = mat
        return out

    def _gate_branches(self, a, b, gates, child_envs):
        """Merge child channel environments with local gate halves at node a.

        Yields (key, insertions, weight): key lists (gate, channel) pairs for
        gates with exactly one endpoint on a's side of (a, b); insertions map
        legs of a's tensor to matrices (identity legs omitted).
        """
        others = [nb for nb in self.neighbors[a] if nb != b]
        site = self.phys_site[a]
        local = []
        if site is not None:
            for gk, (sa, sb, _) in enumerate(gates):
                if sa == site:
                    local.append((gk, True))
                elif sb == site:
                    local.append((gk, False))
        here = self.side_sites(a, b) if b is not None else (1 << len(self.dims)) - 1

        def merge_children(i, assign, ins, weight):
            if i == len(child_envs):
                yield from place_local(assign, ins, weight)
                return
            leg = self.leg(a, others[i])
            for key, mat in child_envs[i].items():
                merged = dict(assign)
                ok = True
                for gk, ch in key:
                    if merged.get(gk, ch) != ch:
                        ok = False
                        break
                    merged[gk] = ch
                if not ok:
                    continue
                ins2 = dict(ins)
                if mat is not None:
                    ins2[leg] = mat
                yield from merge_children(i + 1, merged, ins2, weight)

        def place_local(assign, ins, weight):
            pending = [gk for gk, _ in local if gk not in assign]
            if pending:
                gk = pending[0]
                for ch in range(len(gates[gk][2])):
                    assign2 = dict(assign)
                    assign2[gk] = ch
                    yield from place_local(assign2, ins, weight)
                return
            mat = None
            w = weight
            for gk, is_a in local:
                wc, amat, bmat = gates[gk][2][assign[gk]]
                half = amat if is_a else bmat
                if is_a:
                    w = w * wc  # each gate's weight rides with its A half
                mat = half if mat is None else mat @ half
            ins2 = ins
            if mat is not None:
                ins2 = dict(ins)
                ins2[self.phys_leg(a)] = mat
            key = []
            for gk in sorted(assign):
                sa, sb, _ = gates[gk]
                if bool((here >> sa) & 1) != bool((here >> sb) & 1):
                    key.append((gk, assign[gk]))
            yield tuple(key), ins2, w

        yield from merge_children(0, {}, {}, 1.0 + 0.0j)

    # entropy and dense form ------------------------------------------------

    def schmidt_spectrum(self, a: int, b: int) -> np.ndarray:
        """Schmidt coefficients of the state across edge (a, b)."""
        work = self if self.center == a else self.copy()
        if work.center != a:
            work.move_center(a)
        t = work.tensors[a]
        leg_b = work.leg(a, b)
        mat = np.moveaxis(t, leg_b, -1).reshape(-1, t.shape[leg_b])
        return np.linalg.svd(mat, compute_uv=False)

    def bond_entropy(self, a: int, b: int) -> float:
        """Von Neumann entanglement entropy across edge (a, b), in nats."""
        return entropy_from_spectrum(self.schmidt_spectrum(a, b))

    def to_statevector(self) -> np.ndarray:
        """Contract to a dense vector ordered by site index (site 0 slowest)."""
        dim = 1
        for d in self.dims:
            dim *= d
            if dim > _STATEVECTOR_CAP:
                raise TooLarge(f"statevector dimension exceeds {_STATEVECTOR_CAP}")
        vec, sites = self._contract_subtree(self.center, None)
        perm = np.argsort(np.asarray(sites))
        vec = vec.transpose(tuple(perm))
        return vec.reshape(-1)

    def _contract_subtree(self, a, b):
        """Contract the subtree at a away from b.

        Returns (tensor, sites): legs are (bond toward b when b is given,)
        followed by one leg per site in `sites` order.
        """
        t = self.tensors[a]
        legs: list[tuple] = [("nb", nb) for nb in self.neighbors[a]]
        if self.phys_site[a] is not None:
            legs.append(("site", self.phys_site[a]))
        for nb in self.neighbors[a]:
            if nb == b:
                continue
            sub, sub_sites = self._contract_subtree(nb, a)
            pos = legs.index(("nb", nb))
            t = np.tensordot(t, sub, ([pos], [0]))
            legs.pop(pos)
            legs.extend(("site", s) for s in sub_sites)
        sites = [s for kind, s in legs if kind == "site"]
        if b is not None:
            posb = legs.index(("nb", b))
            t = np.moveaxis(t, posb, 0)
        return t, sites

    # -- persistence ------------------------------------------------------

    def save(self, path: str):
        meta = {
            "format": 1,
            "kind": type(self).__name__,
            "neighbors": {str(k): list(v) for k, v in self.neighbors.items()},
            "phys_site": {str(k): v for k, v in self.phys_site.items()},
            "dims": list(self.dims),
            "center": self.center,
            "sweep_root": self.sweep_root,
        }
        arrays = {f"t{n}": t for n, t in self.tensors.items()}
        np.savez(path, meta=np.asarray(json.dumps(meta)), **arrays)

    @staticmethod
    def load(path: str) -> "TreeState":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            tensors = {int(k[1:]): data[k] for k in data.files if k.startswith("t")}
        neighbors = {int(k): tuple(v) for k, v in meta["neighbors"].items()}
        phys = {int(k): v for k, v in meta["phys_site"].items()}
        return TreeState(
            neighbors, phys, meta["dims"], tensors, meta["center"], meta["sweep_root"]
        )


class TTNState(TreeState):
    """Binary-tree state over a 2D lattice; leaves carry the physical legs."""

    def __init__(self, layout: TreeLayout, dims, tensors, center):
        self.layout = layout
        self.lattice = layout.lattice
        neighbors = {}
        phys = {}
        for nid in range(layout.n_nodes):
            nbrs = list(layout.children.get(nid, ()))
            parent = layout.parent.get(nid)
            if parent is not None:
                nbrs.append(parent)
            neighbors[nid] = tuple(nbrs)
            phys[nid] = layout.leaf_site.get(nid)
        super().__init__(neighbors, phys, dims, tensors, center, layout.root)


class MPSState(TreeState):
    """Open-chain state; every node carries a physical leg."""

    def __init__(self, dims, tensors, center):
        n = len(dims)
        neighbors = {
            i: tuple(j for j in (i - 1, i + 1) if 0 <= j < n) for i in range(n)
        }
        phys = {i: i for i in range(n)}
        super().__init__(neighbors, phys, dims, tensors, center, n - 1)

    @property
    def length(self) -> int:
        return len(self.dims)


def _normalized_local(vec, d: int) -> np.ndarray:
    arr = np.asarray(vec, dtype=complex).reshape(-1)
    if arr.shape[0] != d:
        raise BadLocalState(f"local state has dimension {arr.shape[0]}, expected {d}")
    n = np.linalg.norm(arr)
    if n < 1e-300:
        raise BadLocalState("local state has zero norm")
    return arr / n


def _capped_prod(dims, cap: int) -> int:
    out = 1
    for d in dims:
        out *= d
        if out >= cap:
            return cap
    return out


def _pad_and_perturb(state: TreeState, trunc: TruncationSpec, noise: float):
    """Grow every bond to min(chi_max, Schmidt cap) and seed the new space.

    The state stays within O(noise) of the unpadded one; the deterministic
    perturbation makes padded directions dynamically alive.
    """
    target = {}
    for a in state.neighbors:
        for b in state.neighbors[a]:
            if a < b:
                mask = state.side_sites(a, b)
                inside = [d for s, d in enumerate(state.dims) if (mask >> s) & 1]
                outside = [d for s, d in enumerate(state.dims) if not (mask >> s) & 1]
                cap = min(
                    _capped_prod(inside, trunc.chi_max),
                    _capped_prod(outside, trunc.chi_max),
                    trunc.chi_max,
                )
                target[(a, b)] = cap
                target[(b, a)] = cap
    for nid in sorted(state.neighbors):
        t = state.tensors[nid]
        orig = tuple(slice(0, s) for s in t.shape)
        pads = []
        for ax in range(t.ndim):
            if state.phys_site[nid] is not None and ax == state.phys_leg(nid):
                pads.append((0, 0))
            else:
                nb = state.neighbors[nid][ax]
                pads.append((0, target[(nid, nb)] - t.shape[ax]))
        t = np.pad(t, pads)
        if noise and any(hi for _, hi in pads):
            # seed only the new zero blocks; the original block is untouched
            # so first-order corrections to any expectation vanish and the
            # padded state reproduces product-state values to O(noise^2)
            rng = np.random.default_rng(777000 + nid)
            bump = noise * (
                rng.standard_normal(t.shape) + 1j * rng.standard_normal(t.shape)
            )
            bump[orig] = 0.0
            t = t + bump
        state.tensors[nid] = t


def ttn_product_state(
    layout: TreeLayout,
    local_states: dict[int, np.ndarray],
    trunc: TruncationSpec,
    pad_noise: float = 1e-12,
) -> TTNState:
    """Product state on the tree, zero-padded to the working bond dimensions."""
    n = layout.lattice.n_sites
    dims = tuple(np.asarray(local_states[s]).size for s in range(n))
    tensors = {}
    for nid in range(layout.n_nodes):
        site = layout.leaf_site.get(nid)
        if site is not None:
            vec = _normalized_local(local_states[site], dims[site])
            tensors[nid] = vec.reshape(1, dims[site])
        elif nid == layout.root:
            tensors[nid] = np.ones((1, 1), dtype=complex)
        else:
            tensors[nid] = np.ones((1, 1, 1), dtype=complex)
    state = TTNState(layout, dims, tensors, layout.root)
    _pad_and_perturb(state, trunc, pad_noise)
    state.canonicalize(layout.root)
    state.normalize()
    return state


def mps_product_state(
    dims,
    local_states: dict[int, np.ndarray],
    trunc: TruncationSpec,
    pad_noise: float = 1e-12,
) -> MPSState:
    dims = tuple(int(d) for d in dims)
    n = len(dims)
    tensors = {}
    for i in range(n):
        vec = _normalized_local(local_states[i], dims[i])
        shape = (1, dims[i]) if i in (0, n - 1) else (1, 1, dims[i])
        tensors[i] = vec.reshape(shape)
    state = MPSState(dims, tensors, n - 1)
    _pad_and_perturb(state, trunc, pad_noise)
    state.canonicalize(n - 1)
    state.normalize()
    return state


def mps_from_tensors(tensors: list[np.ndarray], center: int) -> MPSState:
    """Wrap chain tensors given as (left, phys, right), dummy ends of size 1."""
    n = len(tensors)
    dims = [t.shape[1] for t in tensors]
    wrapped = {}
    for i, t in enumerate(tensors):
        if t.ndim != 3:
            raise ShapeMismatch("chain tensors must be rank 3 (left, phys, right)")
        if i == 0:
            wrapped[i] = t[0].T  # (right, phys)
        elif i == n - 1:
            wrapped[i] = t[:, :, 0]  # (left, phys)
        else:
            wrapped[i] = t.transpose(0, 2, 1)  # (left, right, phys)
    return MPSState(dims, wrapped, center)
