"""Single-site time evolution of loop-free tensor network states.

The integrator is the projector-splitting scheme on trees: a forward
half sweep walks the network depth-first from the sweep root, giving
every site tensor a forward half step and every bond matrix a backward
half step on the way up; the second half sweep is the exact mirror.
Effective operators come from per-edge environment caches that evict
themselves when a tensor on their side of the edge mutates, so most of
each sweep reuses the work of the previous one.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Mapping

import numpy as np

from .models import KinkSpec, TermSum, kink_operator, modified_kink, BulkTooSmall
from .network import TreeState, apply_leg_matrix, env_through
from .tensor_core import krylov_expm_apply
from .timeseries import EvolutionConfig, TimeSeries

_PHYS = -1  # branch marker for the physical leg in term placements


@dataclass
class _EdgeEnv:
    """Environment of one directed edge (tail side, in tail-toward-head gauge).

    done: matrix of all interaction terms completed strictly inside the
        tail side, coefficients included.  None when no term completes.
    open_mats: half-finished factors of terms that cross the edge, keyed
        by (site, matrix_id) of the operator living inside.  Coefficients
        are NOT included here; the consumer applies them once.
    """

    done: np.ndarray | None
    open_mats: dict[tuple[int, int], np.ndarray]


class Environments:
    """Effective-operator cache for one TermSum acting on one tree state.

    All queries assume the state is in canonical form toward its current
    center, which the sweep maintains.  With ``register=True`` the cache
    hooks into the state's mutation notifications and stays consistent
    across sweeps; transient instances for one-off measurements should
    pass ``register=False`` so the state does not accumulate dead hooks.
    """

    def __init__(self, state: TreeState, hamiltonian: TermSum, register: bool = True):
        if not hamiltonian.is_hermitian():
            raise ValueError("effective operators require a hermitian TermSum")
        self.state = state
        self.h = hamiltonian
        self._cache: dict[tuple[int, int], _EdgeEnv] = {}
        self._gauge_depth = 0
        # recipes depend on topology and term placement only; never evicted
        self._env_recipe: dict[tuple[int, int], tuple[list, list]] = {}
        self._node_recipe: dict[int, list] = {}
        self._edge_recipe: dict[tuple[int, int], list] = {}
        self._local_mat: dict[int, np.ndarray | None] = {}
        if register:
            state.add_mutation_hook(self._on_mutation)

    def _on_mutation(self, node: int) -> None:
        if self._gauge_depth:
            # the state value is untouched; a gauge move on edge (x, y)
            # only rebases that bond, so env(x->y) and env(y->x) are the
            # sole stale entries.  Both endpoints mutate, so popping the
            # outgoing keys of each covers exactly that pair.  Incoming
            # environments keep their (still valid) values.
            for nb in self.state.neighbors[node]:
                self._cache.pop((node, nb), None)
            return
        stale = [
            key
            for key in self._cache
            if self.state.side_nodes(*key) >> node & 1
        ]
        for key in stale:
            del self._cache[key]

    @contextmanager
    def gauge(self):
        """Mark enclosed tensor mutations as pure gauge moves."""
        self._gauge_depth += 1
        try:
            yield
        finally:
            self._gauge_depth -= 1

    # -- term placement ------------------------------------------------

    def _branch(self, a: int, site: int) -> int:
        """Which leg of node a leads to the given site (or _PHYS if local)."""
        nd = self.state.node_of_site(site)
        return _PHYS if nd == a else self.state.next_hop(a, nd)

    def _local_matrix(self, n: int) -> np.ndarray | None:
        """All one-site terms at node n folded into a single matrix."""
        if n in self._local_mat:
            return self._local_mat[n]
        out = None
        site = self.state.phys_site.get(n)
        if site is not None:
            for coeff, ops in self.h.terms:
                if len(ops) == 1 and ops[0][0] == site:
                    m = coeff * self.h.mat(ops[0][1])
                    out = m if out is None else out + m
        self._local_mat[n] = out
        return out

    def _recipe_env(self, a: int, b: int):
        key = (a, b)
        hit = self._env_recipe.get(key)
        if hit is not None:
            return hit
        completions = []  # (coeff, [(branch, (site, mid)), ...]) finished at a
        opens: list[tuple[int, int]] = []  # keys this edge must export
        seen = set()
        for coeff, ops in self.h.terms:
            placed = [(s, m, self._branch(a, s)) for s, m in ops]
            if all(p == b for _, _, p in placed):
                continue  # lives on the head side entirely
            if any(p == b for _, _, p in placed):
                for s, m, p in placed:
                    if p != b and (s, m) not in seen:
                        seen.add((s, m))
                        opens.append((s, m))
                continue
            if len(ops) == 1:
                continue  # folded into the node's local matrix
            branches = {p for _, _, p in placed}
            if len(branches) == 1 and _PHYS not in branches:
                continue  # whole term inside one child subtree: already in its done
            completions.append((coeff, [(p, (s, m)) for s, m, p in placed]))
        out = (completions, opens)
        self._env_recipe[key] = out
        return out

    def _recipe_node(self, n: int):
        hit = self._node_recipe.get(n)
        if hit is not None:
            return hit
        cross = []
        for coeff, ops in self.h.terms:
            if len(ops) == 1:
                continue  # folded into the node's local matrix
            placed = [(s, m, self._branch(n, s)) for s, m in ops]
            branches = {p for _, _, p in placed}
            if len(branches) == 1 and _PHYS not in branches:
                continue
            cross.append((coeff, [(p, (s, m)) for s, m, p in placed]))
        self._node_recipe[n] = cross
        return cross

    def _recipe_edge(self, a: int, b: int):
        key = (a, b)
        hit = self._edge_recipe.get(key)
        if hit is not None:
            return hit
        pairs = []
        for coeff, ops in self.h.terms:
            tail, head = [], []
            for s, m in ops:
                (head if self._branch(a, s) == b else tail).append((s, m))
            if tail and head:
                if len(tail) != 1 or len(head) != 1:
                    raise ValueError("bond projection supports two-site terms only")
                pairs.append((coeff, tail[0], head[0]))
        self._edge_recipe[key] = pairs
        return pairs

    # -- environment construction ---------------------------------------

    def env(self, a: int, b: int) -> _EdgeEnv:
        """Environment of edge (a, b) summarizing everything on a's side."""
        key = (a, b)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        st = self.state
        t = st.tensors[a]
        out_leg = st.leg(a, b)
        children = [c for c in st.neighbors[a] if c != b]
        child_env = {c: self.env(c, a) for c in children}

        done = None
        for c in children:
            e = child_env[c]
            if e.done is not None:
                part = env_through(t, {st.leg(a, c): e.done}, out_leg)
                done = part if done is None else done + part
        local = self._local_matrix(a)
        if local is not None:
            part = env_through(t, {st.phys_leg(a): local}, out_leg)
            done = part if done is None else done + part

        def insertion(branch, opkey):
            if branch == _PHYS:
                return st.phys_leg(a), self.h.mat(opkey[1])
            return st.leg(a, branch), child_env[branch].open_mats[opkey]

        completions, open_keys = self._recipe_env(a, b)
        for coeff, placed in completions:
            ins = dict(insertion(branch, opkey) for branch, opkey in placed)
            part = coeff * env_through(t, ins, out_leg)
            done = part if done is None else done + part

        open_mats = {}
        for opkey in open_keys:
            branch = self._branch(a, opkey[0])
            ins = dict([insertion(branch, opkey)])
            open_mats[opkey] = env_through(t, ins, out_leg)

        e = _EdgeEnv(done, open_mats)
        self._cache[key] = e
        return e

    # -- effective operators --------------------------------------------

    def _node_ops(self, n: int):
        """Effective one-site operator pieces at node n.

        Returns (singles, pairs, const): singles holds one matrix per leg
        (child dones plus the folded local terms), pairs the bond terms
        whose two factors insert on two different legs.
        """
        st = self.state
        neighbors = st.neighbors[n]
        envs = {nb: self.env(nb, n) for nb in neighbors}
        phys = st.phys_leg(n) if st.phys_site.get(n) is not None else None

        singles = [
            (st.leg(n, nb), e.done) for nb, e in envs.items() if e.done is not None
        ]
        local = self._local_matrix(n)
        if local is not None:
            singles.append((phys, local))

        def insertion(branch, opkey):
            if branch == _PHYS:
                return phys, self.h.mat(opkey[1])
            return st.leg(n, branch), envs[branch].open_mats[opkey]

        pairs = [
            (coeff, [insertion(branch, opkey) for branch, opkey in placed])
            for coeff, placed in self._recipe_node(n)
        ]
        return singles, pairs, self.h.constant

    def _edge_ops(self, a: int, b: int):
        """Effective bond operator pieces on edge (a, b), legs (a side, b side)."""
        ea = self.env(a, b)
        eb = self.env(b, a)
        singles = []
        if ea.done is not None:
            singles.append((0, ea.done))
        if eb.done is not None:
            singles.append((1, eb.done))
        pairs = [
            (coeff, [(0, ea.open_mats[ka]), (1, eb.open_mats[kb])])
            for coeff, ka, kb in self._recipe_edge(a, b)
        ]
        return singles, pairs, self.h.constant

    def h_eff(self, n: int) -> Callable[[np.ndarray], np.ndarray]:
        """Matvec of the one-site effective Hamiltonian at node n."""
        singles, pairs, const = self._node_ops(n)

        def mv(x: np.ndarray) -> np.ndarray:
            acc = const * x if const else np.zeros_like(x)
            for leg, m in singles:
                acc = acc + apply_leg_matrix(x, m, leg)
            for coeff, ins in pairs:
                y = x
                for leg, mat in ins:
                    y = apply_leg_matrix(y, mat, leg)
                acc = acc + coeff * y
            return acc

        return mv

    def k_eff(self, a: int, b: int) -> Callable[[np.ndarray], np.ndarray]:
        """Matvec of the bond effective Hamiltonian on edge (a, b).

        Acts on the connector left by split_toward(a, b): row index on
        a's side, column index on b's side.
        """
        ea = self.env(a, b)
        eb = self.env(b, a)
        pairs = self._recipe_edge(a, b)
        const = self.h.constant

        def mv(r: np.ndarray) -> np.ndarray:
            acc = const * r if const else np.zeros_like(r)
            if ea.done is not None:
                acc = acc + ea.done @ r
            if eb.done is not None:
                acc = acc + r @ eb.done.T
            for coeff, ka, kb in pairs:
                acc = acc + coeff * (ea.open_mats[ka] @ r @ eb.open_mats[kb].T)
            return acc

        return mv

    def expectation(self) -> float:
        """<psi|H|psi> evaluated at the current center (state canonical)."""
        c = self.state.center
        t = self.state.tensors[c]
        return float(np.real(np.vdot(t, self.h_eff(c)(t))))


def measure_term_sum(state: TreeState, obs: TermSum) -> float:
    """Expectation of a hermitian TermSum on a canonical tree state."""
    return Environments(state, obs, register=False).expectation()


def interface_entropy(state: TreeState) -> float:
    """Entanglement entropy across the network's natural middle cut.

    For a tree built over a lattice this is the root edge separating the
    two halves of the system; for a chain it is the central bond.
    """
    layout = getattr(state, "layout", None)
    if layout is not None:
        root = layout.root
        a = layout.children[root][0]
        return state.bond_entropy(a, root)
    n = state.length
    return state.bond_entropy(n // 2 - 1, n // 2)


# -- the integrator ------------------------------------------------------

# below this size an exact eigendecomposition beats the iterative solver
_DENSE_EXP_CAP = 512


def _expm(mv, v, tau, cfg: EvolutionConfig):
    return krylov_expm_apply(mv, v, tau, m_max=cfg.krylov_m_max, tol=cfg.krylov_tol)


def _dense_operator(shape, singles, pairs, const) -> np.ndarray:
    """Assemble the effective operator as a dense matrix on prod(shape)."""
    n = 1
    for d in shape:
        n *= d
    eyes = [np.eye(d, dtype=complex) for d in shape]
    h = const * np.eye(n, dtype=complex) if const else np.zeros((n, n), dtype=complex)
    for leg, m in singles:
        facs = [m if i == leg else eyes[i] for i in range(len(shape))]
        h += reduce(np.kron, facs)
    for coeff, ins in pairs:
        facs = list(eyes)
        for leg, m in ins:
            facs[leg] = m
        h += coeff * reduce(np.kron, facs)
    return h


def _dense_expm_apply(ops, v: np.ndarray, tau: complex) -> np.ndarray:
    h = _dense_operator(v.shape, *ops)
    w, u = np.linalg.eigh(h)
    vec = u @ (np.exp(tau * w) * (u.conj().T @ v.reshape(-1)))
    return vec.reshape(v.shape)


def _site_step(state, envs, node, tau, cfg):
    t = state.tensors[node]
    if t.size <= _DENSE_EXP_CAP:
        t = _dense_expm_apply(envs._node_ops(node), t, tau)
    else:
        t = _expm(envs.h_eff(node), t, tau, cfg)
    state.set_tensor(node, t)


def _bond_step(state, envs, a, b, r, tau, cfg):
    if r.size <= _DENSE_EXP_CAP:
        return _dense_expm_apply(envs._edge_ops(a, b), r, tau)
    return _expm(envs.k_eff(a, b), r, tau, cfg)


def _forward(state, envs, node, parent, dt, cfg):
    for child in state.neighbors[node]:
        if child == parent:
            continue
        # descend: hand the center to the child without any evolution
        with envs.gauge():
            r = state.split_toward(node, child)
            state.absorb_bond(r, node, child)
        state.center = child
        _forward(state, envs, child, node, dt, cfg)
        # ascend: the connector integrates backward across the edge
        with envs.gauge():
            r = state.split_toward(child, node)
        r = _bond_step(state, envs, child, node, r, 1j * dt / 2, cfg)
        state.absorb_bond(r, child, node)
        state.center = node
    _site_step(state, envs, node, -1j * dt / 2, cfg)


def _backward(state, envs, node, parent, dt, cfg):
    _site_step(state, envs, node, -1j * dt / 2, cfg)
    for child in reversed(state.neighbors[node]):
        if child == parent:
            continue
        with envs.gauge():
            r = state.split_toward(node, child)
        r = _bond_step(state, envs, node, child, r, 1j * dt / 2, cfg)
        state.absorb_bond(r, node, child)
        state.center = child
        _backward(state, envs, child, node, dt, cfg)
        # ascend: pure gauge move back toward the sweep root
        with envs.gauge():
            r = state.split_toward(child, node)
            state.absorb_bond(r, child, node)
        state.center = node


def tdvp_step(state: TreeState, envs: Environments, dt: float, cfg: EvolutionConfig):
    """One symmetric integrator step of size dt.

    The state must be canonical at its sweep root; it is returned there.
    Every site tensor receives two forward half steps and every bond two
    backward half steps, mirrored around the midpoint, so the scheme is
    second order in dt and exactly norm preserving.
    """
    root = state.sweep_root
    if state.center != root:
        state.move_center(root)
    _forward(state, envs, root, None, dt, cfg)
    _backward(state, envs, root, None, dt, cfg)


# -- the driver ----------------------------------------------------------


@dataclass
class EvolutionRun:
    """Everything needed for one evolve() call beyond the bare state."""

    hamiltonian: TermSum
    config: EvolutionConfig
    observables: Mapping[str, TermSum] = field(default_factory=dict)
    kink: KinkSpec | None = None
    companion: TermSum | None = None
    entropy: bool = True
    on_row: Callable[[dict], None] | None = None
    meta: Mapping[str, object] = field(default_factory=dict)


def _kink_model(state: TreeState) -> str:
    return "2D" if getattr(state, "lattice", None) is not None else "SOS"


def evolve(state: TreeState, run: EvolutionRun) -> TimeSeries:
    """Integrate the state in place, recording observables on the stride grid.

    Records norm and energy always; one column per named observable; the
    kink columns K (plus K_bulk and K_M when a companion Hamiltonian is
    given, evolved independently from the same initial state); and the
    interface-cut entropy (root cut of the tree, middle bond for chains).
    Returns the collected TimeSeries; the final state is left in the
    caller's object.
    """
    cfg = run.config
    envs = Environments(state, run.hamiltonian)
    comp_state = comp_envs = None
    if run.companion is not None:
        if run.kink is None:
            raise ValueError("a companion evolution is only used for kink ratios")
        comp_state = state.copy()
        comp_envs = Environments(comp_state, run.companion)
    model = _kink_model(state)

    names = ["norm", "energy"]
    names += list(run.observables)
    if run.kink is not None:
        names.append("K")
        if comp_state is not None:
            names += ["K_bulk", "K_M"]
    if run.entropy:
        names.append("entropy_root")
    columns: dict[str, list] = {name: [] for name in names}
    times: list[float] = []

    def record(t: float):
        row: dict[str, float] = {"t": t}
        row["norm"] = state.norm()
        row["energy"] = envs.expectation()
        for name, obs in run.observables.items():
            row[name] = measure_term_sum(state, obs)
        if run.kink is not None:
            row["K"] = kink_operator(state, run.kink, model=model)
            if comp_state is not None:
                row["K_bulk"] = kink_operator(comp_state, run.kink, model=model)
                try:
                    row["K_M"] = modified_kink(row["K"], row["K_bulk"])
                except BulkTooSmall:
                    row["K_M"] = float("nan")
        if run.entropy:
            row["entropy_root"] = interface_entropy(state)
        times.append(t)
        for name in names:
            columns[name].append(row[name])
        if run.on_row is not None:
            run.on_row(row)

    if state.center != state.sweep_root:
        state.move_center(state.sweep_root)
    if comp_state is not None and comp_state.center != comp_state.sweep_root:
        comp_state.move_center(comp_state.sweep_root)
    record(0.0)
    n = cfg.n_steps
    recorded = cfg.time_grid()
    for step in range(1, n + 1):
        tdvp_step(state, envs, cfg.dt, cfg)
        if comp_state is not None:
            tdvp_step(comp_state, comp_envs, cfg.dt, cfg)
        if step % cfg.stride == 0 or step == n:
            record(step * cfg.dt)
    assert len(times) == len(recorded)

    meta = {
        "engine": "tdvp1",
        "dt": cfg.dt,
        "t_max": cfg.t_max,
        "stride": cfg.stride,
        "chi_max": cfg.truncation.chi_max,
        "krylov_tol": cfg.krylov_tol,
        "companion": run.companion is not None,
    }
    meta.update(run.meta)
    cols = {name: np.asarray(vals) for name, vals in columns.items()}
    return TimeSeries(np.asarray(times), cols, meta=meta)
