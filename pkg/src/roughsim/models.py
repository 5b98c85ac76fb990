"""Model Hamiltonians and observables for the roughening setup.

Everything is expressed as a `TermSum`: a sum of products of single-site
matrices with real or complex coefficients. The spin model lives on the 2D
grid; the height chain is its solid-on-solid reduction with a hard cutoff.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass

import numpy as np

from .lattice import Lattice, OddHeight, partition_top_bottom
from .tensor_core import TooLarge

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SZ = np.array([[1.0, 0.0], [0.0, -1.0]])
ID2 = np.eye(2)


class BulkTooSmall(ValueError):
    """Bulk reference kink too close to zero to divide by."""


@dataclass(frozen=True)
class ModelParams:
    """Transverse-field spin model: -j sum_<ab> x_a x_b - g sum_a z_a."""

    g: float
    j: float = 1.0

    def __post_init__(self):
        if self.j <= 0:
            raise ValueError("coupling j must be positive")
        if self.g < 0:
            raise ValueError("field g must be non-negative")


@dataclass(frozen=True)
class SOSParams:
    """Height chain: 2j sum |n_i - n_{i+1}| - g sum (E_i + E_i^dag).

    Heights take values 0..n_max on a chain of lx columns; n_max must be
    even so the flat interface n_max/2 is a lattice value.
    """

    lx: int
    n_max: int
    g: float
    j: float = 1.0

    def __post_init__(self):
        if self.lx < 2:
            raise ValueError("need at least two columns")
        if self.n_max < 2:
            raise ValueError("n_max must be at least 2")
        if self.n_max % 2:
            raise OddHeight(f"n_max = {self.n_max} has no middle height")
        if self.j <= 0:
            raise ValueError("coupling j must be positive")
        if self.g < 0:
            raise ValueError("field g must be non-negative")

    @property
    def dim(self) -> int:
        return self.n_max + 1


@dataclass(frozen=True)
class KinkSpec:
    """Kink correlator cos(alpha (N_first - N_last)) between two columns.

    `l` is the 1-based separation: columns 0 and l-1 enter; None means the
    full width. `variant` selects whether consumers divide by the
    decoupled-bulk reference. `height_weight` picks the row convention
    for the bond offsets ("lower" puts weight 0 on the interface bond).
    """

    alpha: float = 1.0
    l: int | None = None
    variant: str = "bare"
    height_weight: str = "lower"

    def __post_init__(self):
        if not 0.0 < self.alpha <= np.pi:
            raise ValueError("alpha must lie in (0, pi]")
        if self.variant not in ("bare", "modified"):
            raise ValueError("variant must be 'bare' or 'modified'")
        if self.height_weight not in ("lower", "upper"):
            raise ValueError("height_weight must be 'lower' or 'upper'")
        if self.l is not None and self.l < 2:
            raise ValueError("column separation l must be at least 2")


class TermSum:
    """Sum of products of single-site operators, with matrix interning.

    Terms store (coeff, ((site, mat_index), ...)) with sites strictly
    increasing; identical matrices share one index so environment code can
    recognize and reuse common factors. A term with no operators is folded
    into `constant`.
    """

    def __init__(self, dims):
        self.dims = tuple(int(d) for d in dims)
        self.n_sites = len(self.dims)
        self.constant = 0.0
        self.terms: list[tuple[complex, tuple[tuple[int, int], ...]]] = []
        self._mats: list[np.ndarray] = []
        self._index: dict = {}

    def _intern(self, mat) -> int:
        arr = np.asarray(mat)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("site operators must be square matrices")
        key = (arr.shape[0], arr.dtype.str, arr.tobytes())
        idx = self._index.get(key)
        if idx is None:
            idx = len(self._mats)
            store = arr.copy()
            store.flags.writeable = False
            self._mats.append(store)
            self._index[key] = idx
        return idx

    def add(self, coeff, ops=()) -> "TermSum":
        ops = list(ops)
        if not ops:
            self.constant += coeff
            return self
        sites = [s for s, _ in ops]
        if len(set(sites)) != len(sites):
            raise ValueError("term has repeated sites; multiply the matrices first")
        placed = []
        for site, mat in sorted(ops, key=lambda p: p[0]):
            if not 0 <= site < self.n_sites:
                raise ValueError(f"site {site} out of range")
            arr = np.asarray(mat)
            if arr.shape != (self.dims[site], self.dims[site]):
                raise ValueError(
                    f"operator at site {site} has shape {arr.shape}, "
                    f"expected ({self.dims[site]}, {self.dims[site]})"
                )
            placed.append((site, self._intern(arr)))
        self.terms.append((complex(coeff), tuple(placed)))
        return self

    def mat(self, idx: int) -> np.ndarray:
        return self._mats[idx]

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def max_sites_per_term(self) -> int:
        return max((len(ops) for _, ops in self.terms), default=0)

    def to_dense(self, max_dim: int = 1 << 12) -> np.ndarray:
        """Full matrix, site 0 slowest. Guarded by max_dim."""
        dim = 1
        for d in self.dims:
            dim *= d
        if dim > max_dim:
            raise TooLarge(f"dense dimension {dim} exceeds cap {max_dim}")
        out = np.zeros((dim, dim), dtype=complex)
        if self.constant:
            out += self.constant * np.eye(dim)
        for coeff, ops in self.terms:
            opmap = dict(ops)
            block = np.eye(1)
            for site in range(self.n_sites):
                local = self.mat(opmap[site]) if site in opmap else np.eye(self.dims[site])
                block = np.kron(block, local)
            out += coeff * block
        return out

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        """Cheap per-term check: real coefficients with Hermitian factors."""
        if abs(complex(self.constant).imag) > tol:
            return False
        for coeff, ops in self.terms:
            if abs(coeff.imag) > tol:
                return False
            for _, mid in ops:
                m = self.mat(mid)
                if not np.allclose(m, m.conj().T, atol=tol):
                    return False
        return True


# -- spin model on the grid -------------------------------------------------


def tfim_hamiltonian(lat: Lattice, params: ModelParams) -> TermSum:
    h = TermSum((2,) * lat.n_sites)
    for a, b in lat.bonds():
        h.add(-params.j, [(a, SX), (b, SX)])
    for s in range(lat.n_sites):
        h.add(-params.g, [(s, SZ)])
    return h


def bulk_decoupled_hamiltonian(
    lat: Lattice, params: ModelParams, interface: int | None = None
) -> TermSum:
    """Same couplings with one row of vertical bonds removed.

    `interface` counts rows from 1; the cut runs between rows `interface`
    and `interface + 1` and defaults to the middle. Evolution under this
    Hamiltonian gives the bulk reference for the modified kink: both
    halves roughen without talking to each other.
    """
    if interface is None:
        if lat.ly % 2:
            raise OddHeight(f"ly = {lat.ly} has no middle interface")
        interface = lat.ly // 2
    if not 1 <= interface < lat.ly:
        raise ValueError(f"interface boundary {interface} outside 1..{lat.ly - 1}")
    lower_row = interface - 1
    cut = {
        (a, b)
        for a, b in lat.vertical_bonds()
        if a // lat.lx == lower_row
    }
    h = TermSum((2,) * lat.n_sites)
    for a, b in lat.bonds():
        if (a, b) not in cut:
            h.add(-params.j, [(a, SX), (b, SX)])
    for s in range(lat.n_sites):
        h.add(-params.g, [(s, SZ)])
    return h


def domain_wall_product_state(lat: Lattice) -> dict[int, np.ndarray]:
    """|+x> on the top half, |-x> on the bottom half."""
    top, bottom = partition_top_bottom(lat)
    plus = np.array([1.0, 1.0]) / np.sqrt(2)
    minus = np.array([1.0, -1.0]) / np.sqrt(2)
    out = {}
    for s in top:
        out[s] = plus
    for s in bottom:
        out[s] = minus
    return out


def observable_imbalance(lat: Lattice) -> TermSum:
    """Half the difference of mean x-magnetizations, top minus bottom.

    Normalized to 1 in the domain-wall state and 0 in any x-symmetric one.
    """
    top, bottom = partition_top_bottom(lat)
    o = TermSum((2,) * lat.n_sites)
    for s in top:
        o.add(0.5 / len(top), [(s, SX)])
    for s in bottom:
        o.add(-0.5 / len(bottom), [(s, SX)])
    return o


def observable_domain_wall(lat: Lattice, direction: str = "all") -> TermSum:
    """Broken-bond count sum_<ab> (1 - x_a x_b) / 2 over a bond family.

    direction "all" counts every bond; "columns_only" restricts to bonds
    between vertically adjacent sites, which count the horizontally
    running interface segments.
    """
    if direction == "all":
        bonds = lat.bonds()
    elif direction == "columns_only":
        bonds = lat.vertical_bonds()
    else:
        raise ValueError("direction must be 'all' or 'columns_only'")
    o = TermSum((2,) * lat.n_sites)
    for a, b in bonds:
        o.add(0.5)
        o.add(-0.5, [(a, SX), (b, SX)])
    return o


def height_offsets(ly: int, convention: str = "lower") -> list[float]:
    """Per-vertical-bond height weight, indexed by the lower row of the bond.

    The interface bond (rows ly/2 - 1 and ly/2) carries 0 in the lower
    convention and 1 in the upper one; the two conventions shift every
    offset by one and cancel in height differences of equal-length columns.
    """
    if ly % 2:
        raise OddHeight(f"ly = {ly} has no middle interface")
    if convention not in ("lower", "upper"):
        raise ValueError("convention must be 'lower' or 'upper'")
    shift = 0 if convention == "lower" else 1
    return [float(j + 1 - ly // 2 + shift) for j in range(ly - 1)]


def observable_height(lat: Lattice, column: int, convention: str = "lower") -> TermSum:
    """Interface height N at one column: sum_j (w_j / 2)(1 - x x)."""
    w = height_offsets(lat.ly, convention)
    o = TermSum((2,) * lat.n_sites)
    for j, (a, b) in enumerate(lat.column_bonds(column)):
        if w[j] == 0.0:
            continue
        o.add(0.5 * w[j])
        o.add(-0.5 * w[j], [(a, SX), (b, SX)])
    return o


def kink_gates(lat: Lattice, spec: KinkSpec):
    """Factorized two-site gates realizing exp(-ia N_first) exp(+ia N_last).

    The real part of their product's expectation is the kink correlator
    cos(alpha (N_first - N_last)). Each vertical bond contributes
    exp(-i beta (1 - XX)) = e^{-i beta} (cos(beta) II + i sin(beta) XX),
    a two-channel gate; zero-weight bonds drop out entirely.
    """
    l = spec.l if spec.l is not None else lat.lx
    if not 2 <= l <= lat.lx:
        raise ValueError(f"column separation {l} outside grid of width {lat.lx}")
    w = height_offsets(lat.ly, spec.height_weight)
    gates = []
    for col, sign in ((0, 1.0), (l - 1, -1.0)):
        for j, (a, b) in enumerate(lat.column_bonds(col)):
            beta = sign * spec.alpha * w[j] / 2.0
            if beta == 0.0:
                continue
            phase = cmath.exp(-1j * beta)
            gates.append(
                (
                    a,
                    b,
                    [
                        (phase * np.cos(beta), ID2, ID2),
                        (1j * phase * np.sin(beta), SX, SX),
                    ],
                )
            )
    return gates


def kink_statevector_value(lat: Lattice, spec: KinkSpec, psi: np.ndarray) -> float:
    """Dense-vector kink evaluation; oracle-sized grids only."""
    phi = psi.copy()
    for a, b, channels in kink_gates(lat, spec):
        out = np.zeros_like(phi)
        for wc, ma, mb in channels:
            part = _apply_site_matrix(phi, lat.n_sites, a, ma)
            part = _apply_site_matrix(part, lat.n_sites, b, mb)
            out += wc * part
        phi = out
    return float(np.vdot(psi, phi).real)


def _apply_site_matrix(v: np.ndarray, n_sites: int, site: int, mat: np.ndarray) -> np.ndarray:
    d = mat.shape[0]
    dl = d**site
    dr = v.size // (dl * d)
    w = v.reshape(dl, d, dr)
    out = np.tensordot(np.asarray(mat), w, (1, 1))  # (d, dl, dr)
    return out.transpose(1, 0, 2).reshape(-1)


# -- height chain -------------------------------------------------------------


def sos_local_ops(n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """(number operator, lowering operator) on heights 0..n_max."""
    d = n_max + 1
    n_op = np.diag(np.arange(d, dtype=float))
    lower = np.diag(np.ones(d - 1), k=1)  # E |n> = |n-1>
    return n_op, lower


def sos_hamiltonian(params: SOSParams) -> TermSum:
    """2j sum |n_i - n_{i+1}| - g sum (E + E^dag) with hard height walls.

    The coupling expands over height projectors; interning keeps one
    projector matrix per height so edge environments stay at d + 2 channels.
    """
    lx = params.lx
    d = params.n_max + 1
    _, lower = sos_local_ops(params.n_max)
    field = -params.g * (lower + lower.T)
    h = TermSum((d,) * lx)
    projs = [np.diag((np.arange(d) == n).astype(float)) for n in range(d)]
    for i in range(lx - 1):
        for n in range(d):
            for m in range(d):
                if n == m:
                    continue
                h.add(2.0 * params.j * abs(n - m), [(i, projs[n]), (i + 1, projs[m])])
    for i in range(lx):
        h.add(1.0, [(i, field)])
    return h


def sos_mpo(params: SOSParams, svd_cut: float = 1e-12) -> list[np.ndarray]:
    """Chain-operator form of the height Hamiltonian for ground-state sweeps.

    The |n - m| coupling matrix factorizes by SVD into r diagonal channel
    pairs; the operator bond dimension is r + 2. Tensors are indexed
    (left bond, right bond, out, in); ends carry dummy bonds of size 1.
    """
    lx = params.lx
    d = params.n_max + 1
    _, lower = sos_local_ops(params.n_max)
    field = -params.g * (lower + lower.T)
    grid = np.arange(d, dtype=float)
    m = 2.0 * params.j * np.abs(grid[:, None] - grid[None, :])
    u, s, vt = np.linalg.svd(m)
    r = int(np.sum(s > svd_cut * s[0]))
    left_ops = [np.diag(u[:, k] * np.sqrt(s[k])) for k in range(r)]
    right_ops = [np.diag(vt[k, :] * np.sqrt(s[k])) for k in range(r)]
    w = r + 2
    eye = np.eye(d)
    bulk = np.zeros((w, w, d, d))
    bulk[0, 0] = eye
    for k in range(r):
        bulk[0, 1 + k] = left_ops[k]
        bulk[1 + k, w - 1] = right_ops[k]
    bulk[0, w - 1] = field
    bulk[w - 1, w - 1] = eye
    first = bulk[0:1, :, :, :]
    last = bulk[:, w - 1 : w, :, :]
    tensors = [first] + [bulk.copy() for _ in range(lx - 2)] + [last]
    return tensors


def sos_flat_state(params: SOSParams) -> dict[int, np.ndarray]:
    """Product state with every column at the middle height."""
    d = params.n_max + 1
    vec = np.zeros(d)
    vec[params.n_max // 2] = 1.0
    return {i: vec for i in range(params.lx)}


def sos_kink_ops(params: SOSParams, spec: KinkSpec) -> dict[int, np.ndarray]:
    """Single-site phase pair whose product expectation gives the kink."""
    lx = params.lx
    l = spec.l if spec.l is not None else lx
    if not 2 <= l <= lx:
        raise ValueError(f"column separation {l} outside chain of length {lx}")
    d = params.n_max + 1
    n = np.arange(d)
    return {
        0: np.diag(np.exp(-1j * spec.alpha * n)),
        l - 1: np.diag(np.exp(1j * spec.alpha * n)),
    }


def sos_height_observable(params: SOSParams, column: int) -> TermSum:
    """Height relative to the flat interface at one chain site."""
    d = params.n_max + 1
    n_op, _ = sos_local_ops(params.n_max)
    o = TermSum((d,) * params.lx)
    o.add(1.0, [(column, n_op - (params.n_max / 2.0) * np.eye(d))])
    return o


def sos_roughness_observable(params: SOSParams) -> TermSum:
    """Mean squared height deviation (1/L) sum (n_i - n_max/2)^2."""
    lx = params.lx
    d = params.n_max + 1
    dev = np.diag((np.arange(d) - params.n_max / 2.0) ** 2)
    o = TermSum((d,) * lx)
    for i in range(lx):
        o.add(1.0 / lx, [(i, dev)])
    return o


# -- derived quantities -------------------------------------------------------


def kink_operator(state, spec: KinkSpec, model: str = "2D") -> float:
    """Kink correlator on a network state; real part of the phase product.

    2D states evaluate the commuting two-site gate string over the two
    probed columns. Height chains need only a diagonal phase pair, since
    the column height is a local operator there. The `modified` variant is
    resolved by evolution drivers that run the bulk companion; here the
    bare expectation on the given state is returned either way.
    """
    kind = model.lower()
    if kind == "2d":
        gates = kink_gates(state.lattice, spec)
        return float(complex(state.expect_gate_product(gates)).real)
    if kind == "sos":
        lx = len(state.dims)
        l = spec.l if spec.l is not None else lx
        if not 2 <= l <= lx:
            raise ValueError(f"column separation {l} outside chain of length {lx}")
        ops = {}
        for site, sign in ((0, -1.0), (l - 1, 1.0)):
            n = np.arange(state.dims[site])
            ops[site] = np.diag(np.exp(sign * 1j * spec.alpha * n))
        return float(complex(state.expect_product(ops)).real)
    raise ValueError("model must be '2D' or 'SOS'")


def modified_kink(kink: float, kink_bulk: float, floor: float = 1e-6) -> float:
    """Interface kink divided by the decoupled-bulk reference."""
    if abs(kink_bulk) < floor:
        raise BulkTooSmall(f"bulk kink {kink_bulk} below floor {floor}")
    return kink / kink_bulk


def running_mean(series, values=None):
    """Trapezoidal running time average; entry 0 is the initial value.

    Accepts either a TimeSeries (every column is averaged in place of the
    original) or a (times, values) pair of matching 1D arrays.
    """
    if values is None:
        from .timeseries import TimeSeries

        cols = {
            k: _running_mean_arrays(series.times, v)
            for k, v in series.columns.items()
        }
        meta = dict(series.meta)
        meta["running_mean"] = True
        return TimeSeries(series.times, cols, meta)
    return _running_mean_arrays(series, values)


def _running_mean_arrays(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise ValueError("times and values must be matching 1D arrays")
    if t.size == 0:
        return np.zeros(0)
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    if t.size == 1:
        return v.copy()
    integral = np.concatenate(
        [[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))]
    )
    out = np.empty_like(v)
    out[0] = v[0]
    out[1:] = integral[1:] / (t[1:] - t[0])
    return out
