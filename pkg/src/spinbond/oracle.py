"""Exact distributions for small systems via explicit generator matrices.

Forward configurations are packed into integers with one bit per site and
per edge (set bit means +1), dual configurations into mixed-radix integers
(positions base |V|, signs base 2, one base-3 digit per edge: 0 unrevealed,
1 revealed positive, 2 revealed negative). Transient laws come from
uniformization, stationary laws from a sparse linear solve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .cylinders import CylinderEvent
from .dual import DualState
from .errors import StateSpaceCapError
from .forward import ModelParams, SpinBondState, edge_flip_rate
from .graphs import AdoptionKernel, Graph

FORWARD_STATE_CAP = 2**20
DUAL_STATE_CAP = 2_000_000
UNIFORMIZATION_TAIL = 1e-12
STATIONARY_RESIDUAL_TOL = 1e-12
_MAX_UNIFORM_EXPONENT = 500.0


def forward_state_count(g: Graph) -> int:
    bits = g.vertex_count + g.edge_count
    size = 1 << bits
    if size > FORWARD_STATE_CAP:
        raise StateSpaceCapError(required=size, cap=FORWARD_STATE_CAP, label="forward states")
    return size


def encode_forward_state(g: Graph, state: SpinBondState) -> int:
    index = 0
    for x in range(g.vertex_count):
        if state.site_signs[x] > 0:
            index |= 1 << x
    for e in range(g.edge_count):
        if state.edge_signs[e] > 0:
            index |= 1 << (g.vertex_count + e)
    return index

def decode_forward_state(g: Graph, index: int) -> SpinBondState:
    n, m = g.vertex_count, g.edge_count
    sites = np.array([1 if (index >> x) & 1 else -1 for x in range(n)], dtype=np.int8)
    edges = np.array([1 if (index >> (n + e)) & 1 else -1 for e in range(m)], dtype=np.int8)
    return SpinBondState(sites, edges)


def build_forward_generator(g: Graph, kernel: AdoptionKernel, params: ModelParams) -> sp.csr_matrix:
    """Generator of the joint spin-bond chain as a sparse rate matrix.

    Row s holds the rates out of configuration s; the diagonal is minus the
    row sum. Adoption events that leave the state unchanged contribute
    nothing.
    """
    n, m = g.vertex_count, g.edge_count
    size = forward_state_count(g)
    idx = np.arange(size, dtype=np.int64)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    for x in range(n):
        bit_x = (idx >> x) & 1
        for y, q in kernel.rows[x]:
            if q <= 0.0:
                continue
            e = g.edge_id(x, y)
            bit_y = (idx >> y) & 1
            bit_e = (idx >> (n + e)) & 1
            # adopted sign is the product of neighbor and edge signs
            new_bit = 1 ^ bit_y ^ bit_e
            src = idx[new_bit != bit_x]
            rows.append(src)
            cols.append(src ^ (1 << x))
            vals.append(np.full(src.size, q))

    up_rate = edge_flip_rate(-1, params)
    down_rate = edge_flip_rate(1, params)
    for e in range(m):
        bit_e = (idx >> (n + e)) & 1
        mask = 1 << (n + e)
        if up_rate > 0.0:
            src = idx[bit_e == 0]
            rows.append(src)
            cols.append(src ^ mask)
            vals.append(np.full(src.size, up_rate))
        if down_rate > 0.0:
            src = idx[bit_e == 1]
            rows.append(src)
            cols.append(src ^ mask)
            vals.append(np.full(src.size, down_rate))

    return _assemble_generator(size, rows, cols, vals)


def _assemble_generator(size, rows, cols, vals) -> sp.csr_matrix:
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
    else:
        r = c = np.empty(0, dtype=np.int64)
        v = np.empty(0, dtype=np.float64)
    off = sp.coo_matrix((v, (r, c)), shape=(size, size)).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def _uniformized(L: sp.csr_matrix, vec: np.ndarray, t: float, tail_tol: float, column: bool) -> np.ndarray:
    """Poisson-weighted power series for vec @ e^{tL} (or e^{tL} @ vec)."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    vec = np.asarray(vec, dtype=np.float64)
    if t == 0.0:
        return vec.copy()
    lam = float(np.max(-L.diagonal(), initial=0.0))
    if lam <= 0.0:
        return vec.copy()
    if lam * t > _MAX_UNIFORM_EXPONENT:
        half = _uniformized(L, vec, t / 2.0, tail_tol, column)
        return _uniformized(L, half, t / 2.0, tail_tol, column)

    P = (sp.identity(L.shape[0], format="csr") + L.multiply(1.0 / lam)).tocsr()
    op = P if column else P.T.tocsr()
    coeff = float(np.exp(-lam * t))
    acc = coeff * vec
    cum = coeff
    w = vec
    n_terms = 0
    max_terms = int(lam * t + 50.0 * np.sqrt(lam * t + 1.0) + 200.0)
    while 1.0 - cum > tail_tol:
        n_terms += 1
        if n_terms > max_terms:
            raise RuntimeError("uniformization series failed to reach its tail tolerance")
        w = op @ w
        coeff *= lam * t / n_terms
        acc += coeff * w
        cum += coeff
    return acc


def transient_distribution(L: sp.csr_matrix, initial: np.ndarray, t: float, tail_tol: float = UNIFORMIZATION_TAIL) -> np.ndarray:
    """Law at time t from a row distribution, renormalized after truncation."""
    out = _uniformized(L, initial, t, tail_tol, column=False)
    total = out.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise RuntimeError("transient distribution lost its mass")
    return out / total

def transient_action(L: sp.csr_matrix, vec: np.ndarray, t: float, tail_tol: float = UNIFORMIZATION_TAIL) -> np.ndarray:
    """e^{tL} applied to a column vector of observables (no renormalization)."""
    return _uniformized(L, vec, t, tail_tol, column=True)


def count_closed_classes(L: sp.csr_matrix) -> int:
    """Number of strongly connected classes with no outgoing rate."""
    coo = L.tocoo()
    keep = (coo.row != coo.col) & (coo.data > 0.0)
    adj = sp.coo_matrix(
        (np.ones(int(keep.sum())), (coo.row[keep], coo.col[keep])), shape=L.shape
    ).tocsr()
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    src, dst = adj.nonzero()
    leaving = labels[src] != labels[dst]
    open_classes = set(labels[src[leaving]].tolist())
    return n_comp - len(open_classes)


def stationary_distribution(L: sp.csr_matrix, residual_tol: float = STATIONARY_RESIDUAL_TOL) -> np.ndarray:
    """Unique stationary row vector of the generator.

    Raises ValueError when the chain has several closed classes (the
    stationary law is not unique then). Solves the balance equations with
    one equation replaced by normalization; falls back to power iteration
    on the uniformized kernel if the direct solve misbehaves.
    """
    closed = count_closed_classes(L)
    if closed != 1:
        raise ValueError(
            f"chain has {closed} closed classes, stationary distribution is not unique"
        )
    size = L.shape[0]
    pi = None
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            a = L.T.tolil()
            a[0, :] = np.ones(size)
            b = np.zeros(size)
            b[0] = 1.0
            candidate = spsolve(a.tocsc(), b)
            if np.all(np.isfinite(candidate)):
                pi = candidate
        except (MatrixRankWarning, RuntimeError):
            pi = None
    if pi is not None:
        pi = np.clip(pi, 0.0, None)
        total = pi.sum()
        if total > 0.0:
            pi = pi / total
            if _stationary_residual(L, pi) < residual_tol:
                return pi
    pi = _stationary_power_iteration(L, residual_tol)
    return pi


def _stationary_residual(L: sp.csr_matrix, pi: np.ndarray) -> float:
    return float(np.max(np.abs(L.T @ pi)))


def _stationary_power_iteration(L: sp.csr_matrix, residual_tol: float, max_sweeps: int = 4000) -> np.ndarray:
    size = L.shape[0]
    lam = float(np.max(-L.diagonal(), initial=0.0))
    if lam <= 0.0:
        raise RuntimeError("generator has no transitions, cannot iterate")
    PT = (sp.identity(size, format="csr") + L.multiply(1.0 / lam)).T.tocsr()
    pi = np.full(size, 1.0 / size)
    # Each sweep applies many uniformized steps; squaring the step count
    # keeps slow-mixing chains affordable.
    steps_per_sweep = 64
    for _ in range(max_sweeps):
        for _ in range(steps_per_sweep):
            pi = PT @ pi
        pi = np.clip(pi, 0.0, None)
        pi = pi / pi.sum()
        if _stationary_residual(L, pi) < residual_tol:
            return pi
    raise RuntimeError(
        f"power iteration failed to push the stationary residual below {residual_tol}"
    )


def forward_cylinder_mask(g: Graph, cylinder: CylinderEvent) -> np.ndarray:
    size = forward_state_count(g)
    idx = np.arange(size, dtype=np.int64)
    mask = np.ones(size, dtype=bool)
    for x, s in cylinder.site_constraints:
        mask &= ((idx >> x) & 1) == (1 if s > 0 else 0)
    for e, s in cylinder.edge_constraints:
        mask &= ((idx >> (g.vertex_count + e)) & 1) == (1 if s > 0 else 0)
    return mask


def cylinder_probability(g: Graph, dist: np.ndarray, cylinder: CylinderEvent) -> float:
    return float(dist[forward_cylinder_mask(g, cylinder)].sum())


def total_variation(dist_a: np.ndarray, dist_b: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(dist_a) - np.asarray(dist_b)).sum())


def forward_delta(g: Graph, state: SpinBondState) -> np.ndarray:
    out = np.zeros(forward_state_count(g))
    out[encode_forward_state(g, state)] = 1.0
    return out


def dual_state_count(g: Graph, k: int) -> int:
    if k < 1:
        raise ValueError(f"walker count must be >= 1, got {k}")
    size = g.vertex_count**k * 2**k * 3**g.edge_count
    if size > DUAL_STATE_CAP:
        raise StateSpaceCapError(required=size, cap=DUAL_STATE_CAP, label="dual states")
    return size


def encode_dual_state(g: Graph, dual: DualState) -> int:
    n = g.vertex_count
    k = dual.walker_count
    index = 0
    for j in range(k - 1, -1, -1):
        index = index * n + dual.positions[j]
    bits = 0
    for j, s in enumerate(dual.signs):
        if s > 0:
            bits |= 1 << j
    index += n**k * bits
    env = 0
    for e in range(g.edge_count - 1, -1, -1):
        digit = 1 if e in dual.revealed_positive else 2 if e in dual.revealed_negative else 0
        env = env * 3 + digit
    return index + n**k * 2**k * env


def decode_dual_state(g: Graph, k: int, index: int) -> DualState:
    n = g.vertex_count
    rem, positions = index, []
    for _ in range(k):
        positions.append(rem % n)
        rem //= n
    signs = [1 if (rem >> j) & 1 else -1 for j in range(k)]
    rem >>= k
    pos_edges, neg_edges = set(), set()
    for e in range(g.edge_count):
        digit = rem % 3
        rem //= 3
        if digit == 1:
            pos_edges.add(e)
        elif digit == 2:
            neg_edges.add(e)
    return DualState(positions=positions, signs=signs, revealed_positive=pos_edges, revealed_negative=neg_edges)


def dual_delta(g: Graph, dual: DualState) -> np.ndarray:
    out = np.zeros(dual_state_count(g, dual.walker_count))
    out[encode_dual_state(g, dual)] = 1.0
    return out


def build_dual_generator(
    g: Graph,
    kernel: AdoptionKernel,
    params: ModelParams,
    k: int,
    mode: str = "coalescing",
) -> sp.csr_matrix:
    """Generator of the k-walker dual chain with its revealed environment.

    Under the coalescing rule every walker on the firing site moves in the
    same event, so co-located walkers never separate; under the independent
    rule each walker fires alone.
    """
    if mode not in ("coalescing", "independent"):
        raise ValueError(f"mode must be 'coalescing' or 'independent', got {mode!r}")
    size = dual_state_count(g, k)
    n, m = g.vertex_count, g.edge_count
    p, v = params.p, params.v
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []

    for s in range(size):
        d = decode_dual_state(g, k, s)

        if mode == "coalescing":
            groups: dict[int, list[int]] = {}
            for j, z in enumerate(d.positions):
                groups.setdefault(z, []).append(j)
            firing = list(groups.items())
        else:
            firing = [(d.positions[j], [j]) for j in range(k)]

        for z, movers in firing:
            for y, q in kernel.rows[z]:
                if q <= 0.0:
                    continue
                e = g.edge_id(z, y)
                if e in d.revealed_positive:
                    branches = [(q, False, None)]
                elif e in d.revealed_negative:
                    branches = [(q, True, None)]
                else:
                    branches = []
                    if p > 0.0:
                        branches.append((q * p, False, 1))
                    if p < 1.0:
                        branches.append((q * (1.0 - p), True, -1))
                for rate, flip, reveal_sign in branches:
                    nxt = d.copy()
                    for j in movers:
                        nxt.positions[j] = y
                        if flip:
                            nxt.signs[j] = -nxt.signs[j]
                    if reveal_sign == 1:
                        nxt.revealed_positive.add(e)
                    elif reveal_sign == -1:
                        nxt.revealed_negative.add(e)
                    target = encode_dual_state(g, nxt)
                    if target != s:
                        rows.append(s)
                        cols.append(target)
                        vals.append(rate)

        if v > 0.0:
            for e in d.revealed_positive | d.revealed_negative:
                nxt = d.copy()
                nxt.revealed_positive.discard(e)
                nxt.revealed_negative.discard(e)
                rows.append(s)
                cols.append(encode_dual_state(g, nxt))
                vals.append(v)

    return _assemble_generator(
        size,
        [np.asarray(rows, dtype=np.int64)],
        [np.asarray(cols, dtype=np.int64)],
        [np.asarray(vals, dtype=np.float64)],
    )


def forward_weight_vector(g: Graph, dual: DualState, p: float) -> np.ndarray:
    """Duality weight of every forward configuration against a fixed dual one."""
    size = forward_state_count(g)
    idx = np.arange(size, dtype=np.int64)
    mask = np.ones(size, dtype=bool)
    for z, s in zip(dual.positions, dual.signs):
        mask &= ((idx >> z) & 1) == (1 if s > 0 else 0)
    for e in dual.revealed_positive:
        mask &= ((idx >> (g.vertex_count + e)) & 1) == 1
    for e in dual.revealed_negative:
        mask &= ((idx >> (g.vertex_count + e)) & 1) == 0
    weight = p ** (-len(dual.revealed_positive)) * (1.0 - p) ** (-len(dual.revealed_negative))
    return weight * mask.astype(np.float64)


def dual_weight_vector(g: Graph, k: int, forward_state: SpinBondState, p: float) -> np.ndarray:
    """Duality weight of every dual configuration against a fixed forward one."""
    size = dual_state_count(g, k)
    n, m = g.vertex_count, g.edge_count
    idx = np.arange(size, dtype=np.int64)
    site_plus = np.asarray(forward_state.site_signs) > 0
    edge_plus = np.asarray(forward_state.edge_signs) > 0

    ok = np.ones(size, dtype=bool)
    weight = np.ones(size, dtype=np.float64)
    sign_bits = idx // n**k
    for j in range(k):
        pos_j = (idx // n**j) % n
        want_plus = ((sign_bits >> j) & 1) == 1
        ok &= site_plus[pos_j] == want_plus
    env = idx // (n**k * 2**k)
    for e in range(m):
        digit = (env // 3**e) % 3
        ok &= ~((digit == 1) & ~edge_plus[e])
        ok &= ~((digit == 2) & edge_plus[e])
        weight *= np.where(digit == 1, 1.0 / p, 1.0)
        weight *= np.where(digit == 2, 1.0 / (1.0 - p), 1.0)
    return weight * ok


@dataclass(frozen=True)
class DualityCheck:
    lhs: float
    rhs: float
    gap: float


def exact_duality_check(
    g: Graph,
    kernel: AdoptionKernel,
    params: ModelParams,
    forward_initial: SpinBondState,
    dual_initial: DualState,
    t: float,
    mode: str = "coalescing",
) -> DualityCheck:
    """Both sides of the duality identity for one forward/dual state pair.

    The left side propagates the forward chain and weighs it against the
    dual initial condition; the right side propagates the dual chain and
    weighs it against the forward initial condition.
    """
    k = dual_initial.walker_count
    L_f = build_forward_generator(g, kernel, params)
    mu_t = transient_distribution(L_f, forward_delta(g, forward_initial), t)
    lhs = float(mu_t @ forward_weight_vector(g, dual_initial, params.p))

    L_d = build_dual_generator(g, kernel, params, k, mode=mode)
    nu_t = transient_distribution(L_d, dual_delta(g, dual_initial), t)
    rhs = float(nu_t @ dual_weight_vector(g, k, forward_initial, params.p))
    return DualityCheck(lhs=lhs, rhs=rhs, gap=abs(lhs - rhs))


def duality_gap_table(
    g: Graph,
    kernel: AdoptionKernel,
    params: ModelParams,
    forward_initial: SpinBondState,
    k: int,
    t: float,
    mode: str = "coalescing",
) -> list[tuple[int, float, float]]:
    """Duality gaps for every dual initial configuration at once.

    Returns (dual state index, lhs, rhs) triples. The right side for all
    initial conditions is a single semigroup action on the weight vector.
    """
    L_f = build_forward_generator(g, kernel, params)
    mu_t = transient_distribution(L_f, forward_delta(g, forward_initial), t)
    L_d = build_dual_generator(g, kernel, params, k, mode=mode)
    rhs_all = transient_action(L_d, dual_weight_vector(g, k, forward_initial, params.p), t)

    out = []
    for s in range(dual_state_count(g, k)):
        dual0 = decode_dual_state(g, k, s)
        lhs = float(mu_t @ forward_weight_vector(g, dual0, params.p))
        out.append((s, lhs, float(rhs_all[s])))
    return out
