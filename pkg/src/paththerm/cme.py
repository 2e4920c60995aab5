"""Chemical master equation on a truncated state box.

The generator ``G`` is stored column-oriented: ``G[to, from]`` is the rate of
the jump ``from -> to`` and every column sums to zero.  Transitions that would
leave the box are dropped (reflecting truncation); the states where this
happens form the box *boundary* and their stationary mass is the truncation
diagnostic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve
from scipy.special import entr
from scipy.stats import poisson

from .errors import (
    IrreversibleError,
    NumericalError,
    PairingError,
    ReducibleChainError,
    StateSpaceTooLarge,
    TruncationError,
)
from .network import ChannelGrouping, ReactionNetwork, group_channels, propensities

__all__ = [
    "StateBox",
    "Generator",
    "Distribution",
    "build_generator",
    "stationary",
    "detailed_balance_residual",
    "transient",
    "conditional_matrix",
    "mean_entropy_production_rate",
    "gibbs_shannon_entropy",
    "relaxation_time",
    "total_variation",
    "MAX_STATES",
]

MAX_STATES = 2_000_000
# dense elimination is used up to this many states, sparse LU above
GTH_MAX_STATES = 3000
UNIFORMIZATION_TOL = 1e-12


class StateBox:
    """Integer box ``lower <= X <= upper`` with a fixed lexicographic enumeration.

    ``states`` may restrict the box to a subset (e.g. the class reachable from
    an initial state when copy numbers are conserved); the subset keeps the
    box's lexicographic order.
    """

    def __init__(self, lower, upper, states=None, max_states=MAX_STATES):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=np.int64))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=np.int64))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if (self.lower > self.upper).any() or (self.lower < 0).any():
            raise ValueError(f"need 0 <= lower <= upper, got {self.lower} and {self.upper}")
        self.shape = tuple(int(v) for v in self.upper - self.lower + 1)
        full = int(np.prod(self.shape, dtype=object))
        if states is None:
            if full > max_states:
                raise StateSpaceTooLarge(f"box has {full} states, cap is {max_states}")
            flat = np.arange(full)
        else:
            states = np.asarray(states, dtype=np.int64).reshape(-1, self.dim)
            flat = np.unique(np.ravel_multi_index(tuple((states - self.lower).T), self.shape))
            if flat.size > max_states:
                raise StateSpaceTooLarge(f"state set has {flat.size} states, cap is {max_states}")
        self._flat = flat
        self.states = np.stack(np.unravel_index(flat, self.shape), axis=1).astype(np.int64) + self.lower
        self.states.setflags(write=False)
        self._lookup = None if states is None else dict(zip(flat.tolist(), range(flat.size)))

    @classmethod
    def reachable(cls, network: ReactionNetwork, x0, upper, lower=None, max_states=MAX_STATES):
        """States of the box reachable from ``x0`` by in-box jumps with positive propensity."""
        x0 = np.asarray(x0, dtype=np.int64)
        lower = np.zeros_like(x0) if lower is None else np.asarray(lower, dtype=np.int64)
        upper = np.asarray(upper, dtype=np.int64)
        if ((x0 < lower) | (x0 > upper)).any():
            raise ValueError(f"x0 {x0} is outside the box")
        seen = {tuple(x0)}
        frontier = [x0]
        while frontier:
            block = np.array(frontier)
            props = propensities(network, block)
            frontier = []
            for rho in range(network.R):
                tgt = block + network.jump_vectors[rho]
                ok = (props[:, rho] > 0) & (tgt >= lower).all(axis=1) & (tgt <= upper).all(axis=1)
                for t in tgt[ok]:
                    key = tuple(t)
                    if key not in seen:
                        seen.add(key)
                        frontier.append(t)
            if len(seen) > max_states:
                raise StateSpaceTooLarge(f"reachable set exceeds {max_states} states")
        return cls(lower, upper, states=np.array(sorted(seen)), max_states=max_states)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def __len__(self):
        return self.size

    def __eq__(self, other):
        return (
            isinstance(other, StateBox)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
            and np.array_equal(self._flat, other._flat)
        )

    def __repr__(self):
        return f"StateBox(lower={self.lower.tolist()}, upper={self.upper.tolist()}, size={self.size})"

    def indices(self, states) -> np.ndarray:
        """Dense index of each state, ``-1`` for states outside the box."""
        x = np.atleast_2d(np.asarray(states, dtype=np.int64))
        inside = ((x >= self.lower) & (x <= self.upper)).all(axis=1)
        out = np.full(x.shape[0], -1, dtype=np.int64)
        if inside.any():
            flat = np.ravel_multi_index(tuple((x[inside] - self.lower).T), self.shape)
            if self._lookup is None:
                out[inside] = flat
            else:
                out[inside] = [self._lookup.get(f, -1) for f in flat.tolist()]
        return out

    def index(self, state) -> int:
        i = int(self.indices([state])[0])
        if i < 0:
            raise KeyError(f"state {list(state)} is not in {self!r}")
        return i


@dataclass(frozen=True, eq=False)
class Generator:
    """Channel-resolved transition rates on a box.

    ``channel_rates[rho]`` is ``(from_idx, to_idx, rate)`` for the in-box jumps
    of channel ``rho``; the lumped operator is their sum.
    """

    network: ReactionNetwork
    box: StateBox
    channel_rates: tuple
    propensity_table: np.ndarray
    boundary: np.ndarray
    grouping: ChannelGrouping = field(default=None)

    @property
    def size(self) -> int:
        return self.box.size

    @cached_property
    def offdiagonal(self) -> sp.csc_matrix:
        """Lumped off-diagonal rates ``W[to, from]`` (duplicate entries summed)."""
        M = self.size
        if not self.channel_rates:
            return sp.csc_matrix((M, M))
        f = np.concatenate([c[0] for c in self.channel_rates])
        t = np.concatenate([c[1] for c in self.channel_rates])
        w = np.concatenate([c[2] for c in self.channel_rates])
        W = sp.csc_matrix((w, (t, f)), shape=(M, M))
        W.sum_duplicates()
        return W

    @cached_property
    def outflow(self) -> np.ndarray:
        return np.asarray(self.offdiagonal.sum(axis=0)).ravel()

    @cached_property
    def matrix(self) -> sp.csc_matrix:
        return (self.offdiagonal - sp.diags(self.outflow)).tocsc()

    @property
    def max_rate(self) -> float:
        return float(self.outflow.max()) if self.size else 0.0

    def channel_matrix(self, rho: int) -> sp.csc_matrix:
        f, t, w = self.channel_rates[rho]
        return sp.csc_matrix((w, (t, f)), shape=(self.size, self.size))

    def lumped_matrix(self, nu) -> sp.csc_matrix:
        """Off-diagonal rates of the channels with jump vector ``nu``."""
        members = self.grouping.groups[tuple(int(v) for v in nu)]
        out = sp.csc_matrix((self.size, self.size))
        for rho in members:
            out = out + self.channel_matrix(rho)
        return out

    def boundary_mass(self, distribution: "Distribution") -> float:
        return float(distribution.probabilities[self.boundary].sum())

    def is_irreducible(self) -> bool:
        if self.size == 1:
            return True
        n, _ = connected_components(self.offdiagonal, directed=True, connection="strong")
        return n == 1


@dataclass(frozen=True, eq=False)
class Distribution:
    box: StateBox
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=float)
        if p.shape != (self.box.size,):
            raise ValueError(f"expected {self.box.size} probabilities, got shape {p.shape}")
        if (p < 0).any() or not np.isfinite(p).all():
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def delta(cls, box: StateBox, state) -> "Distribution":
        p = np.zeros(box.size)
        p[box.index(state)] = 1.0
        return cls(box, p)

    def __call__(self, state) -> float:
        i = int(self.box.indices([state])[0])
        return 0.0 if i < 0 else float(self.probabilities[i])

    def prob_of(self, states) -> np.ndarray:
        idx = self.box.indices(states)
        out = np.zeros(idx.size)
        out[idx >= 0] = self.probabilities[idx[idx >= 0]]
        return out

    def mean(self) -> np.ndarray:
        return self.probabilities @ self.box.states

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.box.dim)] + ["probability"])
            for x, p in zip(self.box.states.tolist(), self.probabilities.tolist()):
                w.writerow([*x, repr(p)])

    @classmethod
    def from_csv(cls, path, box: StateBox | None = None) -> "Distribution":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        states = rows[:, :-1].astype(np.int64)
        if box is None:
            box = StateBox(states.min(axis=0), states.max(axis=0), states=states)
        p = np.zeros(box.size)
        p[box.indices(states)] = rows[:, -1]
        return cls(box, p)


def total_variation(p, q) -> float:
    p = getattr(p, "probabilities", p)
    q = getattr(q, "probabilities", q)
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def build_generator(network: ReactionNetwork, grouping: ChannelGrouping | None = None,
                    box: StateBox | None = None, max_states: int = MAX_STATES) -> Generator:
    if box is None:
        raise ValueError("a state box is required")
    if box.dim != network.N:
        raise ValueError(f"box dimension {box.dim} != network dimension {network.N}")
    if box.size > max_states:
        raise StateSpaceTooLarge(f"box has {box.size} states, cap is {max_states}")
    grouping = grouping or group_channels(network)
    states = box.states
    props = propensities(network, states) if network.R else np.zeros((box.size, 0))
    boundary = np.zeros(box.size, dtype=bool)
    channel_rates = []
    src = np.arange(box.size)
    for rho in range(network.R):
        to = box.indices(states + network.jump_vectors[rho])
        live = props[:, rho] > 0
        boundary |= live & (to < 0)
        ok = live & (to >= 0)
        channel_rates.append((src[ok], to[ok], props[ok, rho]))
    props.setflags(write=False)
    boundary.setflags(write=False)
    return Generator(network, box, tuple(channel_rates), props, boundary, grouping)


# ---------------------------------------------------------------------------
# stationary solves


def _gth(generator: Generator) -> np.ndarray:
    """Grassmann-Taksar-Heyman state reduction (subtraction-free, entrywise accurate)."""
    A = generator.offdiagonal.T.toarray()  # A[from, to]
    np.fill_diagonal(A, 0.0)
    n = A.shape[0]
    s = np.zeros(n)
    for k in range(n - 1, 0, -1):
        row = A[k, :k]
        s[k] = row.sum()
        if s[k] <= 0:
            raise ReducibleChainError(f"state {k} cannot reach lower-indexed states")
        col = A[:k, k]
        i_nz = np.flatnonzero(col)
        j_nz = np.flatnonzero(row)
        if i_nz.size and j_nz.size:
            A[np.ix_(i_nz, j_nz)] += np.outer(col[i_nz], row[j_nz] / s[k])
    p = np.zeros(n)
    p[0] = 1.0
    for k in range(1, n):
        p[k] = p[:k] @ A[:k, k] / s[k]
    return p / p.sum()


def _normalization_lu(generator: Generator) -> np.ndarray:
    G = generator.matrix.tolil()
    n = G.shape[0]
    G[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[-1] = 1.0
    p = spsolve(G.tocsc(), b)
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def _power(generator: Generator, tol=1e-13, max_iter=5_000_000) -> np.ndarray:
    """Power iteration on the uniformized (lazy) transition matrix."""
    n = generator.size
    lam = 1.05 * generator.max_rate
    P = (sp.identity(n, format="csc") + generator.matrix / lam).tocsr()
    p = np.full(n, 1.0 / n)
    for it in range(max_iter):
        q = P @ p
        q /= q.sum()
        if it % 50 == 0 and np.abs(q - p).sum() < tol:
            return q
        p = q
    raise NumericalError("power iteration did not converge")


def stationary(generator: Generator, method: str = "auto", boundary_tol: float | None = 1e-10,
               residual_tol: float = 1e-10) -> Distribution:
    """Stationary distribution of an irreducible generator.

    ``method`` is ``"gth"`` (dense state reduction), ``"lu"`` (sparse solve
    with one balance row replaced by normalization) or ``"power"``; ``"auto"``
    picks ``gth`` for boxes up to ``GTH_MAX_STATES`` states and ``lu`` above.
    Raises :class:`TruncationError` when the boundary mass exceeds
    ``boundary_tol`` (pass ``None`` to skip the check).
    """
    if not generator.is_irreducible():
        raise ReducibleChainError("generator is not irreducible on the box (absorbing or transient states)")
    if generator.size == 1:
        p = np.ones(1)
    else:
        if method == "auto":
            method = "gth" if generator.size <= GTH_MAX_STATES else "lu"
        try:
            p = {"gth": _gth, "lu": _normalization_lu, "power": _power}[method](generator)
        except KeyError:
            raise ValueError(f"unknown method {method!r}") from None
        except (RuntimeError, ValueError) as exc:
            if method == "lu":
                p = _power(generator)
            else:
                raise NumericalError(f"stationary solve failed: {exc}") from exc
        residual = np.abs(generator.matrix @ p).max()
        if not residual <= residual_tol * max(generator.max_rate, 1.0):
            raise NumericalError(f"stationary residual {residual:.3e} exceeds tolerance")
    dist = Distribution(generator.box, p)
    if boundary_tol is not None:
        mass = generator.boundary_mass(dist)
        if mass >= boundary_tol:
            raise TruncationError(f"truncation too small: boundary mass {mass:.3e} >= {boundary_tol:g}")
    return dist


def detailed_balance_residual(generator: Generator, distribution: Distribution, mode: str = "pairwise") -> float:
    """Largest relative imbalance of stationary probability fluxes.

    ``mode="birth_death"`` requires N = 1 with jumps of +-1 and compares
    ``mu(X) P(X)`` with ``lambda(X-1) P(X-1)``; ``mode="pairwise"`` compares
    ``W(j|i) P(i)`` with ``W(i|j) P(j)`` over every lumped transition.  Pairs
    with a zero or subnormal flux or probability are skipped.
    """
    p = distribution.probabilities
    if mode == "birth_death":
        jumps = generator.network.jump_vectors
        if generator.network.N != 1 or (generator.network.R and not np.isin(jumps, (-1, 1)).all()):
            raise ValueError("birth_death mode needs N = 1 and every jump vector equal to +1 or -1")
    elif mode != "pairwise":
        raise ValueError(f"unknown mode {mode!r}")
    W = generator.offdiagonal.tocoo()
    if W.nnz == 0:
        return 0.0
    to, frm, w = W.row, W.col, W.data
    rev = generator.offdiagonal.tocsr()[frm, to]
    rev = np.asarray(rev).ravel()
    fwd_flux = w * p[frm]
    rev_flux = rev * p[to]
    scale = np.maximum(fwd_flux, rev_flux)
    # subnormal probabilities carry too few significant bits for a relative check
    tiny = np.finfo(float).tiny
    keep = (scale >= tiny) & (p[frm] >= tiny) & (p[to] >= tiny)
    if not keep.any():
        return 0.0
    return float((np.abs(fwd_flux - rev_flux)[keep] / scale[keep]).max())


# ---------------------------------------------------------------------------
# transient solves


def _poisson_weights(mu: float, tol: float):
    """Poisson(mu) weights for k = 0..K with right-tail mass <= tol."""
    K = int(poisson.isf(tol, mu)) + 1
    w = poisson.pmf(np.arange(K + 1), mu)
    return w


def _uniformized(generator: Generator):
    lam = generator.max_rate
    n = generator.size
    if lam == 0:
        return 0.0, None
    P = (sp.identity(n, format="csr") + generator.matrix.tocsr() / lam).tocsr()
    return lam, P


def transient(generator: Generator, p0: Distribution, t: float, tol: float = UNIFORMIZATION_TOL) -> Distribution:
    """``exp(G t) p0`` by uniformization."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if p0.box != generator.box:
        raise ValueError("p0 lives on a different box")
    lam, P = _uniformized(generator)
    if t == 0 or lam == 0:
        return Distribution(p0.box, p0.probabilities.copy())
    weights = _poisson_weights(lam * t, tol)
    v = p0.probabilities.copy()
    acc = weights[0] * v
    for w in weights[1:]:
        v = P @ v
        acc += w * v
    acc = np.clip(acc, 0.0, None)
    return Distribution(p0.box, acc / acc.sum())


def conditional_matrix(generator: Generator, dt: float, tol: float = UNIFORMIZATION_TOL) -> np.ndarray:
    """Dense ``T[to, from] = P(X=to, t+dt | X=from, t)``; columns sum to one."""
    if dt < 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    n = generator.size
    lam, P = _uniformized(generator)
    if dt == 0 or lam == 0:
        return np.eye(n)
    P = P.toarray()
    weights = _poisson_weights(lam * dt, tol)
    V = np.eye(n)
    acc = weights[0] * V
    for w in weights[1:]:
        V = P @ V
        acc += w * V
    return acc / acc.sum(axis=0, keepdims=True)


def relaxation_time(generator: Generator) -> float:
    """Inverse spectral gap ``1 / |Re lambda_2|`` of the lumped generator."""
    n = generator.size
    if n <= 1:
        return 0.0
    if n <= GTH_MAX_STATES:
        ev = np.linalg.eigvals(generator.matrix.toarray())
    else:
        from scipy.sparse.linalg import eigs

        ev = eigs(generator.matrix, k=min(6, n - 2), sigma=0, return_eigenvectors=False)
    re = np.sort(np.abs(ev.real))
    gap = re[1] if re.size > 1 else 0.0
    if gap <= 0:
        raise ReducibleChainError("zero spectral gap")
    return float(1.0 / gap)


# ---------------------------------------------------------------------------
# entropy


def mean_entropy_production_rate(generator: Generator, distribution: Distribution) -> float:
    """Channel-resolved mean entropy production rate (k_B = 1).

    ``1/2 sum_{rho, X} (J+ - J-) ln(J+/J-)`` with ``J+`` the flux of channel
    ``rho`` out of ``X`` and ``J-`` the flux of its paired reverse channel
    back.  Needs every live channel to have a live reverse.
    """
    net = generator.network
    p = distribution.probabilities
    props = generator.propensity_table
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    total = 0.0
    for rho, (frm, to, w) in enumerate(generator.channel_rates):
        if frm.size == 0:
            continue
        rev = net.reverse_map[rho]
        if rev is None:
            raise PairingError(f"channel {rho} has no paired reverse channel")
        w_rev = props[to, rev]
        if (w_rev <= 0).any():
            bad = generator.box.states[frm[np.argmax(w_rev <= 0)]]
            raise IrreversibleError(f"channel {rho} at state {bad.tolist()} has no reverse flux")
        live = (p[frm] > 0) & (p[to] > 0)
        log_ratio = np.log(w[live]) + logp[frm[live]] - np.log(w_rev[live]) - logp[to[live]]
        total += float(np.sum((w[live] * p[frm[live]] - w_rev[live] * p[to[live]]) * log_ratio))
    return 0.5 * total


def gibbs_shannon_entropy(distribution) -> float:
    p = getattr(distribution, "probabilities", distribution)
    return float(entr(np.asarray(p, dtype=float)).sum())
