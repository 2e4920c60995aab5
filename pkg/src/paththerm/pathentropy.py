"""Path functionals Z = ln P[path] / P[reversed path] and their statistics.

Three estimators are provided:

* ``z_lumped`` sums, over the jumps of a trajectory, the log ratio of the
  lumped forward and backward rates (all channels with the same jump vector
  summed), plus the endpoint term ``ln p_start(X0) / p_end(Xf)``.
* ``z_channel`` uses the recorded channel of every jump and its paired
  reverse channel instead of the lumped rates.
* ``z_conditional`` works on a discretized path with exact finite-time
  transition probabilities.

All values are in units of k_B.  A jump whose reverse rate vanishes makes Z
undefined and raises :class:`IrreversibleError`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cme import Distribution, Generator, conditional_matrix, relaxation_time
from .errors import InsufficientDataError, IrreversibleError, NumericalError, PairingError
from .network import ChannelGrouping, ReactionNetwork, group_channels, propensities
from .ssa import DiscretizedPath, RngStream, Trajectory, simulate

__all__ = [
    "ZSample",
    "Histogram",
    "FTResult",
    "SymmetryResult",
    "event_log_ratios",
    "z_lumped",
    "z_channel",
    "z_conditional",
    "path_log_probability",
    "reverse_path",
    "max_reversibility_gap",
    "window_z_values",
    "stationary_window_samples",
    "ft_test",
    "symmetry_test",
    "histogram",
    "fd_width",
    "report",
    "SIGNIFICANCE",
    "BOOTSTRAP_RESAMPLES",
]

SIGNIFICANCE = 0.01
BOOTSTRAP_RESAMPLES = 1000
MIN_SAMPLES = 10_000
MIN_BIN_COUNT = 20
BURN_IN_RELAXATION_TIMES = 20


@dataclass(frozen=True)
class ZSample:
    value: float
    window: tuple[float, float]
    kind: str
    endpoint_weighting: str = "stationary"

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise IrreversibleError(f"path functional is not finite ({self.value})")


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    total: int

    def rows(self):
        return list(zip(self.edges[:-1].tolist(), self.edges[1:].tolist(), self.counts.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count"])
            w.writerows(self.rows())


@dataclass(frozen=True)
class FTResult:
    slope: float
    slope_ci: tuple[float, float]
    table: list = field(repr=False)
    n_samples: int = 0
    bin_width: float = 0.0

    @property
    def holds(self) -> bool:
        return self.slope_ci[0] <= 1.0 <= self.slope_ci[1]


@dataclass(frozen=True)
class SymmetryResult:
    statistic: float
    p_value: float
    n_samples: int

    @property
    def rejected(self) -> bool:
        return self.p_value < SIGNIFICANCE


def _values(samples) -> np.ndarray:
    if len(samples) and isinstance(samples[0], ZSample):
        return np.array([s.value for s in samples])
    return np.asarray(samples, dtype=float).ravel()


# ---------------------------------------------------------------------------
# estimators on trajectories


def _group_tables(network: ReactionNetwork, grouping: ChannelGrouping):
    keys = list(grouping.groups)
    member = np.zeros((network.R, len(keys)))
    gid = np.empty(network.R, dtype=np.int64)
    rgid = np.full(network.R, -1, dtype=np.int64)
    pos = {k: i for i, k in enumerate(keys)}
    for i, k in enumerate(keys):
        for rho in grouping.groups[k]:
            member[rho, i] = 1.0
            gid[rho] = i
    for rho in range(network.R):
        back = tuple(-v for v in network.jump(rho))
        rgid[rho] = pos.get(back, -1)
    return member, gid, rgid


def event_log_ratios(trajectory: Trajectory, kind: str = "lumped", grouping: ChannelGrouping | None = None) -> np.ndarray:
    """Per-jump ``ln W(post|pre) / W(pre|post)``.

    ``kind="lumped"`` uses the summed rates of each jump-vector group,
    ``kind="channel"`` the recorded channel and its paired reverse.
    """
    net = trajectory.network
    if trajectory.n_events == 0:
        return np.zeros(0)
    pre = trajectory.states[:-1]
    post = trajectory.states[1:]
    ch = trajectory.channels
    rows = np.arange(ch.size)
    a_pre = propensities(net, pre)
    a_post = propensities(net, post)
    if kind == "lumped":
        grouping = grouping or group_channels(net)
        member, gid, rgid = _group_tables(net, grouping)
        if (rgid[ch] < 0).any():
            rho = int(ch[np.argmax(rgid[ch] < 0)])
            raise IrreversibleError(f"no channel reverses the jump of channel {rho}")
        fwd = (a_pre @ member)[rows, gid[ch]]
        back = (a_post @ member)[rows, rgid[ch]]
    elif kind == "channel":
        rev_map = net.reverse_map
        if any(rev_map[c] is None for c in np.unique(ch).tolist()):
            raise PairingError("channel-resolved Z needs a reverse pairing for every channel used")
        lookup = np.array([-1 if r is None else r for r in rev_map])
        fwd = a_pre[rows, ch]
        back = a_post[rows, lookup[ch]]
    else:
        raise ValueError(f"unknown kind {kind!r}")
    if (back <= 0).any():
        i = int(np.argmax(back <= 0))
        raise IrreversibleError(
            f"jump {pre[i].tolist()} -> {post[i].tolist()} has zero reverse rate; Z is undefined"
        )
    return np.log(fwd) - np.log(back)


def _boundary_term(p_start: Distribution, p_end: Distribution, x0, xf) -> float:
    a, b = p_start(x0), p_end(xf)
    if a <= 0 or b <= 0:
        raise IrreversibleError(f"endpoint probability is zero (p_start={a}, p_end={b})")
    return math.log(a) - math.log(b)


def _weighting(p_start, p_end):
    return "stationary" if p_start is p_end else "supplied"


def z_lumped(trajectory: Trajectory, grouping: ChannelGrouping | None, p_start: Distribution,
             p_end: Distribution) -> ZSample:
    inc = event_log_ratios(trajectory, "lumped", grouping)
    value = float(inc.sum()) + _boundary_term(p_start, p_end, trajectory.initial_state, trajectory.final_state)
    return ZSample(value, (0.0, trajectory.t_final), "lumped", _weighting(p_start, p_end))


def z_channel(trajectory: Trajectory, p_start: Distribution, p_end: Distribution) -> ZSample:
    inc = event_log_ratios(trajectory, "channel")
    value = float(inc.sum()) + _boundary_term(p_start, p_end, trajectory.initial_state, trajectory.final_state)
    return ZSample(value, (0.0, trajectory.t_final), "channel", _weighting(p_start, p_end))


def window_z_values(trajectory: Trajectory, edges, kind: str, p_start: Distribution, p_end: Distribution,
                    grouping: ChannelGrouping | None = None) -> np.ndarray:
    """Z of consecutive windows ``[edges[i], edges[i+1]]`` of one trajectory.

    Equivalent to calling ``z_lumped``/``z_channel`` on each ``trajectory.window``
    but vectorized; window sums are taken directly, not as cumsum differences.
    """
    edges = np.asarray(edges, dtype=float)
    if edges[0] < 0 or edges[-1] > trajectory.t_final or (np.diff(edges) <= 0).any():
        raise ValueError("window edges must increase inside [0, t_final]")
    inc = event_log_ratios(trajectory, kind, grouping)
    cut = np.searchsorted(trajectory.times, edges, side="right")
    starts, ends = cut[:-1], cut[1:]
    sums = np.zeros(starts.size)
    nonempty = ends > starts
    if nonempty.any() and inc.size:
        sums[nonempty] = np.add.reduceat(inc, starts[nonempty])[: nonempty.sum()]
        # reduceat runs to the next start; trim windows followed by empty ones
        idx = np.flatnonzero(nonempty)
        nxt = np.append(starts[nonempty][1:], inc.size)
        over = nxt > ends[nonempty]
        for i in idx[over]:
            sums[i] = inc[starts[i]:ends[i]].sum()
    states = trajectory.states[cut]
    with np.errstate(divide="ignore"):
        lp0 = np.log(p_start.prob_of(states[:-1]))
        lpf = np.log(p_end.prob_of(states[1:]))
    if not (np.isfinite(lp0).all() and np.isfinite(lpf).all()):
        raise IrreversibleError("a window endpoint has zero probability under the endpoint weighting")
    return sums + lp0 - lpf


def stationary_window_samples(network: ReactionNetwork, generator: Generator, p_stationary: Distribution,
                              kind: str, tau: float, n_windows: int, rng: RngStream, mode: str = "direct",
                              burn_in: float | None = None, x0=None):
    """Cut one long stationary run into ``n_windows`` windows of length ``tau``.

    The run starts at the most probable state and discards a burn-in of 20
    relaxation times of the generator.  Returns ``(values, trajectory, burn_in)``.
    """
    if burn_in is None:
        burn_in = BURN_IN_RELAXATION_TIMES * relaxation_time(generator)
    if x0 is None:
        x0 = generator.box.states[int(np.argmax(p_stationary.probabilities))]
    traj = simulate(network, x0, burn_in + n_windows * tau, rng, mode=mode)
    if traj.absorbed:
        raise NumericalError("stationary run was absorbed")
    edges = burn_in + tau * np.arange(n_windows + 1)
    edges[-1] = min(edges[-1], traj.t_final)
    values = window_z_values(traj, edges, kind, p_stationary, p_stationary)
    return values, traj, burn_in


# ---------------------------------------------------------------------------
# discretized paths


def _grid_step(dpath: DiscretizedPath) -> float:
    steps = np.diff(dpath.times)
    if steps.size == 0:
        return 0.0
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError("discretized path needs a uniform grid")
    return float(steps[0])


def _log_transition(generator, dt, transition):
    T = conditional_matrix(generator, dt) if transition is None else transition
    with np.errstate(divide="ignore"):
        return np.log(T)


def path_log_probability(dpath: DiscretizedPath, generator: Generator, p0: Distribution,
                         transition: np.ndarray | None = None) -> float:
    """``ln p0(X0) + sum ln P(X_i, t_i | X_{i-1}, t_{i-1})`` (Markov factorization)."""
    idx = generator.box.indices(dpath.states)
    if (idx < 0).any():
        raise ValueError("path leaves the generator's box")
    value = math.log(p0.probabilities[idx[0]]) if p0.probabilities[idx[0]] > 0 else -math.inf
    if dpath.n:
        L = _log_transition(generator, _grid_step(dpath), transition)
        value += float(L[idx[1:], idx[:-1]].sum())
    if not math.isfinite(value):
        raise NumericalError("path has a zero probability factor")
    return value


def reverse_path(dpath: DiscretizedPath) -> DiscretizedPath:
    return DiscretizedPath(dpath.times.copy(), dpath.states[::-1].copy())


def z_conditional(dpath: DiscretizedPath, generator: Generator, p_start: Distribution, p_end: Distribution,
                  transition: np.ndarray | None = None) -> ZSample:
    """Z from exact finite-step conditionals of the grid.

    For a time-homogeneous process the reverse conditional of step ``i`` is
    the forward conditional of the swapped pair, ``P(X_{i-1} | X_i; dt)``.
    """
    idx = generator.box.indices(dpath.states)
    if (idx < 0).any():
        raise ValueError("path leaves the generator's box")
    value = _boundary_term(p_start, p_end, dpath.states[0], dpath.states[-1])
    if dpath.n:
        L = _log_transition(generator, _grid_step(dpath), transition)
        fwd = L[idx[1:], idx[:-1]]
        back = L[idx[:-1], idx[1:]]
        if not (np.isfinite(fwd).all() and np.isfinite(back).all()):
            raise IrreversibleError("zero conditional probability along the grid")
        value += float((fwd - back).sum())
    return ZSample(value, (float(dpath.times[0]), float(dpath.times[-1])), "conditional", _weighting(p_start, p_end))


def max_reversibility_gap(generator: Generator, p0: Distribution, n: int, dt: float,
                          max_paths: int = 50_000_000, transition: np.ndarray | None = None):
    """Enumerate every ``n``-step grid path and compare forward and reverse log-probabilities.

    Paths with zero forward probability are skipped.  Returns
    ``(max_gap, n_paths)``; an infinite gap means some path has a positive
    probability but an impossible reverse.
    """
    M = generator.size
    if n == 0:
        return 0.0, M
    if M ** (n + 1) > max_paths:
        raise ValueError(f"enumeration budget exceeded: {M}^{n + 1} paths > {max_paths}")
    with np.errstate(divide="ignore"):
        lp = np.log(p0.probabilities)
    A = _log_transition(generator, dt, transition).T  # A[a, b] = ln P(b | a)
    gap = 0.0
    count = 0
    for x0 in range(M):
        # forward: lp[x0] + A[x0,x1] + ... + A[x_{n-1},x_n]; reverse starts from x_n
        fwd = lp[x0] + A[x0]
        back = A[:, x0].copy()
        for _ in range(n - 1):
            fwd = fwd[..., None] + A
            back = back[..., None] + A.T
        back = back + lp
        ok = np.isfinite(fwd)
        count += int(ok.sum())
        if ok.any():
            d = np.abs(fwd[ok] - back[ok])
            gap = max(gap, float(d.max()) if np.isfinite(d).all() else math.inf)
    return gap, count


# ---------------------------------------------------------------------------
# statistics


def fd_width(values) -> float:
    """Freedman-Diaconis bin width ``2 IQR n^(-1/3)``; zero for degenerate data."""
    v = np.asarray(values, dtype=float)
    q75, q25 = np.percentile(v, [75, 25])
    return float(2.0 * (q75 - q25) * v.size ** (-1.0 / 3.0))


def histogram(samples, width=None, symmetric: bool = False) -> Histogram:
    """Uniform-bin histogram.

    ``width`` defaults to the Freedman-Diaconis rule (Scott's rule when the
    IQR vanishes, unit width for a single distinct value).  With
    ``symmetric=True`` the edges are placed symmetrically about 0 with a bin
    centred on 0, so mirrored samples give mirrored counts.
    """
    v = _values(samples)
    if v.size == 0:
        raise InsufficientDataError("histogram of an empty sample")
    lo, hi = float(v.min()), float(v.max())
    if width is None:
        width = fd_width(v)
        if width <= 0:
            width = 3.49 * float(v.std()) * v.size ** (-1.0 / 3.0)
        if width <= 0:
            width = 1.0
    width = float(width)
    if symmetric:
        k = int(math.ceil(max(abs(lo), abs(hi)) / width - 0.5))
        edges = (np.arange(-k, k + 2) - 0.5) * width
    elif hi == lo:
        edges = np.array([lo - width / 2, lo + width / 2])
    else:
        nb = max(1, int(math.ceil((hi - lo) / width)))
        edges = lo + width * np.arange(nb + 1)
        edges[-1] = max(edges[-1], hi)
    counts, _ = np.histogram(v, bins=edges)
    return Histogram(edges, counts, int(v.size))


def _fit_slope(x, n_pos, n_neg, min_count):
    use = (n_pos >= min_count) & (n_neg >= min_count)
    if use.sum() < 1:
        return None
    # +0.5 on each count removes the leading small-count bias of a log ratio
    a, b = n_pos[use] + 0.5, n_neg[use] + 0.5
    y = np.log(a / b)
    w = 1.0 / (1.0 / a + 1.0 / b)
    xs = x[use]
    return float(np.sum(w * xs * y) / np.sum(w * xs * xs))


def ft_test(samples, bins=None, min_count: int = MIN_BIN_COUNT, n_boot: int = BOOTSTRAP_RESAMPLES,
            alpha: float = SIGNIFICANCE, seed: int = 0, min_samples: int = MIN_SAMPLES) -> FTResult:
    """Weighted least-squares slope of ``ln P(z)/P(-z)`` against ``z``.

    Bins are symmetric about 0 (width ``bins``, default Freedman-Diaconis).
    Each mirrored pair with at least ``min_count`` counts on both sides gives
    one point: ``y = ln((n+ + 1/2)/(n- + 1/2))`` with inverse-variance weight, regressed
    through the origin on the mean ``|z|`` of the pair's samples.  The CI is
    the ``1 - alpha`` percentile interval of a multinomial bootstrap of the
    bin counts.
    """
    v = _values(samples)
    if v.size < min_samples:
        raise InsufficientDataError(f"need at least {min_samples} samples, got {v.size}")
    width = fd_width(v) if bins is None else float(bins)
    if not width > 0:
        raise InsufficientDataError("samples are degenerate: no usable bin pairs")
    k = np.rint(v / width).astype(np.int64)
    kmax = int(np.abs(k).max())
    if kmax == 0:
        raise InsufficientDataError("samples are degenerate: no usable bin pairs")
    counts = np.bincount(k + kmax, minlength=2 * kmax + 1).astype(float)
    abs_sum = np.bincount(k + kmax, weights=np.abs(v), minlength=2 * kmax + 1)
    pos = np.arange(kmax + 1, 2 * kmax + 1)
    neg = 2 * kmax - pos
    n_pos, n_neg = counts[pos], counts[neg]
    pair_n = n_pos + n_neg
    x = np.where(pair_n > 0, (abs_sum[pos] + abs_sum[neg]) / np.maximum(pair_n, 1), 0.0)
    slope = _fit_slope(x, n_pos, n_neg, min_count)
    if slope is None:
        raise InsufficientDataError(f"no bin pair has {min_count} counts on both sides")
    rng = np.random.default_rng(seed)
    boot = []
    p = counts / counts.sum()
    for _ in range(n_boot):
        c = rng.multinomial(v.size, p).astype(float)
        s = _fit_slope(x, c[pos], c[neg], min_count)
        if s is not None:
            boot.append(s)
    lo, hi = np.percentile(boot, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    use = (n_pos >= min_count) & (n_neg >= min_count)
    table = [
        {"zeta": float(x[i]), "n_pos": int(n_pos[i]), "n_neg": int(n_neg[i]),
         "log_ratio": float(np.log((n_pos[i] + 0.5) / (n_neg[i] + 0.5))) if use[i] else None, "used": bool(use[i])}
        for i in range(kmax) if pair_n[i] > 0
    ]
    return FTResult(slope, (float(lo), float(hi)), table, int(v.size), width)


def symmetry_test(samples, min_samples: int = MIN_SAMPLES) -> SymmetryResult:
    """Two-sample Kolmogorov-Smirnov test of the samples against their negation."""
    v = _values(samples)
    if v.size < min_samples:
        raise InsufficientDataError(f"need at least {min_samples} samples, got {v.size}")
    res = stats.ks_2samp(v, -v)
    return SymmetryResult(float(res.statistic), float(res.pvalue), int(v.size))


def report(kind: str, samples, ft: FTResult | None, sym: SymmetryResult | None, hist: Histogram | None = None,
           **extra) -> dict:
    """FT/symmetry report with the documented JSON fields plus ``extra``."""
    v = _values(samples)
    hist = hist or histogram(v)
    out = {
        "kind": kind,
        "n_samples": int(v.size),
        "slope": None if ft is None else ft.slope,
        "slope_ci": None if ft is None else list(ft.slope_ci),
        "ks_stat": None if sym is None else sym.statistic,
        "p_value": None if sym is None else sym.p_value,
        "histogram": [list(r) for r in hist.rows()],
    }
    out.update(extra)
    return out


def dump_report(rep: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=False)
        fh.write("\n")
