import itertools
import json
import math

import numpy as np
import pytest
from scipy.linalg import expm

from paththerm import cme, pathentropy as pe, ssa
from paththerm.errors import InsufficientDataError, IrreversibleError
from paththerm.network import group_channels, preset


def setup(name, upper, params=None, x0=None, boundary_tol=1e-10):
    net = preset(name, params)
    if x0 is None:
        box = cme.StateBox([0], [upper])
    else:
        box = cme.StateBox.reachable(net, x0, [upper] * net.N)
    g = cme.build_generator(net, group_channels(net), box)
    return net, g, cme.stationary(g, boundary_tol=boundary_tol)


@pytest.fixture(scope="module")
def schlogl():
    return setup("schlogl", 200)


@pytest.fixture(scope="module")
def cycle():
    return setup("driven_cycle", 1, x0=[1, 0, 0])


def random_scheme1(rng, R):
    params = {"R": R}
    for r in range(1, R + 1):
        params[f"k{r}"] = float(rng.uniform(0.5, 2.0)) * 10.0 ** (1 - r)
        params[f"km{r}"] = float(rng.uniform(0.5, 2.0)) * 10.0 ** (1 - r) * (0.3 if r < R else 1.0)
        params[f"A{r}"] = int(rng.integers(1, 10))
        params[f"B{r}"] = int(rng.integers(1, 10))
    return params


# --- path functionals on trajectories -------------------------------------------------

def test_zero_event_trajectory(schlogl):
    net, g, p = schlogl
    tr = ssa.Trajectory(net, [12], [], [1.0], 1.0)
    assert pe.z_lumped(tr, g.grouping, p, p).value == 0.0
    assert pe.z_channel(tr, p, p).value == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_lumped_z_reduces_to_boundary_terms(seed):
    rng = np.random.default_rng(seed)
    R = 2 + seed % 2
    params = random_scheme1(rng, R)
    net, g, ps = setup("scheme1", 120, params, boundary_tol=None)
    p_start = cme.transient(g, cme.Distribution.delta(g.box, [3]), 0.7)
    p_end = cme.transient(g, p_start, 1.3)
    for i in range(20):
        x0 = int(np.argmax(ps.probabilities))
        tr = ssa.simulate(net, [x0], 2.0, ssa.RngStream(seed, i))
        xf = tr.final_state
        expected = (math.log(ps([xf[0]])) - math.log(ps([x0]))
                    + math.log(p_start([x0])) - math.log(p_end(xf)))
        got = pe.z_lumped(tr, g.grouping, p_start, p_end).value
        assert got == pytest.approx(expected, abs=1e-9)
        # stationary weighting cancels to zero
        assert abs(pe.z_lumped(tr, g.grouping, ps, ps).value) <= 1e-12


def test_antisymmetry_under_reversal(schlogl, cycle):
    for net, g, p in (schlogl, cycle):
        x0 = g.box.states[int(np.argmax(p.probabilities))]
        for i in range(50):
            tr = ssa.simulate(net, x0, 3.0, ssa.RngStream(17, i))
            rv = ssa.reverse(tr)
            for f in (lambda t: pe.z_lumped(t, g.grouping, p, p), lambda t: pe.z_channel(t, p, p)):
                assert f(rv).value == pytest.approx(-f(tr).value, abs=1e-10)


def test_singleton_groups_channel_equals_lumped(cycle):
    net, g, p = cycle
    for i in range(100):
        tr = ssa.simulate(net, [0, 1, 0], 2.0, ssa.RngStream(3, i))
        assert pe.z_channel(tr, p, p).value == pe.z_lumped(tr, g.grouping, p, p).value


def test_window_values_match_per_window_calls(schlogl):
    net, g, p = schlogl
    tr = ssa.simulate(net, [15], 10.0, ssa.RngStream(21))
    edges = np.linspace(0.0, 10.0, 41)
    for kind, f in (("lumped", lambda t: pe.z_lumped(t, g.grouping, p, p)), ("channel", lambda t: pe.z_channel(t, p, p))):
        fast = pe.window_z_values(tr, edges, kind, p, p, g.grouping)
        slow = [f(tr.window(a, b)).value for a, b in zip(edges[:-1], edges[1:])]
        np.testing.assert_allclose(fast, slow, atol=1e-10)


def test_driven_cycle_mean_rate(cycle):
    net, g, p = cycle
    tau = 1.0
    values, _, _ = pe.stationary_window_samples(net, g, p, "lumped", tau, 20_000, ssa.RngStream(0))
    sigma = cme.mean_entropy_production_rate(g, p)
    rate = values / tau
    assert abs(rate.mean() - sigma) < 3 * rate.std(ddof=1) / math.sqrt(rate.size)


def test_equilibrium_channel_mean_zero():
    net, g, p = setup("birth_death", 60)
    values, _, _ = pe.stationary_window_samples(net, g, p, "channel", 0.5, 10_000, ssa.RngStream(1))
    assert abs(values.mean()) < 3 * values.std(ddof=1) / math.sqrt(values.size)


def test_infinite_value_rejected():
    with pytest.raises(IrreversibleError):
        pe.ZSample(math.inf, (0.0, 1.0), "lumped")
    net, g, p = setup("birth_death", 60)
    q = cme.Distribution.delta(g.box, [5])
    tr = ssa.Trajectory(net, [5], [0], [0.5, 0.5], 1.0)
    with pytest.raises(IrreversibleError):
        pe.z_lumped(tr, g.grouping, q, q)


# --- discretized paths -------------------------------------------------------------

def bd_small():
    return setup("birth_death", 30, boundary_tol=None)


def test_z_conditional_trivial():
    net, g, p = bd_small()
    d = ssa.DiscretizedPath(np.array([0.0, 0.5]), np.array([[4], [4]]))
    assert pe.z_conditional(d, g, p, p).value == 0.0


def test_z_conditional_matches_matrix_exponential():
    net, g, p = bd_small()
    dt = 0.25
    E = expm(g.matrix.toarray() * dt)
    rng = np.random.default_rng(0)
    for _ in range(20):
        xs = np.cumsum(np.r_[rng.integers(5, 15), rng.integers(-1, 2, size=4)])
        d = ssa.DiscretizedPath(dt * np.arange(5), xs[:, None])
        fwd = sum(math.log(E[b, a]) for a, b in zip(xs[:-1], xs[1:]))
        back = sum(math.log(E[a, b]) for a, b in zip(xs[:-1], xs[1:]))
        ref = fwd - back + math.log(p([xs[0]])) - math.log(p([xs[-1]]))
        assert pe.z_conditional(d, g, p, p).value == pytest.approx(ref, abs=1e-10)


def test_path_probability_ratio_is_exp_z():
    net, g, p = setup("driven_cycle", 1, x0=[1, 0, 0])
    dt = 0.3
    states = g.box.states
    for path in itertools.product(range(g.size), repeat=4):
        d = ssa.DiscretizedPath(dt * np.arange(4), states[list(path)])
        lf = pe.path_log_probability(d, g, p)
        lr = pe.path_log_probability(pe.reverse_path(d), g, p)
        z = pe.z_conditional(d, g, p, p).value
        assert math.exp(lf - lr) == pytest.approx(math.exp(z), rel=1e-8)


def test_reversibility_gap_examples():
    net, g, p = setup("schlogl", 30, boundary_tol=None)
    gap, count = pe.max_reversibility_gap(g, p, 3, 0.1)
    assert count == 31 ** 4
    assert gap <= 1e-10
    assert pe.max_reversibility_gap(g, p, 0, 0.1) == (0.0, 31)
    _, gc, pc = setup("driven_cycle", 1, x0=[1, 0, 0])
    assert pe.max_reversibility_gap(gc, pc, 4, 0.1)[0] > 0.1
    with pytest.raises(ValueError, match="budget"):
        pe.max_reversibility_gap(g, p, 6, 0.1)


def test_gap_matches_direct_path_probabilities():
    _, g, p = setup("driven_cycle", 1, x0=[1, 0, 0])
    dt = 0.2
    gap, _ = pe.max_reversibility_gap(g, p, 3, dt)
    best = 0.0
    for path in itertools.product(range(3), repeat=4):
        d = ssa.DiscretizedPath(dt * np.arange(4), g.box.states[list(path)])
        best = max(best, abs(pe.path_log_probability(d, g, p) - pe.path_log_probability(pe.reverse_path(d), g, p)))
    assert gap == pytest.approx(best, rel=1e-12)


def isolated_jump_trajectories(net, count, n_coarse, t_final, seed):
    out = []
    i = 0
    while len(out) < count:
        tr = ssa.simulate(net, [1, 0, 0], t_final, ssa.RngStream(seed, i))
        i += 1
        if tr.n_events == 0:
            continue
        cells = np.floor(tr.times / (t_final / n_coarse)).astype(int)
        if np.unique(cells).size == cells.size:
            out.append(tr)
    return out


def test_conditional_converges_at_first_order_off_equilibrium(cycle):
    net, g, p = cycle
    ns = (1024, 2048, 4096)
    trs = isolated_jump_trajectories(net, 30, ns[0], 1.0, 5)
    T = {n: cme.conditional_matrix(g, 1.0 / n) for n in ns}
    diffs = []
    for n in ns:
        d = [abs(pe.z_conditional(ssa.discretize(tr, n), g, p, p, T[n]).value
                 - pe.z_lumped(tr, g.grouping, p, p).value) for tr in trs]
        diffs.append(np.mean(d))
    assert diffs[0] > 1e-4
    for a, b in zip(diffs[:-1], diffs[1:]):
        assert a / b == pytest.approx(2.0, rel=0.2)


# --- statistics ----------------------------------------------------------------------

def test_ft_on_exact_gaussian_law():
    # N(mu, 2 mu) satisfies ln P(z)/P(-z) = z exactly
    z = np.random.default_rng(1).normal(1.0, math.sqrt(2.0), size=100_000)
    res = pe.ft_test(z)
    assert res.holds
    assert 0.9 <= res.slope_ci[0] <= res.slope_ci[1] <= 1.1
    assert any(row["used"] for row in res.table)


def test_ft_symmetric_samples():
    s = np.random.default_rng(2).normal(0.0, 1.0, size=50_000)
    res = pe.ft_test(np.concatenate([s, -s]))
    assert res.slope == pytest.approx(0.0, abs=1e-12)
    assert not res.holds


def test_ft_degenerate_and_small():
    with pytest.raises(InsufficientDataError):
        pe.ft_test(np.zeros(20_000))
    with pytest.raises(InsufficientDataError):
        pe.ft_test(np.ones(100))


def test_symmetry_test():
    s = np.random.default_rng(3).exponential(size=10_000)
    mirrored = pe.symmetry_test(np.concatenate([s, -s]))
    assert mirrored.statistic == 0.0 and not mirrored.rejected
    shifted = pe.symmetry_test(np.random.default_rng(4).normal(0.3, 1.0, size=20_000))
    assert shifted.rejected
    with pytest.raises(InsufficientDataError):
        pe.symmetry_test(s[:100])


def test_histogram_examples():
    h = pe.histogram([2.5])
    assert h.counts.tolist() == [1] and h.total == 1
    s = np.random.default_rng(5).normal(size=1000)
    hs = pe.histogram(np.concatenate([s, -s]), symmetric=True)
    assert np.array_equal(hs.counts, hs.counts[::-1])
    np.testing.assert_allclose(hs.edges, -hs.edges[::-1], atol=1e-12)
    big = np.random.default_rng(6).normal(size=100_000)
    hb = pe.histogram(big)
    q75, q25 = np.percentile(big, [75, 25])
    predicted = (big.max() - big.min()) / (2 * (q75 - q25) * big.size ** (-1 / 3))
    assert predicted / 2 <= hb.counts.size <= predicted * 2
    assert hb.counts.sum() == hb.total
    assert (np.diff(hb.edges) > 0).all()
    with pytest.raises(InsufficientDataError):
        pe.histogram([])


def test_report_fields(tmp_path):
    z = np.random.default_rng(1).normal(1.0, math.sqrt(2.0), size=20_000)
    rep = pe.report("lumped", z, pe.ft_test(z), pe.symmetry_test(z))
    assert set(rep) == {"kind", "n_samples", "slope", "slope_ci", "ks_stat", "p_value", "histogram"}
    pe.dump_report(rep, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["n_samples"] == 20_000
    h = pe.histogram(z)
    h.to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "bin_left,bin_right,count"
