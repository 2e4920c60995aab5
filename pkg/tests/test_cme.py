import math
from pathlib import Path

import mpmath as mp
import numpy as np
import pytest
from scipy.linalg import expm

import oracles
from paththerm import cme
from paththerm.errors import IrreversibleError, PairingError, ReducibleChainError, TruncationError
from paththerm.network import SCHLOGL_PSTAR, group_channels, parse_network, preset

GOLDEN = Path(__file__).parent / "golden"


def gen_for(net, lower, upper):
    return cme.build_generator(net, group_channels(net), cme.StateBox(lower, upper))


@pytest.fixture(scope="module")
def schlogl():
    net = preset("schlogl")
    g = gen_for(net, [0], [200])
    return net, g, cme.stationary(g)


def cycle_generator(**rates):
    net = preset("driven_cycle", rates or None)
    box = cme.StateBox.reachable(net, [1, 0, 0], [1, 1, 1])
    return net, cme.build_generator(net, box=box)


# --- state box -------------------------------------------------------------

def test_box_enumeration_is_lexicographic_bijection():
    box = cme.StateBox([0, 1], [2, 3])
    assert box.size == 9
    assert box.states[:4].tolist() == [[0, 1], [0, 2], [0, 3], [1, 1]]
    assert (box.indices(box.states) == np.arange(9)).all()
    assert box.indices([[3, 1], [0, 0]]).tolist() == [-1, -1]
    with pytest.raises(ValueError):
        cme.StateBox([2], [1])


def test_reachable_box_keeps_conserved_class():
    net = preset("xy_pair")
    box = cme.StateBox.reachable(net, [5, 5], [200, 200])
    assert box.size == 11
    assert (box.states.sum(axis=1) == 10).all()


# --- generator -------------------------------------------------------------

def test_birth_death_generator_is_tridiagonal():
    g = gen_for(preset("birth_death"), [0], [5])
    G = g.matrix.toarray()
    assert G.shape == (6, 6)
    assert np.count_nonzero(np.triu(G, 2)) == 0 and np.count_nonzero(np.tril(G, -2)) == 0
    np.testing.assert_allclose(G.sum(axis=0), 0.0, atol=1e-12)
    # reflecting truncation: top state has no outflow to 6
    assert G[5, 5] == -5.0
    assert g.boundary.tolist() == [False] * 5 + [True]


def test_schlogl_offdiagonals_sum_two_channels(schlogl):
    net, g, _ = schlogl
    W = g.matrix.toarray()
    p = SCHLOGL_PSTAR
    for x in (0, 1, 17, 120, 199):
        up = p["k1"] * p["A1"] + p["k2"] * p["A2"] * x
        assert W[x + 1, x] == pytest.approx(up, rel=1e-14)
    for x in (1, 2, 50, 200):
        down = p["km1"] * p["B1"] * x + p["km2"] * p["B2"] * x * (x - 1)
        assert W[x - 1, x] == pytest.approx(down, rel=1e-14)
    assert np.count_nonzero(np.triu(W, 2)) == 0 and np.count_nonzero(np.tril(W, -2)) == 0
    np.testing.assert_allclose(W.sum(axis=0), 0.0, atol=1e-9)
    assert (W - np.diag(np.diag(W)) >= 0).all()


def test_empty_network_zero_generator():
    net = parse_network("species X")
    g = gen_for(net, [0], [4])
    assert g.matrix.nnz == 0
    assert g.max_rate == 0.0


def test_channel_and_lumped_matrices(schlogl):
    net, g, _ = schlogl
    total = sum(g.channel_matrix(r) for r in range(net.R))
    np.testing.assert_allclose(total.toarray(), g.offdiagonal.toarray(), rtol=1e-15)
    lumped = g.lumped_matrix((1,)) + g.lumped_matrix((-1,))
    np.testing.assert_allclose(lumped.toarray(), g.offdiagonal.toarray(), rtol=1e-15)


# --- stationary --------------------------------------------------------------

def test_poisson_stationary():
    net = parse_network("species X\nreaction 0 -> X : 3.0\nreaction X -> 0 : 0.5")
    g = gen_for(net, [0], [80])
    dist = cme.stationary(g)
    np.testing.assert_allclose(dist.probabilities, oracles.poisson_pmf(6.0, 80), rtol=1e-10, atol=1e-300)


def test_birth_death_ratio():
    net = preset("birth_death", {"k_f": 4.0, "k_b": 2.0, "A": 1})
    g = gen_for(net, [0], [60])
    p = cme.stationary(g).probabilities
    x = np.arange(20)
    np.testing.assert_allclose(p[x + 1] / p[x], 4.0 / (2.0 * (x + 1)), rtol=1e-12)


def test_schlogl_matches_golden(schlogl):
    _, g, dist = schlogl
    gold = cme.Distribution.from_csv(GOLDEN / "schlogl_pstar_0_200.csv")
    assert gold.box == g.box
    np.testing.assert_allclose(dist.probabilities, gold.probabilities, rtol=1e-11, atol=0)
    assert g.boundary_mass(dist) < 1e-10


def test_schlogl_power_iteration_agrees(schlogl):
    _, g, dist = schlogl
    power = cme.stationary(g, method="power")
    assert cme.total_variation(power, dist) <= 1e-8
    lu = cme.stationary(g, method="lu")
    assert cme.total_variation(lu, dist) <= 1e-8


def test_truncation_too_small():
    g = gen_for(preset("schlogl"), [0], [20])
    with pytest.raises(TruncationError, match="truncation too small"):
        cme.stationary(g)
    # opting out of the check still solves
    assert cme.stationary(g, boundary_tol=None).probabilities.sum() == pytest.approx(1.0)


def test_reducible_chain_rejected():
    net = parse_network("species X\nreaction X -> 0 : 1.0")
    with pytest.raises(ReducibleChainError):
        cme.stationary(gen_for(net, [0], [5]))


def test_distribution_csv_roundtrip(tmp_path, schlogl):
    _, _, dist = schlogl
    dist.to_csv(tmp_path / "p.csv")
    back = cme.Distribution.from_csv(tmp_path / "p.csv")
    assert np.array_equal(back.probabilities, dist.probabilities)


def test_distribution_validation():
    box = cme.StateBox([0], [2])
    with pytest.raises(ValueError):
        cme.Distribution(box, [0.5, 0.5, 0.1])
    with pytest.raises(ValueError):
        cme.Distribution(box, [1.2, -0.2, 0.0])


# --- detailed balance ------------------------------------------------------------

def test_detailed_balance_schlogl(schlogl):
    _, g, dist = schlogl
    assert cme.detailed_balance_residual(g, dist) <= 1e-10
    assert cme.detailed_balance_residual(g, dist, mode="birth_death") <= 1e-10


def test_detailed_balance_violated_on_driven_cycle():
    net, g = cycle_generator()
    dist = cme.stationary(g)
    # uniform law, fluxes 2/3 versus 0.5/3
    assert cme.detailed_balance_residual(g, dist) == pytest.approx(0.75, rel=1e-12)
    with pytest.raises(ValueError):
        cme.detailed_balance_residual(g, dist, mode="birth_death")


def test_detailed_balance_single_state():
    net = parse_network("species X\nreaction X -> 0 : 1.0")
    g = gen_for(net, [0], [0])
    assert cme.detailed_balance_residual(g, cme.Distribution(g.box, [1.0])) == 0.0


# --- transient -------------------------------------------------------------------

def test_transient_identity_at_zero(schlogl):
    _, g, _ = schlogl
    p0 = cme.Distribution.delta(g.box, [7])
    assert np.array_equal(cme.transient(g, p0, 0.0).probabilities, p0.probabilities)


def test_transient_relaxes_to_stationary(schlogl):
    _, g, dist = schlogl
    t = 50 * cme.relaxation_time(g)
    pt = cme.transient(g, cme.Distribution.delta(g.box, [0]), t)
    assert cme.total_variation(pt, dist) <= 1e-8


def test_two_state_closed_form():
    net = parse_network("species X\nreaction 0 -> X : 1.3\nreaction X -> 0 : 0.4")
    g = gen_for(net, [0], [1])
    p0 = cme.Distribution.delta(g.box, [0])
    for t in (0.01, 0.3, 1.0, 5.0):
        pt = cme.transient(g, p0, t)
        assert pt.probabilities[1] == pytest.approx(oracles.two_state_transient(1.3, 0.4, t), rel=1e-11)


def test_transient_semigroup(schlogl):
    _, g, _ = schlogl
    p0 = cme.Distribution.delta(g.box, [30])
    a = cme.transient(g, cme.transient(g, p0, 0.2), 0.3)
    b = cme.transient(g, p0, 0.5)
    assert cme.total_variation(a, b) < 1e-10


def test_conditional_matrix_properties():
    net = preset("birth_death")
    g = gen_for(net, [0], [40])
    assert np.array_equal(cme.conditional_matrix(g, 0.0), np.eye(41))
    T = cme.conditional_matrix(g, 1.0)
    np.testing.assert_allclose(T.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(T, expm(g.matrix.toarray()), atol=1e-11)
    dt = 1e-4 / g.max_rate
    Tsmall = cme.conditional_matrix(g, dt)
    W = g.offdiagonal.toarray()
    mask = W > 0
    np.testing.assert_allclose(Tsmall[mask], W[mask] * dt, rtol=1e-2)


# --- entropy ---------------------------------------------------------------------

def test_ep_zero_at_equilibrium():
    g = gen_for(preset("birth_death"), [0], [60])
    assert abs(cme.mean_entropy_production_rate(g, cme.stationary(g))) <= 1e-12


def test_ep_schlogl_matches_extended_precision(schlogl):
    _, g, dist = schlogl
    pstar = oracles.schlogl_pstar(SCHLOGL_PSTAR, 200)
    ref = float(oracles.channel_ep_rate(SCHLOGL_PSTAR, pstar))
    value = cme.mean_entropy_production_rate(g, dist)
    assert value > 0
    assert value == pytest.approx(ref, rel=1e-10)


def test_ep_driven_cycle_matches_cycle_formula():
    rates = {"k_xy": 3.0, "k_yx": 0.4, "k_yz": 1.5, "k_zy": 0.7, "k_zx": 2.2, "k_xz": 0.9}
    net, g = cycle_generator(**rates)
    dist = cme.stationary(g)
    # states: X=0, Y=1, Z=2 in the oracle's numbering
    k = {(0, 1): 3.0, (1, 0): 0.4, (1, 2): 1.5, (2, 1): 0.7, (2, 0): 2.2, (0, 2): 0.9}
    p, ep = oracles.three_state_cycle_ep(k)
    current = p[0] * k[(0, 1)] - p[1] * k[(1, 0)]
    affinity = mp.log(mp.mpf(3.0 * 1.5 * 2.2) / mp.mpf(0.4 * 0.7 * 0.9))
    assert float(ep) == pytest.approx(float(current * affinity), rel=1e-12)
    order = [g.box.index(s) for s in ([1, 0, 0], [0, 1, 0], [0, 0, 1])]
    np.testing.assert_allclose(dist.probabilities[order], [float(v) for v in p], rtol=1e-12)
    assert cme.mean_entropy_production_rate(g, dist) == pytest.approx(float(ep), rel=1e-10)


def test_ep_requires_pairing_and_reverse_flux():
    net = parse_network("species X\nreaction 0 -> X : 1.0\nreaction X -> 0 : 1.0")
    g = gen_for(net, [0], [30])
    with pytest.raises(PairingError):
        cme.mean_entropy_production_rate(g, cme.stationary(g))
    irr = parse_network("species X\nreaction 0 -> X : 1.0\nreaction X -> 0 : 1.0\n"
                        "reaction X -> 0 : 0.5\nreaction 0 -> X : 0.1\npair 0 1\npair 2 3")
    gi = gen_for(irr, [0], [30])
    assert cme.mean_entropy_production_rate(gi, cme.stationary(gi)) > 0
    one_way = parse_network("species X Y\nreaction X -> Y : 1.0\nreaction Y -> X : 1.0\n"
                            "reaction X -> Y : 1.0\nreaction Y + X -> 2 X : 1.0\npair 0 1\npair 2 3")
    box = cme.StateBox.reachable(one_way, [1, 1], [2, 2])
    go = cme.build_generator(one_way, box=box)
    with pytest.raises(IrreversibleError):
        cme.mean_entropy_production_rate(go, cme.stationary(go))


def test_gibbs_shannon_entropy(schlogl):
    box = cme.StateBox([0], [9])
    assert cme.gibbs_shannon_entropy(cme.Distribution.delta(box, [3])) == 0.0
    assert cme.gibbs_shannon_entropy(cme.Distribution(box, np.full(10, 0.1))) == pytest.approx(math.log(10), rel=1e-14)
    _, _, dist = schlogl
    pstar = oracles.schlogl_pstar(SCHLOGL_PSTAR, 200)
    ref = -mp.fsum(v * mp.log(v) for v in pstar if v > 0)
    assert cme.gibbs_shannon_entropy(dist) == pytest.approx(float(ref), rel=1e-12)
