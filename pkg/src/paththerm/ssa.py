"""Gillespie direct-method simulation with channel-labelled trajectories.

A trajectory is stored as its initial state, the channel of every jump and
the holding times between jumps (the last entry is the final sojourn up to
``t_final``).  Event times are the running sums of the holding times, which
makes time reversal an exact involution.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property
from itertools import accumulate

import numpy as np

from .errors import PairingError
from .network import ReactionNetwork, group_channels

__all__ = [
    "RngStream",
    "JumpEvent",
    "Trajectory",
    "DiscretizedPath",
    "simulate",
    "reverse",
    "discretize",
    "state_at",
    "write_jsonl",
    "read_jsonl",
]

_BATCH = 4096
_CACHE_LIMIT = 200_000


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream: ``(seed, stream)`` fixes the sequence.

    Streams come from ``SeedSequence(seed, spawn_key=(stream,))`` feeding the
    counter-based Philox generator, so distinct indices are independent.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) & (2**64 - 1), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class JumpEvent:
    time: float
    channel: int
    jump: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Trajectory:
    network: ReactionNetwork
    initial_state: np.ndarray
    channels: np.ndarray
    waits: np.ndarray
    t_final: float
    absorbed: bool = False
    rng: RngStream | None = field(default=None, compare=False)

    def __post_init__(self):
        x0 = np.array(self.initial_state, dtype=np.int64).reshape(-1)
        ch = np.array(self.channels, dtype=np.int64).reshape(-1)
        w = np.array(self.waits, dtype=float).reshape(-1)
        if x0.size != self.network.N:
            raise ValueError(f"initial state has dimension {x0.size}, network has {self.network.N}")
        if w.size != ch.size + 1:
            raise ValueError("need one holding time per event plus the final sojourn")
        for a in (x0, ch, w):
            a.setflags(write=False)
        object.__setattr__(self, "initial_state", x0)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "waits", w)
        object.__setattr__(self, "t_final", float(self.t_final))

    def __eq__(self, other):
        return (
            isinstance(other, Trajectory)
            and self.network == other.network
            and np.array_equal(self.initial_state, other.initial_state)
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.waits, other.waits)
            and self.t_final == other.t_final
            and self.absorbed == other.absorbed
        )

    @property
    def n_events(self) -> int:
        return self.channels.size

    @cached_property
    def times(self) -> np.ndarray:
        t = np.cumsum(self.waits[:-1])
        t.setflags(write=False)
        return t

    @cached_property
    def states(self) -> np.ndarray:
        """``(n_events + 1, N)`` states; row ``i`` holds after the ``i``-th jump."""
        steps = self.network.jump_vectors[self.channels] if self.n_events else np.zeros((0, self.network.N), np.int64)
        out = np.vstack([self.initial_state, self.initial_state + np.cumsum(steps, axis=0)])
        if (out < 0).any():
            raise RuntimeError("trajectory replay produced a negative copy number")
        out.setflags(write=False)
        return out

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def events(self) -> list[JumpEvent]:
        jv = self.network.jump_vectors
        return [JumpEvent(float(t), int(c), tuple(int(v) for v in jv[c])) for t, c in zip(self.times, self.channels)]

    def window(self, t_start: float, t_end: float) -> "Trajectory":
        """Sub-trajectory on ``[t_start, t_end]``, shifted to start at time 0."""
        if not 0 <= t_start < t_end <= self.t_final:
            raise ValueError(f"window [{t_start}, {t_end}] not inside [0, {self.t_final}]")
        i0 = int(np.searchsorted(self.times, t_start, side="right"))
        i1 = int(np.searchsorted(self.times, t_end, side="right"))
        t = np.concatenate([[t_start], self.times[i0:i1], [t_end]])
        return Trajectory(self.network, self.states[i0], self.channels[i0:i1], np.diff(t), t_end - t_start)


@dataclass(frozen=True)
class DiscretizedPath:
    times: np.ndarray
    states: np.ndarray

    @property
    def n(self) -> int:
        return self.times.size - 1


class _Kinetics:
    """Plain-Python propensity tables with a per-state cache."""

    def __init__(self, network: ReactionNetwork):
        self.R = network.R
        self.factors = [float(f) for f in network.rate_factors]
        self.reactants = [
            [(s, int(r)) for s, r in enumerate(row) if r] for row in network.reactant_matrix
        ]
        self.jumps = [tuple(int(v) for v in row) for row in network.jump_vectors]
        grouping = group_channels(network)
        self.groups = [list(m) for m in grouping.groups.values()]
        self._direct = {}
        self._two_stage = {}

    def rates(self, x):
        out = []
        for f, reac in zip(self.factors, self.reactants):
            a = f
            for s, r in reac:
                n = x[s]
                if n < r:
                    a = 0.0
                    break
                a *= n if r == 1 else math.perm(n, r)
            out.append(a)
        return out

    def direct(self, x):
        entry = self._direct.get(x)
        if entry is None:
            cum = list(accumulate(self.rates(x)))
            entry = (cum, cum[-1] if cum else 0.0)
            if len(self._direct) > _CACHE_LIMIT:
                self._direct.clear()
            self._direct[x] = entry
        return entry

    def two_stage(self, x):
        entry = self._two_stage.get(x)
        if entry is None:
            a = self.rates(x)
            inner = [(members, list(accumulate(a[r] for r in members))) for members in self.groups]
            outer = list(accumulate(c[-1] for _, c in inner))
            entry = (outer, inner, outer[-1] if outer else 0.0)
            if len(self._two_stage) > _CACHE_LIMIT:
                self._two_stage.clear()
            self._two_stage[x] = entry
        return entry


def _pick(cum, u):
    # guard against u * total rounding up to the last cumulative value
    i = bisect_right(cum, u)
    while i >= len(cum) or (i > 0 and cum[i] == cum[i - 1]):
        i -= 1
    return i


def simulate(network: ReactionNetwork, x0, t_final: float, rng: RngStream, mode: str = "direct",
             max_events: int | None = None) -> Trajectory:
    """Exact stochastic simulation on ``[0, t_final]``.

    ``mode="direct"`` picks the channel with probability ``a_rho / a_tot``;
    ``mode="two_stage"`` first picks the jump vector with probability
    ``lumped / a_tot`` and then the channel inside that group with a second
    uniform number.  With ``max_events`` the run stops at that event and
    ``t_final`` becomes the time of the last event.  A state with ``a_tot = 0``
    ends the run with ``absorbed=True``; the state then holds until ``t_final``.
    """
    if mode not in ("direct", "two_stage"):
        raise ValueError(f"unknown mode {mode!r}")
    x = tuple(int(v) for v in np.asarray(x0).reshape(-1))
    if len(x) != network.N or min(x) < 0:
        raise ValueError(f"x0 must be a nonnegative vector of length {network.N}")
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    if math.isinf(t_final) and max_events is None:
        raise ValueError("an infinite t_final needs max_events")
    limit = math.inf if max_events is None else int(max_events)

    kin = _Kinetics(network)
    gen = rng.generator()
    two = mode == "two_stage"
    jumps = kin.jumps
    channels: list[int] = []
    waits: list[float] = []
    t = 0.0
    absorbed = False
    k = _BATCH
    while len(channels) < limit:
        if k == _BATCH:
            expo = gen.standard_exponential(_BATCH).tolist()
            u1 = gen.random(_BATCH).tolist()
            u2 = gen.random(_BATCH).tolist() if two else None
            k = 0
        if two:
            outer, inner, a_tot = kin.two_stage(x)
        else:
            cum, a_tot = kin.direct(x)
        if a_tot <= 0.0:
            absorbed = True
            break
        dt = expo[k] / a_tot
        if t + dt > t_final:
            break
        if two:
            members, inner_cum = inner[_pick(outer, u1[k] * a_tot)]
            rho = members[_pick(inner_cum, u2[k] * inner_cum[-1])]
        else:
            rho = _pick(cum, u1[k] * a_tot)
        k += 1
        t += dt
        waits.append(dt)
        channels.append(rho)
        x = tuple(a + b for a, b in zip(x, jumps[rho]))

    if math.isinf(t_final):
        t_final = t
    waits.append(t_final - t)
    traj = Trajectory(network, np.asarray(x0, dtype=np.int64).reshape(-1), channels, waits, t_final, absorbed, rng)
    traj.states  # replay check
    return traj


def reverse(trajectory: Trajectory) -> Trajectory:
    """Time reversal: start from the final state, replay jumps backwards through paired channels."""
    if trajectory.absorbed:
        raise ValueError("cannot reverse an absorbed trajectory")
    rev_map = trajectory.network.reverse_map
    used = np.unique(trajectory.channels)
    if any(rev_map[c] is None for c in used.tolist()):
        raise PairingError("trajectory uses a channel without a declared reverse")
    lookup = np.array([-1 if r is None else r for r in rev_map], dtype=np.int64)
    return Trajectory(
        trajectory.network,
        trajectory.final_state.copy(),
        lookup[trajectory.channels[::-1]] if trajectory.n_events else trajectory.channels,
        trajectory.waits[::-1],
        trajectory.t_final,
    )


def state_at(trajectory: Trajectory, t: float) -> np.ndarray:
    """Right-continuous state at time ``t``."""
    if not 0 <= t <= trajectory.t_final:
        raise ValueError(f"t={t} outside [0, {trajectory.t_final}]")
    return trajectory.states[int(np.searchsorted(trajectory.times, t, side="right"))].copy()


def discretize(trajectory: Trajectory, n: int) -> DiscretizedPath:
    """Read the trajectory off a uniform grid of ``n`` sub-intervals."""
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = np.linspace(0.0, trajectory.t_final, n + 1)
    idx = np.searchsorted(trajectory.times, grid, side="right")
    return DiscretizedPath(grid, trajectory.states[idx].copy())


def write_jsonl(trajectory: Trajectory, fh, seed: int | None = None, stream: int | None = None) -> None:
    """Header line then one ``{"t", "rho", "state"}`` line per event (post-jump state)."""
    if seed is None and trajectory.rng is not None:
        seed, stream = trajectory.rng.seed, trajectory.rng.stream
    header = {
        "x0": trajectory.initial_state.tolist(),
        "t_final": trajectory.t_final,
        "seed": seed,
        "stream": stream,
    }
    if trajectory.absorbed:
        header["absorbed"] = True
    fh.write(json.dumps(header) + "\n")
    for t, rho, state in zip(trajectory.times.tolist(), trajectory.channels.tolist(), trajectory.states[1:].tolist()):
        fh.write(json.dumps({"t": t, "rho": rho, "state": state}) + "\n")


def read_jsonl(fh, network: ReactionNetwork) -> Trajectory:
    header = json.loads(fh.readline())
    times, channels = [], []
    x = np.asarray(header["x0"], dtype=np.int64)
    for line in fh:
        if not line.strip():
            continue
        ev = json.loads(line)
        times.append(ev["t"])
        channels.append(ev["rho"])
        x = x + network.jump_vectors[ev["rho"]]
        if x.tolist() != ev["state"]:
            raise ValueError(f"event at t={ev['t']}: state {ev['state']} does not match replay {x.tolist()}")
    t = np.concatenate([[0.0], times, [header["t_final"]]])
    rng = RngStream(header["seed"], header["stream"]) if header.get("seed") is not None else None
    return Trajectory(network, header["x0"], channels, np.diff(t), header["t_final"],
                      bool(header.get("absorbed", False)), rng)
