"""Reaction networks: species, elementary channels, mass-action propensities.

A network is a list of species (dynamic or chemostatted) and a list of
irreversible elementary reactions.  Reversible steps are two records; an
optional pairing links each channel to its reverse.  Channels sharing a jump
vector over the dynamic species form a group, and the lumped rate of a group
is the sum of its members' propensities.

The text format parsed by :func:`parse_network`::

    # comment
    species X Y
    const A = 10
    reaction A + X -> 2 X : 0.5
    reaction 2 X -> A + X : 0.01
    pair 0 1
"""

from __future__ import annotations

import math
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import NetworkError, PairingError, ParseError

__all__ = [
    "Species",
    "Reaction",
    "ReactionNetwork",
    "ChannelGrouping",
    "parse_network",
    "serialize_network",
    "propensity",
    "propensities",
    "group_channels",
    "lumped_rate",
    "preset",
    "PRESETS",
    "SCHLOGL_PSTAR",
]

DYNAMIC = "dynamic"
CHEMOSTATTED = "chemostatted"

_IDENT = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class Species:
    name: str
    kind: str = DYNAMIC
    fixed_count: int | None = None

    def __post_init__(self):
        if not _IDENT.match(self.name):
            raise NetworkError(f"invalid species name {self.name!r}")
        if self.kind == DYNAMIC:
            if self.fixed_count is not None:
                raise NetworkError(f"dynamic species {self.name} cannot carry a fixed count")
        elif self.kind == CHEMOSTATTED:
            if self.fixed_count is None or int(self.fixed_count) != self.fixed_count or self.fixed_count < 0:
                raise NetworkError(f"chemostatted species {self.name} needs a nonnegative integer count")
        else:
            raise NetworkError(f"unknown species kind {self.kind!r}")

    @property
    def is_dynamic(self) -> bool:
        return self.kind == DYNAMIC


@dataclass(frozen=True)
class Reaction:
    """One elementary channel ``reactants -> products`` with mass-action rate constant."""

    id: int
    reactants: Mapping[str, int]
    products: Mapping[str, int]
    rate_constant: float

    def __post_init__(self):
        if not (self.rate_constant > 0 and math.isfinite(self.rate_constant)):
            raise NetworkError(f"reaction {self.id}: rate constant must be positive, got {self.rate_constant}")
        for side in (self.reactants, self.products):
            for name, coeff in side.items():
                if int(coeff) != coeff or coeff < 0:
                    raise NetworkError(f"reaction {self.id}: bad coefficient {coeff} for {name}")
        if not any(c > 0 for c in self.reactants.values()) and not any(c > 0 for c in self.products.values()):
            raise NetworkError(f"reaction {self.id}: no species on either side")


@dataclass(frozen=True)
class ReactionNetwork:
    species: tuple[Species, ...]
    reactions: tuple[Reaction, ...]
    pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise NetworkError(f"duplicate species {dup}")
        if self.N < 1:
            raise NetworkError("network needs at least one dynamic species")
        declared = set(names)
        for i, rx in enumerate(self.reactions):
            if rx.id != i:
                raise NetworkError(f"reaction ids must be 0..R-1 in order, got {rx.id} at position {i}")
            for name in (*rx.reactants, *rx.products):
                if name not in declared:
                    raise NetworkError(f"reaction {i}: undeclared species {name}")
        seen = set()
        for a, b in self.pairs:
            for r in (a, b):
                if not 0 <= r < self.R:
                    raise PairingError(f"pair ({a}, {b}): no reaction {r}")
                if r in seen:
                    raise PairingError(f"reaction {r} paired twice")
                seen.add(r)
            if a == b:
                raise PairingError(f"reaction {a} cannot be its own reverse")
            if not np.array_equal(self.jump_vectors[a], -self.jump_vectors[b]):
                raise PairingError(f"pair ({a}, {b}): jump vectors are not opposite")

    @property
    def N(self) -> int:
        return sum(1 for s in self.species if s.is_dynamic)

    @property
    def R(self) -> int:
        return len(self.reactions)

    @cached_property
    def dynamic_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.species if s.is_dynamic)

    @cached_property
    def species_index(self) -> dict[str, int]:
        """Dynamic species name -> coordinate in a state vector."""
        return {name: i for i, name in enumerate(self.dynamic_names)}

    @cached_property
    def fixed_counts(self) -> dict[str, int]:
        return {s.name: int(s.fixed_count) for s in self.species if not s.is_dynamic}

    @cached_property
    def reactant_matrix(self) -> np.ndarray:
        """(R, N) reactant coefficients over dynamic species."""
        out = np.zeros((self.R, self.N), dtype=np.int64)
        for rx in self.reactions:
            for name, c in rx.reactants.items():
                if name in self.species_index:
                    out[rx.id, self.species_index[name]] += c
        return out

    @cached_property
    def jump_vectors(self) -> np.ndarray:
        """(R, N) net change of dynamic copy numbers per channel."""
        out = -self.reactant_matrix.copy()
        for rx in self.reactions:
            for name, c in rx.products.items():
                if name in self.species_index:
                    out[rx.id, self.species_index[name]] += c
        out.setflags(write=False)
        return out

    @cached_property
    def rate_factors(self) -> np.ndarray:
        """Rate constant times the chemostat falling factorials, per channel."""
        out = np.empty(self.R)
        for rx in self.reactions:
            f = rx.rate_constant
            for name, c in rx.reactants.items():
                if name in self.fixed_counts:
                    f *= math.perm(self.fixed_counts[name], c)
            out[rx.id] = f
        out.setflags(write=False)
        return out

    @cached_property
    def reverse_map(self) -> tuple[int | None, ...]:
        rev: list[int | None] = [None] * self.R
        for a, b in self.pairs:
            rev[a], rev[b] = b, a
        return tuple(rev)

    @property
    def fully_paired(self) -> bool:
        return all(r is not None for r in self.reverse_map)

    def reverse_channel(self, rho: int) -> int:
        rev = self.reverse_map[rho]
        if rev is None:
            raise PairingError(f"reaction {rho} has no declared reverse channel")
        return rev

    def jump(self, rho: int) -> tuple[int, ...]:
        return tuple(int(v) for v in self.jump_vectors[rho])


@dataclass(frozen=True)
class ChannelGrouping:
    groups: dict[tuple[int, ...], list[int]] = field(default_factory=dict)
    multigraph: bool = False

    @cached_property
    def group_of(self) -> dict[int, tuple[int, ...]]:
        return {rho: nu for nu, members in self.groups.items() for rho in members}

    @property
    def multigraph_groups(self) -> dict[tuple[int, ...], list[int]]:
        return {nu: m for nu, m in self.groups.items() if len(m) >= 2}


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<arrow>->)|(?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z][A-Za-z0-9_]*)|(?P<op>[+:=])|(?P<bad>\S))"
)


def _tokenize(line, lineno, source):
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN.match(line, pos)
        if m is None or m.end() == pos:
            break
        kind = m.lastgroup
        text = m.group(kind)
        col = m.start(kind) + 1
        if kind == "bad":
            raise ParseError(f"unexpected character {text!r}", lineno, col, source)
        tokens.append((kind, text, col))
        pos = m.end()
    return tokens


def _parse_side(tokens, lineno, source):
    """Parse ``term (+ term)*`` or ``0``; returns ordered dict name -> coeff."""
    side: OrderedDict[str, int] = OrderedDict()
    if len(tokens) == 1 and tokens[0][1] == "0":
        return side
    expect_term = True
    i = 0
    while i < len(tokens):
        kind, text, col = tokens[i]
        if expect_term:
            coeff = 1
            if kind == "number":
                if not text.isdigit():
                    raise ParseError(f"stoichiometric coefficient must be an integer, got {text!r}", lineno, col, source)
                coeff = int(text)
                if coeff == 0:
                    raise ParseError("coefficient 0 is not allowed in a term", lineno, col, source)
                i += 1
                if i >= len(tokens):
                    raise ParseError("expected species name after coefficient", lineno, col + len(text), source)
                kind, text, col = tokens[i]
            if kind != "name":
                raise ParseError(f"expected species name, got {text!r}", lineno, col, source)
            side[text] = side.get(text, 0) + coeff
            expect_term = False
        else:
            if text != "+":
                raise ParseError(f"expected '+', got {text!r}", lineno, col, source)
            expect_term = True
        i += 1
    if expect_term:
        col = tokens[-1][2] if tokens else 1
        raise ParseError("dangling '+' or empty side (write 0 for no species)", lineno, col, source)
    return side


def parse_network(text: str, source: str | None = None) -> ReactionNetwork:
    """Parse a network description; declaration order is preserved."""
    species: list[Species] = []
    declared: dict[str, int] = {}
    reactions: list[Reaction] = []
    pairs: list[tuple[int, int]] = []

    def declare(sp, lineno, col):
        if sp.name in declared:
            raise ParseError(f"duplicate species {sp.name}", lineno, col, source)
        declared[sp.name] = len(species)
        species.append(sp)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        tokens = _tokenize(line, lineno, source)
        if not tokens:
            continue
        kind, word, col = tokens[0]
        rest = tokens[1:]
        if kind != "name":
            raise ParseError(f"expected a directive, got {word!r}", lineno, col, source)
        if word == "species":
            if not rest:
                raise ParseError("species needs at least one name", lineno, col + len(word), source)
            for k, t, c in rest:
                if k != "name":
                    raise ParseError(f"expected species name, got {t!r}", lineno, c, source)
                declare(Species(t), lineno, c)
        elif word == "const":
            if len(rest) != 3 or rest[0][0] != "name" or rest[1][1] != "=" or rest[2][0] != "number":
                raise ParseError("expected 'const <name> = <nonnegative integer>'", lineno, col, source)
            value = rest[2][1]
            if not value.isdigit():
                raise ParseError(f"fixed count must be a nonnegative integer, got {value!r}", lineno, rest[2][2], source)
            declare(Species(rest[0][1], CHEMOSTATTED, int(value)), lineno, rest[0][2])
        elif word == "reaction":
            arrows = [i for i, tok in enumerate(rest) if tok[0] == "arrow"]
            colons = [i for i, tok in enumerate(rest) if tok[1] == ":"]
            if len(arrows) != 1:
                raise ParseError("reaction needs exactly one '->'", lineno, col, source)
            if len(colons) != 1 or colons[0] < arrows[0]:
                raise ParseError("reaction needs ': <rate>' after the products", lineno, col, source)
            a, c = arrows[0], colons[0]
            if c + 2 != len(rest) or rest[c + 1][0] != "number":
                bad = rest[c + 1][2] if c + 1 < len(rest) else rest[c][2] + 1
                raise ParseError("expected a single rate constant after ':'", lineno, bad, source)
            lhs_tokens, rhs_tokens = rest[:a], rest[a + 1:c]
            if not lhs_tokens:
                raise ParseError("empty reactant side (write 0)", lineno, rest[a][2], source)
            if not rhs_tokens:
                raise ParseError("empty product side (write 0)", lineno, rest[c][2], source)
            lhs = _parse_side(lhs_tokens, lineno, source)
            rhs = _parse_side(rhs_tokens, lineno, source)
            for name, tok in _names_with_cols(lhs_tokens + rhs_tokens):
                if name not in declared:
                    raise ParseError(f"undeclared species {name}", lineno, tok, source)
            rate = float(rest[c + 1][1])
            if not (rate > 0 and math.isfinite(rate)):
                raise ParseError(f"rate constant must be positive, got {rest[c + 1][1]}", lineno, rest[c + 1][2], source)
            try:
                reactions.append(Reaction(len(reactions), dict(lhs), dict(rhs), rate))
            except NetworkError as exc:
                raise ParseError(str(exc), lineno, col, source) from None
        elif word == "pair":
            if len(rest) != 2 or any(k != "number" or not t.isdigit() for k, t, _ in rest):
                raise ParseError("expected 'pair <reaction id> <reaction id>'", lineno, col, source)
            pairs.append((int(rest[0][1]), int(rest[1][1])))
        else:
            raise ParseError(f"unknown directive {word!r}", lineno, col, source)

    try:
        return ReactionNetwork(tuple(species), tuple(reactions), tuple(pairs))
    except NetworkError as exc:
        raise ParseError(str(exc), source=source) from None


def _names_with_cols(tokens):
    for kind, text, col in tokens:
        if kind == "name":
            yield text, col


def _format_side(side: Mapping[str, int]) -> str:
    if not side:
        return "0"
    return " + ".join(name if c == 1 else f"{c} {name}" for name, c in side.items())


def serialize_network(network: ReactionNetwork) -> str:
    """Render ``network`` in the text format; ``parse_network`` inverts it."""
    lines = []
    run: list[str] = []
    for sp in network.species:
        if sp.is_dynamic:
            run.append(sp.name)
            continue
        if run:
            lines.append("species " + " ".join(run))
            run = []
        lines.append(f"const {sp.name} = {sp.fixed_count}")
    if run:
        lines.append("species " + " ".join(run))
    for rx in network.reactions:
        lines.append(f"reaction {_format_side(rx.reactants)} -> {_format_side(rx.products)} : {rx.rate_constant!r}")
    for a, b in network.pairs:
        lines.append(f"pair {a} {b}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# kinetics


def _falling_factorial(x: np.ndarray, r: int) -> np.ndarray:
    out = np.ones(x.shape, dtype=float)
    for j in range(r):
        out *= x - j
    # x < r gives a product through zero; force +0.0 there
    out[x < r] = 0.0
    return out


def propensities(network: ReactionNetwork, states) -> np.ndarray:
    """Mass-action propensities of every channel.

    ``states`` is a single composition vector (returns shape ``(R,)``) or an
    ``(M, N)`` array of them (returns ``(M, R)``).  Copy numbers below a
    reactant coefficient give exactly zero.
    """
    x = np.asarray(states, dtype=np.int64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != network.N:
        raise ValueError(f"state dimension {x.shape[1]} != N = {network.N}")
    if (x < 0).any():
        raise ValueError("states must have nonnegative copy numbers")
    out = np.empty((x.shape[0], network.R))
    for rho in range(network.R):
        a = np.full(x.shape[0], network.rate_factors[rho])
        for s, r in enumerate(network.reactant_matrix[rho]):
            if r:
                a *= _falling_factorial(x[:, s], int(r))
        out[:, rho] = a
    return out[0] if single else out


def propensity(network: ReactionNetwork, state: Sequence[int], rho: int) -> float:
    """Propensity of channel ``rho`` at ``state``:
    ``k * prod_s ff(X_s, r_s)`` with chemostats entering at their fixed count."""
    if not (isinstance(rho, (int, np.integer)) and 0 <= rho < network.R):
        raise IndexError(f"invalid reaction id {rho!r}")
    x = [int(v) for v in state]
    if len(x) != network.N or min(x, default=0) < 0:
        raise ValueError(f"state must be a nonnegative vector of length {network.N}")
    a = float(network.rate_factors[rho])
    for s, r in enumerate(network.reactant_matrix[rho]):
        if r:
            a *= math.perm(x[s], int(r))
    return a


def group_channels(network: ReactionNetwork) -> ChannelGrouping:
    groups: dict[tuple[int, ...], list[int]] = {}
    for rho in range(network.R):
        groups.setdefault(network.jump(rho), []).append(rho)
    return ChannelGrouping(groups, any(len(g) >= 2 for g in groups.values()))


def lumped_rate(network: ReactionNetwork, grouping: ChannelGrouping, state, nu) -> float:
    """Summed propensity of all channels whose jump vector is ``nu``."""
    key = tuple(int(v) for v in nu)
    if key not in grouping.groups:
        raise KeyError(f"no channel has jump vector {key}")
    return sum(propensity(network, state, rho) for rho in grouping.groups[key])


# ---------------------------------------------------------------------------
# presets

# Canonical Schlogl parameters.  Effective rates: birth 10 + 0.5 X, death
# X + 0.01 X (X - 1); unimodal around X ~ 15, channel ratios 10 vs 50 so the
# stationary state is driven away from equilibrium.
SCHLOGL_PSTAR = {
    "k1": 1.0, "km1": 1.0, "k2": 0.05, "km2": 0.01,
    "A1": 10, "B1": 1, "A2": 10, "B2": 1,
}

_DEFAULTS = {
    "schlogl": SCHLOGL_PSTAR,
    "xy_pair": {"k1": 1.0, "km1": 0.5, "k2": 0.02, "km2": 0.01},
    "driven_cycle": {"k_xy": 2.0, "k_yx": 0.5, "k_yz": 2.0, "k_zy": 0.5, "k_zx": 2.0, "k_xz": 0.5},
    "birth_death": {"k_f": 10.0, "k_b": 1.0, "A": 1},
    "scheme1": {},
}


def _scheme1(R, params):
    species = [Species("X")]
    for rho in range(1, R + 1):
        species.append(Species(f"A{rho}", CHEMOSTATTED, int(params[f"A{rho}"])))
        species.append(Species(f"B{rho}", CHEMOSTATTED, int(params[f"B{rho}"])))
    reactions = []
    pairs = []
    for rho in range(1, R + 1):
        left = {f"A{rho}": 1}
        right = {f"B{rho}": 1}
        if rho - 1:
            left["X"] = rho - 1
        right["X"] = rho
        i = len(reactions)
        reactions.append(Reaction(i, left, right, float(params[f"k{rho}"])))
        reactions.append(Reaction(i + 1, right, left, float(params[f"km{rho}"])))
        pairs.append((i, i + 1))
    return ReactionNetwork(tuple(species), tuple(reactions), tuple(pairs))


def _scheme1_keys(R):
    return [f"{p}{rho}" for rho in range(1, R + 1) for p in ("k", "km", "A", "B")]


def _pairwise(species, steps):
    reactions = []
    for i, (lhs, rhs, k) in enumerate(steps):
        reactions.append(Reaction(i, lhs, rhs, float(k)))
    pairs = [(i, i + 1) for i in range(0, len(reactions), 2)]
    return ReactionNetwork(tuple(species), tuple(reactions), tuple(pairs))


def preset(name: str, parameters: Mapping[str, float] | None = None) -> ReactionNetwork:
    """Build a named model.

    ``schlogl`` and ``scheme1`` follow ``A_r + (r-1) X <-> B_r + r X`` for
    r = 1..R (``scheme1`` needs ``R`` plus ``k{r}, km{r}, A{r}, B{r}``);
    ``xy_pair`` is X <-> Y together with X + Y <-> 2 Y; ``driven_cycle`` is the
    unicyclic X <-> Y <-> Z <-> X; ``birth_death`` is A <-> X.  Forward and
    backward records are adjacent and paired.
    """
    if name not in _DEFAULTS:
        raise NetworkError(f"unknown preset {name!r}; choose from {sorted(_DEFAULTS)}")
    params = dict(_DEFAULTS[name])
    given = dict(parameters or {})
    if name == "scheme1":
        if "R" not in given:
            raise NetworkError("scheme1 preset: missing parameter 'R'")
        R = int(given.pop("R"))
        if R < 1:
            raise NetworkError("scheme1 preset: R must be >= 1")
        required = _scheme1_keys(R)
    elif name == "schlogl":
        required = _scheme1_keys(2)
    else:
        required = list(params)
    unknown = set(given) - set(required)
    if unknown:
        raise NetworkError(f"{name} preset: unknown parameter(s) {sorted(unknown)}")
    params.update(given)
    missing = [k for k in required if k not in params]
    if missing:
        raise NetworkError(f"{name} preset: missing parameter(s) {missing}")

    if name in ("schlogl", "scheme1"):
        return _scheme1(2 if name == "schlogl" else R, params)
    if name == "xy_pair":
        species = [Species("X"), Species("Y")]
        steps = [
            ({"X": 1}, {"Y": 1}, params["k1"]),
            ({"Y": 1}, {"X": 1}, params["km1"]),
            ({"X": 1, "Y": 1}, {"Y": 2}, params["k2"]),
            ({"Y": 2}, {"X": 1, "Y": 1}, params["km2"]),
        ]
        return _pairwise(species, steps)
    if name == "driven_cycle":
        species = [Species("X"), Species("Y"), Species("Z")]
        steps = [
            ({"X": 1}, {"Y": 1}, params["k_xy"]),
            ({"Y": 1}, {"X": 1}, params["k_yx"]),
            ({"Y": 1}, {"Z": 1}, params["k_yz"]),
            ({"Z": 1}, {"Y": 1}, params["k_zy"]),
            ({"Z": 1}, {"X": 1}, params["k_zx"]),
            ({"X": 1}, {"Z": 1}, params["k_xz"]),
        ]
        return _pairwise(species, steps)
    # birth_death
    species = [Species("X"), Species("A", CHEMOSTATTED, int(params["A"]))]
    steps = [({"A": 1}, {"X": 1}, params["k_f"]), ({"X": 1}, {"A": 1}, params["k_b"])]
    return _pairwise(species, steps)


PRESETS = tuple(_DEFAULTS)


def preset_defaults(name: str) -> dict:
    """Default parameters of a preset (empty when every parameter is required)."""
    if name not in _DEFAULTS:
        raise NetworkError(f"unknown preset {name!r}; choose from {sorted(_DEFAULTS)}")
    return dict(_DEFAULTS[name] or {})
