"""Reaction networks, mass-action semantics and deterministic simulation."""
from __future__ import annotations

import csv
import io
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .ode_ir import Monomial, PolyOdeSystem, StructuralError, Variable

SINGLE, PLUS, MINUS = "single", "plus", "minus"
SLOW, FAST = "slow", "fast"
ALWAYS, C1, C2 = "always", "C1", "C2"
GATES = (ALWAYS, C1, C2)


class SimulationError(RuntimeError):
    """Integration failed; carries the last good time and state."""

    def __init__(self, message, time=None, state=None, stage=None):
        super().__init__(message)
        self.time = time
        self.state = state
        self.stage = stage

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class DivergenceError(SimulationError):
    """A concentration exceeded the overflow guard."""


class NegativeConcentrationError(SimulationError):
    """A concentration dropped below the negative tolerance floor."""


class ContractViolation(ValueError):
    """A discrete stage contains chemistry without a closed-form completion."""


@dataclass(frozen=True)
class Species:
    name: str
    rail: str = SINGLE
    partner: str | None = None
    fixed: bool = False

    def __post_init__(self):
        if self.rail not in (SINGLE, PLUS, MINUS):
            raise StructuralError(f"bad rail {self.rail!r} for {self.name}")
        if (self.rail == SINGLE) != (self.partner is None):
            raise StructuralError(f"species {self.name}: rail species need a partner, single ones must not")
        if not re.fullmatch(r"[A-Za-z][^\s*^,{}]*", self.name):
            raise StructuralError(f"invalid species name {self.name!r}")

    @property
    def id(self) -> str:
        return self.name


def _multiset(items) -> tuple[tuple[str, int], ...]:
    if isinstance(items, Mapping):
        c = Counter({k: int(v) for k, v in items.items() if v})
    else:
        c = Counter(items)
    return tuple(sorted(c.items()))


@dataclass(frozen=True)
class Reaction:
    reactants: tuple[tuple[str, int], ...]
    products: tuple[tuple[str, int], ...]
    rate: float = 1.0
    speed: str = SLOW
    gate: str = ALWAYS

    def __post_init__(self):
        if not self.rate > 0:
            raise StructuralError(f"rate must be positive, got {self.rate}")
        if self.speed not in (SLOW, FAST):
            raise StructuralError(f"bad speed {self.speed!r}")
        if self.gate not in GATES:
            raise StructuralError(f"bad gate {self.gate!r}")
        if not self.reactants and not self.products:
            raise StructuralError("reaction with no reactants and no products")

    @classmethod
    def make(cls, reactants=(), products=(), rate=1.0, speed=SLOW, gate=ALWAYS) -> "Reaction":
        return cls(_multiset(reactants), _multiset(products), float(rate), speed, gate)

    @property
    def order(self) -> int:
        return sum(k for _, k in self.reactants)

    def net(self) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for s, k in self.products:
            out[s] += k
        for s, k in self.reactants:
            out[s] -= k
        return {s: k for s, k in out.items() if k}

    def species(self) -> set[str]:
        return {s for s, _ in self.reactants} | {s for s, _ in self.products}

    def replace(self, **kw) -> "Reaction":
        d = dict(reactants=self.reactants, products=self.products, rate=self.rate,
                 speed=self.speed, gate=self.gate)
        d.update(kw)
        return Reaction(**d)

    def to_text(self) -> str:
        return f"{_side_text(self.reactants)} ->{{{self.rate!r},{self.speed},{self.gate}}} {_side_text(self.products)}"

    @classmethod
    def from_text(cls, line: str) -> "Reaction":
        m = re.fullmatch(r"\s*(.*?)\s*->\{([^}]*)\}\s*(.*?)\s*", line)
        if not m:
            raise StructuralError(f"cannot parse reaction {line!r}")
        lhs, meta, rhs = m.groups()
        parts = [p.strip() for p in meta.split(",")]
        rate = float(parts[0])
        speed = parts[1] if len(parts) > 1 else SLOW
        gate = parts[2] if len(parts) > 2 else ALWAYS
        return cls(_parse_side(lhs), _parse_side(rhs), rate, speed, gate)


def _side_text(side) -> str:
    if not side:
        return "0"
    return " + ".join(f"{k}{s}" if k > 1 else s for s, k in side)


def _parse_side(text: str) -> tuple[tuple[str, int], ...]:
    if text in ("0", ""):
        return ()
    items: Counter = Counter()
    for tok in text.split(" + "):
        m = re.fullmatch(r"(\d*)([A-Za-z]\S*)", tok.strip())
        if not m:
            raise StructuralError(f"bad species token {tok!r}")
        items[m.group(2)] += int(m.group(1) or 1)
    return tuple(sorted(items.items()))


@dataclass(frozen=True)
class Crn:
    species: tuple[Species, ...]
    reactions: tuple[Reaction, ...] = ()

    def __post_init__(self):
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            dup = [n for n, c in Counter(names).items() if c > 1]
            raise StructuralError(f"duplicate species names {dup}")
        known = set(names)
        for s in self.species:
            if s.partner is not None and s.partner not in known:
                raise StructuralError(f"partner {s.partner} of {s.name} not registered")
        for r in self.reactions:
            missing = r.species() - known
            if missing:
                raise StructuralError(f"reaction {r.to_text()} references unregistered {sorted(missing)}")

    @cached_property
    def index(self) -> dict[str, int]:
        return {s.name: i for i, s in enumerate(self.species)}

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.species]

    def with_reactions(self, reactions: Iterable[Reaction]) -> "Crn":
        return Crn(self.species, tuple(reactions))

    def gated(self, active_gate: str | None) -> "Crn":
        if active_gate is None:
            return self
        return self.with_reactions(r for r in self.reactions if r.gate in (ALWAYS, active_gate))

    def rail_pairs(self) -> list[tuple[str, str]]:
        return [(s.name, s.partner) for s in self.species if s.rail == PLUS]

    def vector(self, values: Mapping[str, float] | Sequence[float] | None = None) -> np.ndarray:
        out = np.zeros(len(self.species))
        if values is None:
            return out
        if isinstance(values, Mapping):
            for k, v in values.items():
                out[self.index[k]] = v
            return out
        arr = np.asarray(values, dtype=float)
        if arr.shape != out.shape:
            raise StructuralError(f"state has shape {arr.shape}, expected {out.shape}")
        return arr.copy()

    def to_text(self) -> str:
        lines = []
        for s in self.species:
            extra = [s.rail] + ([s.partner] if s.partner else []) + (["fixed"] if s.fixed else [])
            lines.append("species " + " ".join([s.name] + extra))
        lines += [r.to_text() for r in self.reactions]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Crn":
        species, reactions = [], []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("species "):
                parts = line.split()[1:]
                name, rail = parts[0], parts[1]
                rest = parts[2:]
                fixed = "fixed" in rest
                rest = [p for p in rest if p != "fixed"]
                species.append(Species(name, rail, rest[0] if rest else None, fixed))
            else:
                reactions.append(Reaction.from_text(line))
        return cls(tuple(species), tuple(reactions))


def derive_mass_action(crn: Crn, kappa_fast: float = 1.0) -> PolyOdeSystem:
    """Mass-action ODEs of ``crn``; fixed species are folded in at unit concentration."""
    fixed = {s.name for s in crn.species if s.fixed}
    eqs: dict[str, list[Monomial]] = {s.name: [] for s in crn.species if not s.fixed}
    for r in crn.reactions:
        k = r.rate * (kappa_fast if r.speed == FAST else 1.0)
        powers = {s: m for s, m in r.reactants if s not in fixed}
        for s, dn in r.net().items():
            if s in fixed:
                raise StructuralError(f"fixed species {s} changes in {r.to_text()}")
            eqs[s].append(Monomial.of(k * dn, powers))
    variables = [Variable(s.name) for s in crn.species if not s.fixed]
    return PolyOdeSystem.build(variables, eqs)


@dataclass(frozen=True)
class SolverConfig:
    """Integrator settings; tolerances are the contract, the method is a choice."""

    rtol: float = 1e-8
    atol: float = 1e-10
    method: str = "LSODA"
    kappa_fast: float = 1e3
    tol_neg: float = 1e-10
    overflow: float = 1e6
    max_step: float = np.inf


@dataclass(frozen=True)
class Trajectory:
    names: tuple[str, ...]
    times: np.ndarray
    states: np.ndarray  # shape (len(times), len(names))

    def __post_init__(self):
        if self.states.shape != (len(self.times), len(self.names)):
            raise StructuralError("trajectory states misaligned with times/names")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise StructuralError("trajectory times must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return np.clip(self.states[-1], 0.0, None)

    def column(self, name: str) -> np.ndarray:
        return np.clip(self.states[:, self.names.index(name)], 0.0, None)

    def final_value(self, name: str) -> float:
        return float(self.final[self.names.index(name)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *self.names])
        for t, row in zip(self.times, np.clip(self.states, 0.0, None)):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:1] != ["t"]:
            raise StructuralError("trajectory CSV must start with a 't,...' header")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(rows[0]))
        return cls(tuple(rows[0][1:]), data[:, 0], data[:, 1:])


class _Overflow(Exception):
    def __init__(self, t, y):
        self.t, self.y = float(t), np.array(y)


class _Kinetics:
    """Vectorized mass-action right-hand side and Jacobian."""

    def __init__(self, crn: Crn, kappa_fast: float, overflow: float = np.inf):
        n = len(crn.species)
        self.overflow = overflow
        self.tripped: _Overflow | None = None
        self.n = n
        width = max([r.order for r in crn.reactions] + [1])
        idx = np.full((len(crn.reactions), width), n, dtype=int)  # slot n holds the constant 1.0
        k = np.empty(len(crn.reactions))
        S = np.zeros((n, len(crn.reactions)))
        fixed = {s.name: s.fixed for s in crn.species}
        for j, r in enumerate(crn.reactions):
            # fixed species are held at unit concentration
            slots = [n if fixed[s] else crn.index[s] for s, m in r.reactants for _ in range(m)]
            idx[j, :len(slots)] = slots
            k[j] = r.rate * (kappa_fast if r.speed == FAST else 1.0)
            for s, dn in r.net().items():
                if not fixed[s]:
                    S[crn.index[s], j] = dn
        self.idx, self.k, self.S = idx, k, S
        self.width = width

    def _ext(self, y):
        c = np.empty(self.n + 1)
        np.maximum(y, 0.0, out=c[:-1])
        c[-1] = 1.0
        return c

    def rhs(self, t, y):
        # checked here rather than as a solver event, which costs a root search per step;
        # past the guard the dynamics freeze so the integrator finishes quickly
        if self.tripped is not None:
            return np.zeros(self.n)
        if np.max(np.abs(y)) > self.overflow:
            self.tripped = _Overflow(t, y)
            return np.zeros(self.n)
        c = self._ext(y)
        return self.S @ (self.k * c[self.idx].prod(axis=1))

    def jac(self, t, y):
        c = self._ext(y)
        vals = c[self.idx]
        jf = np.zeros((len(self.k), self.n + 1))
        rows = np.arange(len(self.k))
        for slot in range(self.width):
            others = np.prod(np.delete(vals, slot, axis=1), axis=1) if self.width > 1 else np.ones(len(self.k))
            np.add.at(jf, (rows, self.idx[:, slot]), self.k * others)
        return self.S @ jf[:, :-1]


def simulate(crn: Crn, init, duration: float, active_gate: str | None = None,
             solver: SolverConfig = SolverConfig(), stage: str | None = None) -> Trajectory:
    """Integrate the mass-action ODEs of the reactions enabled by ``active_gate``.

    ``active_gate=None`` enables every reaction; otherwise only reactions gated
    ``always`` or ``active_gate`` run. Returns one row per accepted step.
    """
    y0 = crn.vector(init)
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if np.any(y0 < 0):
        bad = [crn.names[i] for i in np.flatnonzero(y0 < 0)]
        raise NegativeConcentrationError(f"negative initial concentration for {bad}", 0.0, y0, stage)
    active = crn.gated(active_gate)
    names = tuple(crn.names)
    if not active.reactions:
        return Trajectory(names, np.array([0.0, duration]), np.vstack([y0, y0]))
    kin = _Kinetics(active, solver.kappa_fast, solver.overflow)

    kw = dict(rtol=solver.rtol, atol=solver.atol, max_step=solver.max_step)
    if solver.method in ("LSODA", "BDF", "Radau"):
        kw["jac"] = kin.jac
    try:
        sol = solve_ivp(kin.rhs, (0.0, duration), y0, method=solver.method, **kw)
    except (ValueError, ArithmeticError) as exc:
        raise SimulationError(f"integrator raised: {exc}", 0.0, y0, stage) from exc
    if kin.tripped is not None:
        exc = kin.tripped
        i = int(np.argmax(np.abs(exc.y)))
        raise DivergenceError(f"{names[i]} exceeded overflow guard {solver.overflow:g} at t={exc.t:.4g}",
                              exc.t, exc.y, stage)
    if sol.status != 0:
        raise SimulationError(f"integration failed: {sol.message}", float(sol.t[-1]), sol.y[:, -1], stage)
    states = sol.y.T
    low = states.min(axis=0)
    # integrator noise scales with the tolerances, not just atol
    floor = -(solver.tol_neg + 10 * (solver.atol + solver.rtol * float(np.max(np.abs(states)))))
    if np.any(low < floor):
        i = int(np.argmin(low))
        raise NegativeConcentrationError(f"{names[i]} fell to {low[i]:.3g}", float(sol.t[-1]), states[-1], stage)
    return Trajectory(names, sol.t, states)


def apply_discrete_map(crn: Crn, init, max_passes: int = 64) -> np.ndarray:
    """Exact completion limit of a stage of fast reactions.

    Allowed chemistry: non-catalytic unimolecular conversions (branching
    splits by rate) and bimolecular mutual consumption ``A + B -> ...`` whose
    reactants have no other consumer. Anything else has no closed form.
    """
    state = crn.vector(init)
    uni: dict[str, list[Reaction]] = defaultdict(list)
    bi: list[Reaction] = []
    consumers: Counter = Counter()
    for r in crn.reactions:
        reac = dict(r.reactants)
        if set(reac) & {s for s, _ in r.products}:
            raise ContractViolation(f"catalytic reaction {r.to_text()} is slow chemistry")
        if r.order == 1:
            uni[r.reactants[0][0]].append(r)
        elif r.order == 2 and len(reac) == 2:
            bi.append(r)
        else:
            raise ContractViolation(f"reaction {r.to_text()} has no closed-form completion")
        for s in reac:
            consumers[s] += 1
    for r in bi:
        for s, _ in r.reactants:
            if consumers[s] > 1:
                raise ContractViolation(f"{s} is consumed by competing reactions including {r.to_text()}")
    idx = crn.index
    for _ in range(max_passes):
        moved = False
        for s, rs in uni.items():
            amount = state[idx[s]]
            if amount <= 0:
                continue
            total = sum(r.rate for r in rs)
            state[idx[s]] = 0.0
            for r in rs:
                share = amount * r.rate / total
                for p, k in r.products:
                    state[idx[p]] += k * share
            moved = True
        if not moved:
            for r in bi:
                (a, _), (b, _) = r.reactants
                amount = min(state[idx[a]], state[idx[b]])
                if amount > 0:
                    state[idx[a]] -= amount
                    state[idx[b]] -= amount
                    for p, k in r.products:
                        state[idx[p]] += k * amount
                    moved = True
            if not moved:
                return state
    raise ContractViolation("discrete stage did not settle; unimolecular cycle?")
