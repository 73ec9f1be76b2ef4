"""Polynomial ODE systems: the source form the CRN compiler lowers.

Variables are identified by name. Each carries a sign domain: ``nonnegative``
variables can be realized as a single species, ``real`` ones need a rail pair.
"""
from __future__ import annotations

import itertools
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

NONNEG = "nonnegative"
REAL = "real"
DOMAINS = (NONNEG, REAL)

PLUS = "+"
MINUS = "-"


class StructuralError(ValueError):
    """A system, monomial or network is malformed."""


def plus_rail(name: str) -> str:
    return name + PLUS


def minus_rail(name: str) -> str:
    return name + MINUS


@dataclass(frozen=True, order=True)
class Monomial:
    """``coefficient * prod(var ** power)`` with powers kept sorted by name."""

    powers: tuple[tuple[str, int], ...]
    coefficient: float

    def __post_init__(self):
        if self.coefficient == 0 or not math.isfinite(self.coefficient):
            raise StructuralError(f"monomial coefficient must be finite and nonzero, got {self.coefficient}")
        names = [v for v, _ in self.powers]
        if names != sorted(set(names)):
            raise StructuralError(f"monomial variables must be unique and sorted: {names}")
        for v, k in self.powers:
            if int(k) != k or k < 1:
                raise StructuralError(f"exponent of {v} must be a positive integer, got {k}")

    @classmethod
    def of(cls, coefficient: float, factors: Mapping[str, int] | Iterable[str] = ()) -> "Monomial":
        """Build from a mapping of powers or an iterable of (repeated) names."""
        counts: dict[str, int] = defaultdict(int)
        if isinstance(factors, Mapping):
            for v, k in factors.items():
                counts[v] += int(k)
        else:
            for v in factors:
                counts[v] += 1
        return cls(tuple(sorted((v, k) for v, k in counts.items() if k)), float(coefficient))

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.powers)

    @property
    def degree(self) -> int:
        return sum(k for _, k in self.powers)

    def power(self, name: str) -> int:
        return dict(self.powers).get(name, 0)

    def scaled(self, factor: float) -> "Monomial":
        return Monomial(self.powers, self.coefficient * factor)

    def times(self, name: str, k: int = 1) -> "Monomial":
        p = dict(self.powers)
        p[name] = p.get(name, 0) + k
        return Monomial.of(self.coefficient, p)

    def diff(self, name: str) -> "Monomial | None":
        k = self.power(name)
        if k == 0:
            return None
        p = dict(self.powers)
        p[name] = k - 1
        return Monomial.of(self.coefficient * k, p)

    def rename(self, mapping: Mapping[str, str]) -> "Monomial":
        p: dict[str, int] = defaultdict(int)
        for v, k in self.powers:
            p[mapping.get(v, v)] += k
        return Monomial.of(self.coefficient, p)

    def evaluate(self, values: Mapping[str, float]) -> float:
        out = self.coefficient
        for v, k in self.powers:
            out *= values[v] ** k
        return out

    def to_text(self) -> str:
        parts = [repr(abs(self.coefficient))] + [f"{v}^{k}" for v, k in self.powers]
        return "*".join(parts)


def collect(monomials: Iterable[Monomial]) -> tuple[Monomial, ...]:
    """Sum like terms and drop cancellations; used while deriving source ODEs."""
    acc: dict[tuple, float] = defaultdict(float)
    for m in monomials:
        acc[m.powers] += m.coefficient
    return tuple(sorted(Monomial(p, c) for p, c in acc.items() if c != 0.0))


@dataclass(frozen=True)
class Variable:
    name: str
    domain: str = NONNEG

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise StructuralError(f"unknown sign domain {self.domain!r} for {self.name}")
        if not self.name or re.search(r"[\s*^]", self.name) or self.name[0].isdigit():
            raise StructuralError(f"invalid variable name {self.name!r}")


@dataclass(frozen=True)
class PolyOdeSystem:
    """Immutable polynomial ODE system.

    ``equations`` pairs a differential variable with its right-hand side;
    variables without an equation are held constant.
    """

    variables: tuple[Variable, ...]
    equations: tuple[tuple[str, tuple[Monomial, ...]], ...] = ()

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise StructuralError(f"duplicate variables in {names}")
        known = set(names)
        seen = set()
        for target, rhs in self.equations:
            if target not in known:
                raise StructuralError(f"equation for unregistered variable {target!r}")
            if target in seen:
                raise StructuralError(f"variable {target!r} has more than one equation")
            seen.add(target)
            for m in rhs:
                missing = set(m.variables) - known
                if missing:
                    raise StructuralError(f"equation d{target}/dt references unregistered {sorted(missing)}")

    @classmethod
    def build(cls, variables: Iterable[Variable | tuple[str, str] | str],
              equations: Mapping[str, Iterable[Monomial]]) -> "PolyOdeSystem":
        vs = []
        for v in variables:
            if isinstance(v, Variable):
                vs.append(v)
            elif isinstance(v, str):
                vs.append(Variable(v))
            else:
                vs.append(Variable(*v))
        order = {v.name: i for i, v in enumerate(vs)}
        for t in equations:
            if t not in order:
                raise StructuralError(f"equation for unregistered variable {t!r}")
        eqs = tuple((t, tuple(sorted(equations[t]))) for t in sorted(equations, key=order.__getitem__))
        return cls(tuple(vs), eqs)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def domain(self, name: str) -> str:
        for v in self.variables:
            if v.name == name:
                return v.domain
        raise KeyError(name)

    @property
    def equation_map(self) -> dict[str, tuple[Monomial, ...]]:
        return dict(self.equations)

    def rhs(self, name: str) -> tuple[Monomial, ...]:
        return self.equation_map.get(name, ())

    def nonempty_equations(self) -> dict[str, tuple[Monomial, ...]]:
        return {t: rhs for t, rhs in self.equations if rhs}

    def same_equations(self, other: "PolyOdeSystem") -> bool:
        """Structural equality of the nonempty equations, ignoring registries."""
        return self.nonempty_equations() == other.nonempty_equations()

    def vector_field(self, order: Iterable[str] | None = None):
        """Return ``f(t, y)`` evaluating the system with state ordered by ``order``."""
        order = list(order or self.names)
        idx = {n: i for i, n in enumerate(order)}
        terms = []
        for target, rhs in self.equations:
            for m in rhs:
                terms.append((idx[target], m.coefficient,
                              np.array([idx[v] for v in m.variables], dtype=int),
                              np.array([k for _, k in m.powers], dtype=float)))

        def f(t, y):
            out = np.zeros(len(order))
            for i, c, vi, vk in terms:
                out[i] += c * np.prod(y[vi] ** vk)
            return out

        return f

    def to_text(self) -> str:
        lines = [f"var {v.name} {v.domain}" for v in self.variables]
        for target, rhs in self.equations:
            if not rhs:
                lines.append(f"d {target}/dt = 0")
                continue
            body = " ".join(f"{'+' if m.coefficient > 0 else '-'} {m.to_text()}" for m in rhs)
            lines.append(f"d {target}/dt = {body}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PolyOdeSystem":
        variables, equations = [], []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("var "):
                parts = line.split()
                if len(parts) != 3:
                    raise StructuralError(f"line {lineno}: expected 'var <name> <domain>'")
                variables.append(Variable(parts[1], parts[2]))
                continue
            m = re.fullmatch(r"d (\S+)/dt = (.*)", line)
            if not m:
                raise StructuralError(f"line {lineno}: cannot parse {line!r}")
            target, body = m.groups()
            equations.append((target, tuple(sorted(_parse_terms(body, lineno)))))
        return cls(tuple(variables), tuple(equations))


def _parse_terms(body: str, lineno: int) -> list[Monomial]:
    if body.strip() == "0":
        return []
    tokens = body.split()
    if len(tokens) % 2:
        raise StructuralError(f"line {lineno}: terms must be '<sign> <term>' pairs")
    out = []
    for sign, term in zip(tokens[::2], tokens[1::2]):
        if sign not in "+-":
            raise StructuralError(f"line {lineno}: bad sign {sign!r}")
        coef, *factors = term.split("*")
        powers = {}
        for fac in factors:
            name, _, k = fac.rpartition("^")
            if not name:
                raise StructuralError(f"line {lineno}: factor {fac!r} needs an exponent")
            powers[name] = powers.get(name, 0) + int(k)
        c = float(coef)
        out.append(Monomial.of(c if sign == "+" else -c, powers))
    return out


@dataclass(frozen=True)
class Violation:
    monomial: Monomial
    rule: str  # "real-domain" or "negative-cross-effect"
    detail: str = ""


@dataclass(frozen=True)
class KdeVerdict:
    target: str
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def is_kde(self) -> bool:
        return not self.violations


def classify_kde(system: PolyOdeSystem) -> dict[str, KdeVerdict]:
    """Per-equation check that the system is realizable by mass-action kinetics.

    An equation passes when every variable it touches is nonnegative and each
    negative term contains the differential variable.
    """
    out = {}
    domains = {v.name: v.domain for v in system.variables}
    for target, rhs in system.equations:
        bad = []
        if domains[target] == REAL:
            bad.append(Violation(rhs[0] if rhs else Monomial.of(1.0, [target]), "real-domain",
                                 f"differential variable {target} is real-valued"))
        for m in rhs:
            real = [v for v in m.variables if domains[v] == REAL and v != target]
            if real:
                bad.append(Violation(m, "real-domain", f"references real-valued {real}"))
            if m.coefficient < 0 and m.power(target) == 0:
                bad.append(Violation(m, "negative-cross-effect",
                                     f"negative term without {target}"))
        out[target] = KdeVerdict(target, tuple(bad))
    return out


def _expand_rails(m: Monomial, selected: set[str]) -> list[Monomial]:
    """Substitute v = v+ - v- for each selected variable; binomial per factor."""
    fixed = {v: k for v, k in m.powers if v not in selected}
    choices = []
    for v, k in m.powers:
        if v in selected:
            choices.append([(v, k, j) for j in range(k + 1)])
    out = []
    for combo in itertools.product(*choices):
        coef = m.coefficient
        powers = dict(fixed)
        for v, k, j in combo:
            coef *= math.comb(k, j) * (-1) ** j
            if k - j:
                powers[plus_rail(v)] = k - j
            if j:
                powers[minus_rail(v)] = j
        out.append(Monomial.of(coef, powers))
    return out


def dual_rail_transform(system: PolyOdeSystem, variables: Iterable[str], absorb: bool = False) -> PolyOdeSystem:
    """Rewrite selected variables as rail pairs ``v = v+ - v-``.

    Every monomial is expanded into one term per rail combination without
    merging like terms across monomials. For a selected target, positive terms
    feed ``v+`` and negative terms feed ``v-``. With ``absorb=True`` a term is
    instead realized as decay of the opposite-signed rail when that rail is a
    factor of the term, which keeps rail sums bounded (the Type-V pattern).
    """
    selected = set(variables)
    unknown = selected - set(system.names)
    if unknown:
        raise StructuralError(f"cannot dual-rail unregistered variables {sorted(unknown)}")
    new_vars = []
    for v in system.variables:
        if v.name in selected:
            new_vars += [Variable(plus_rail(v.name), NONNEG), Variable(minus_rail(v.name), NONNEG)]
        else:
            new_vars.append(v)
    eqs: dict[str, list[Monomial]] = {}
    for target, rhs in system.equations:
        if target not in selected:
            eqs[target] = [t for m in rhs for t in _expand_rails(m, selected)]
            continue
        tp, tm = plus_rail(target), minus_rail(target)
        eqs.setdefault(tp, [])
        eqs.setdefault(tm, [])
        for m in rhs:
            for term in _expand_rails(m, selected):
                if term.coefficient > 0:
                    if absorb and term.power(tm):
                        eqs[tm].append(term.scaled(-1.0))
                    else:
                        eqs[tp].append(term)
                else:
                    if absorb and term.power(tp):
                        eqs[tp].append(term)
                    else:
                        eqs[tm].append(term.scaled(-1.0))
    return PolyOdeSystem.build(new_vars, eqs)


def time_reverse(system: PolyOdeSystem) -> PolyOdeSystem:
    """Negate every term: forward evolution in ``tau = t_f - t``."""
    return PolyOdeSystem(system.variables,
                         tuple((t, tuple(sorted(m.scaled(-1.0) for m in rhs))) for t, rhs in system.equations))
