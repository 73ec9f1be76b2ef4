"""Lowering polynomial ODEs to reactions and assembling Neural CRN circuits."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

import numpy as np

from .crn import (ALWAYS, C1, C2, FAST, MINUS, PLUS, SINGLE, SLOW, Crn, Reaction,
                  Species)
from .ode_ir import (NONNEG, REAL, Monomial, PolyOdeSystem, StructuralError, Variable,
                     classify_kde, collect, dual_rail_transform, minus_rail, plus_rail,
                     time_reverse)

VARIANTS = ("linreg", "nlreg", "lincls", "nlcls", "nlclsV2", "theta_z")
MATRIX_VARIANTS = ("nlcls", "nlclsV2")
BIAS_VARIANTS = ("linreg", "lincls", "nlcls")
STAGES = ("N1", "N2", "N3", "N4")
CONSTANT = "B"
ROLES = ("X", "Y", "Yhat", "P", "Z", "Zb", "A", "G", "B", "C")


class ConfigError(ValueError):
    """Invalid circuit configuration."""


class NonKdeError(StructuralError):
    """A system handed to the canonic mechanism is not a KDE."""

    def __init__(self, verdicts):
        self.verdicts = verdicts
        lines = [f"d{t}/dt: {v.rule} in {v.monomial.to_text()} ({v.detail})"
                 for t, vd in verdicts.items() for v in vd.violations]
        super().__init__("system is not a KDE:\n  " + "\n  ".join(lines))


@dataclass(frozen=True)
class CircuitConfig:
    """Hyperparameters of a Neural CRN circuit.

    ``f_theta`` picks the hidden-state dynamics. Vector-parameter variants use
    elementwise ``theta * x``; ``nlcls``/``nlclsV2`` use a full matrix over the
    augmented ``d + p`` dimensions. Fields left as ``None`` resolve to
    per-variant defaults (see the ``resolved_*`` properties).
    """

    f_theta: str = "linreg"
    d: int = 2
    p: int = 0
    T: float = 1.0
    epsilon: float | None = None
    eta: float = 1.0
    beta: float = 0.0
    alpha: float = 0.3
    theta_init: object = None
    pad_value: float = 0.0
    mode: str = "idealized"
    approx_gradients: bool = False
    z_init: str | None = None
    signed_inputs: bool | None = None
    signed_params: bool | None = None
    merge_adjoints: bool = False
    inference: bool = False

    def __post_init__(self):
        if self.f_theta not in VARIANTS:
            raise ConfigError(f"unknown f_theta {self.f_theta!r}; choose from {VARIANTS}")
        if int(self.d) != self.d or self.d < 1 or int(self.p) != self.p or self.p < 0:
            raise ConfigError(f"d must be >= 1 and p >= 0, got d={self.d}, p={self.p}")
        if not self.T > 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        if not 0 < self.eps <= 0.05 * self.T:
            raise ConfigError(f"epsilon must lie in (0, 0.05*T], got {self.eps}")
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.beta < 0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.mode not in ("idealized", "full_kinetics"):
            raise ConfigError(f"mode must be 'idealized' or 'full_kinetics', got {self.mode!r}")
        if self.mode == "full_kinetics" and self.eta != 1.0:
            raise ConfigError("full_kinetics mode only realizes eta = 1")
        if self.z_init not in (None, "zero", "copy-x"):
            raise ConfigError(f"z_init must be 'zero' or 'copy-x', got {self.z_init!r}")
        if self.theta_init is not None and not np.isscalar(self.theta_init):
            shape = np.shape(self.theta_init)
            if shape != self.theta_shape:
                raise ConfigError(f"theta_init has shape {shape}, {self.f_theta} with d+p={self.n} "
                                  f"needs {self.theta_shape}")

    @property
    def n(self) -> int:
        return int(self.d + self.p)

    @property
    def eps(self) -> float:
        return 0.01 * self.T if self.epsilon is None else float(self.epsilon)

    @property
    def matrix(self) -> bool:
        return self.f_theta in MATRIX_VARIANTS

    @property
    def theta_shape(self) -> tuple[int, ...]:
        return (self.n, self.n) if self.matrix else (self.n,)

    @property
    def resolved_z_init(self) -> str:
        return self.z_init or ("copy-x" if self.f_theta == "theta_z" else "zero")

    @property
    def resolved_signed_inputs(self) -> bool:
        return self.matrix if self.signed_inputs is None else bool(self.signed_inputs)

    @property
    def resolved_signed_params(self) -> bool:
        return self.matrix if self.signed_params is None else bool(self.signed_params)

    @property
    def has_bias(self) -> bool:
        return self.f_theta in BIAS_VARIANTS and self.beta > 0

    def initial_theta(self) -> np.ndarray:
        if self.theta_init is None:
            fill = 0.0 if self.resolved_signed_params else 0.5
            return np.full(self.theta_shape, fill)
        if np.isscalar(self.theta_init):
            return np.full(self.theta_shape, float(self.theta_init))
        return np.array(self.theta_init, dtype=float).reshape(self.theta_shape)

    def augment(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (self.d,):
            raise ConfigError(f"input has {x.size} components, circuit expects d={self.d}")
        return np.concatenate([x, np.full(self.p, float(self.pad_value))])


# ----- symbol naming ---------------------------------------------------------

def _param_names(cfg: CircuitConfig, prefix: str) -> list[str]:
    n = cfg.n
    if cfg.matrix:
        return [f"{prefix}{i}_{j}" for i in range(1, n + 1) for j in range(1, n + 1)]
    return [f"{prefix}{i}" for i in range(1, n + 1)]


def _forward_rhs(cfg: CircuitConfig, zprefix: str) -> dict[int, list[Monomial]]:
    """Symbolic f_theta per hidden dimension, with z named ``zprefix + i``."""
    n, out = cfg.n, {}
    for i in range(1, n + 1):
        z = f"{zprefix}{i}"
        terms = []
        v = cfg.f_theta
        if v in ("linreg", "lincls", "nlreg"):
            terms.append(Monomial.of(1.0, [f"P{i}", f"X{i}"]))
        elif v in MATRIX_VARIANTS:
            terms += [Monomial.of(1.0, [f"P{i}_{j}", f"X{j}"]) for j in range(1, n + 1)]
        elif v == "theta_z":
            terms.append(Monomial.of(1.0, [f"P{i}", z]))
        if cfg.has_bias:
            terms.append(Monomial.of(cfg.beta, ()))
        if v == "nlreg":
            terms.append(Monomial.of(-1.0, {z: 2}))
        elif v == "nlcls":
            terms.append(Monomial.of(-1.0, {z: 3}))
        elif v == "nlclsV2":
            terms.append(Monomial.of(-cfg.alpha, {z: 2}))
        out[i] = terms
    return out


def forward_system(cfg: CircuitConfig) -> PolyOdeSystem:
    """Signed forward dynamics dz/dt = f_theta(x, z) over logical variables."""
    rhs = _forward_rhs(cfg, "Z")
    variables = _logical_variables(cfg, [f"X{j}" for j in range(1, cfg.n + 1)] + _param_names(cfg, "P")
                                   + [f"Z{i}" for i in range(1, cfg.n + 1)], {})
    return PolyOdeSystem.build(variables, {f"Z{i}": collect(t) for i, t in rhs.items()})


def feedback_system(cfg: CircuitConfig, approx: bool | None = None) -> PolyOdeSystem:
    """Signed feedback dynamics in forward time tau over (Zb, A, G).

    Built as the backward-time adjoint system, then time-reversed and pruned to
    the equations the gradient actually depends on. With ``approx`` the
    adjoints and hidden state are frozen (first-order gradients).
    """
    approx = cfg.approx_gradients if approx is None else approx
    n = cfg.n
    f = _forward_rhs(cfg, "Zb")
    adj = (lambda i: "A") if cfg.merge_adjoints else (lambda i: f"A{i}")
    eqs: dict[str, tuple[Monomial, ...]] = {}
    for k in range(1, n + 1):
        eqs[f"Zb{k}"] = collect(f[k])
        terms = []
        for i in range(1, n + 1):
            for m in f[i]:
                dm = m.diff(f"Zb{k}")
                if dm is not None:
                    terms.append(dm.times(adj(i)).scaled(-1.0))
        eqs[adj(k)] = collect(terms) if adj(k) not in eqs else collect(eqs[adj(k)] + tuple(terms))
    pnames, gnames = _param_names(cfg, "P"), _param_names(cfg, "G")
    for pn, gn in zip(pnames, gnames):
        terms = []
        for i in range(1, n + 1):
            for m in f[i]:
                dm = m.diff(pn)
                if dm is not None:
                    terms.append(dm.times(adj(i)).scaled(-1.0))
        eqs[gn] = collect(terms)

    # keep only what the gradient depends on
    keep = {g for g in gnames}
    frontier = set().union(*(m.variables for g in gnames for m in eqs[g]))
    while not approx and frontier:
        v = frontier.pop()
        if v in eqs and v not in keep and eqs[v]:
            keep.add(v)
            frontier |= set().union(*(m.variables for m in eqs[v])) - keep
    if cfg.merge_adjoints and any(eqs[a] for a in keep if a.startswith("A")):
        raise ConfigError("merge_adjoints requires constant adjoints (linear dynamics or approx_gradients)")
    kept = {t: eqs[t] for t in eqs if t in keep}
    referenced = set(kept)
    for rhs in kept.values():
        for m in rhs:
            referenced |= set(m.variables)
    order = ([f"X{j}" for j in range(1, n + 1)] + pnames + [f"Zb{i}" for i in range(1, n + 1)]
             + (["A"] if cfg.merge_adjoints else [f"A{i}" for i in range(1, n + 1)]) + gnames)
    names = [v for v in order if v in referenced]
    backward = PolyOdeSystem.build(_logical_variables(cfg, names, {}), kept)
    return time_reverse(backward)


def _logical_variables(cfg: CircuitConfig, names, overrides: Mapping[str, str]) -> list[Variable]:
    out = []
    for v in names:
        if v in overrides:
            dom = overrides[v]
        elif v.startswith("X"):
            dom = REAL if cfg.resolved_signed_inputs else NONNEG
        elif v.startswith("P"):
            dom = REAL if cfg.resolved_signed_params else NONNEG
        elif v.startswith(("A", "G")):
            dom = REAL
        else:
            dom = NONNEG
        out.append(Variable(v, dom))
    return out


def _with_domains(system: PolyOdeSystem, overrides: Mapping[str, str]) -> PolyOdeSystem:
    return PolyOdeSystem(tuple(Variable(v.name, overrides.get(v.name, v.domain)) for v in system.variables),
                         system.equations)


def _needs_rails(system: PolyOdeSystem, targets) -> bool:
    verdicts = classify_kde(system)
    return any(not verdicts[t].is_kde for t in targets if t in verdicts)


# ----- canonic mechanism -----------------------------------------------------

def canonic_translate(system: PolyOdeSystem, gate: str = ALWAYS, speed: str = SLOW) -> Crn:
    """One catalytic reaction per monomial of a KDE system.

    Positive terms add one copy of the differential variable, negative terms
    remove one. Constant terms become a catalytic source from the fixed
    species ``B``; equal constants share a single reaction.
    """
    verdicts = classify_kde(system)
    bad = {t: v for t, v in verdicts.items() if not v.is_kde}
    if bad:
        raise NonKdeError(bad)
    reactions = []
    sources: "OrderedDict[float, list[str]]" = OrderedDict()
    for target, rhs in system.equations:
        for m in rhs:
            if not m.powers:
                sources.setdefault(m.coefficient, []).append(target)
                continue
            reac = dict(m.powers)
            prod = dict(reac)
            prod[target] = prod.get(target, 0) + (1 if m.coefficient > 0 else -1)
            reactions.append(Reaction.make(reac, prod, abs(m.coefficient), speed, gate))
    species = [Species(v.name) for v in system.variables]
    for c, targets in sources.items():
        reactions.append(Reaction.make([CONSTANT], [CONSTANT, *targets], c, speed, gate))
    if sources:
        species.append(Species(CONSTANT, fixed=True))
    return Crn(tuple(species), tuple(reactions))


# ----- circuit ---------------------------------------------------------------

@dataclass(frozen=True)
class Circuit:
    """An assembled Neural CRN.

    ``stages`` holds the reactions of N1..N4 (N4 includes the flush
    reactions, also listed in ``flush``); ``annihilation`` holds the fast rail
    annihilation reactions active in every phase. ``rails`` maps each logical
    quantity to its (plus-or-single, minus-or-None) species.
    """

    config: CircuitConfig
    species: tuple[Species, ...]
    stages: Mapping[str, tuple[Reaction, ...]]
    annihilation: tuple[Reaction, ...]
    flush: tuple[Reaction, ...]
    rails: Mapping[str, tuple[str, str | None]]
    logical: Mapping[str, tuple[str, ...]]
    systems: Mapping[str, PolyOdeSystem] = field(default_factory=dict)

    @cached_property
    def index(self) -> dict[str, int]:
        return {s.name: i for i, s in enumerate(self.species)}

    def crn(self, stages=STAGES, annihilation: bool = True) -> Crn:
        rxns = [r for s in stages for r in self.stages.get(s, ())]
        if annihilation:
            rxns += list(self.annihilation)
        return Crn(self.species, tuple(rxns))

    @property
    def species_roles(self) -> dict[str, list[str]]:
        roles = {r: [] for r in ROLES}
        for role, names in self.logical.items():
            for ln in names:
                plus, minus = self.rails[ln]
                roles[role] += [plus] + ([minus] if minus else [])
        roles["B"] = [s.name for s in self.species if s.fixed]
        roles["C"] = [C1, C2]
        return roles

    def counts(self) -> tuple[int, int]:
        """(species, reactions) in the paper's tally.

        The fixed bias source B and the optional readout Yhat are not counted;
        the two clock signals are. Flush and annihilation reactions are excluded.
        """
        skip = {s.name for s in self.species if s.fixed}
        for ln in self.logical.get("Yhat", ()):
            skip |= {s for s in self.rails[ln] if s}
        n_species = sum(1 for s in self.species if s.name not in skip and s.name not in (C1, C2)) + 2
        n_rxn = sum(len(r) for r in self.stages.values()) - len(self.flush)
        return n_species, n_rxn

    # state helpers
    def zeros(self) -> np.ndarray:
        return np.zeros(len(self.species))

    def load(self, state: np.ndarray, names, values) -> None:
        for ln, v in zip(names, np.ravel(values)):
            plus, minus = self.rails[ln]
            if minus is None:
                if v < 0:
                    raise ValueError(f"single-rail {ln} cannot hold negative value {v}")
                state[self.index[plus]] = v
            else:
                state[self.index[plus]] = max(0.0, v)
                state[self.index[minus]] = max(0.0, -v)

    def read(self, state: np.ndarray, names) -> np.ndarray:
        out = []
        for ln in names:
            plus, minus = self.rails[ln]
            v = max(0.0, state[self.index[plus]])
            if minus is not None:
                v -= max(0.0, state[self.index[minus]])
            out.append(v)
        return np.array(out)

    def annihilate(self, state: np.ndarray) -> np.ndarray:
        """Exact completion of the fast rail annihilation reactions."""
        state = state.copy()
        for r in self.annihilation:
            (a, _), (b, _) = r.reactants
            m = min(state[self.index[a]], state[self.index[b]])
            if m > 0:
                state[self.index[a]] -= m
                state[self.index[b]] -= m
        return state

    def dump(self) -> str:
        out = [f"# circuit f_theta={self.config.f_theta} d={self.config.d} p={self.config.p}"]
        out.append("[roles]")
        for role, names in self.species_roles.items():
            out.append(f"{role}: {' '.join(names)}")
        for st in STAGES:
            out.append(f"[{st}]")
            out += [r.to_text() for r in self.stages[st]]
        out.append("[annihilation]")
        out += [r.to_text() for r in self.annihilation]
        return "\n".join(out) + "\n"


def _rails_of(names, dual: set[str]) -> dict[str, tuple[str, str | None]]:
    return {n: (plus_rail(n), minus_rail(n)) if n in dual else (n, None) for n in names}


def _retag(crn: Crn, gate: str, speed: str) -> list[Reaction]:
    return [r.replace(gate=gate, speed=speed) for r in crn.reactions]


def build_circuit(config: CircuitConfig) -> Circuit:
    """Assemble the four-stage Neural CRN for ``config``.

    Rails follow the sign analysis: a quantity gets a rail pair when its
    domain is real or its equations are not kinetic as single-rail; adjoints
    and gradients are always dual-rail.
    """
    cfg = config
    n = cfg.n
    xs = [f"X{j}" for j in range(1, n + 1)]
    ps, gs = _param_names(cfg, "P"), _param_names(cfg, "G")
    zs, zbs = [f"Z{i}" for i in range(1, n + 1)], [f"Zb{i}" for i in range(1, n + 1)]
    adjs = ["A"] if cfg.merge_adjoints else [f"A{i}" for i in range(1, n + 1)]
    if cfg.merge_adjoints and cfg.f_theta not in ("linreg", "lincls") and not cfg.approx_gradients:
        raise ConfigError("merge_adjoints needs identical constant adjoints (linreg/lincls or approx_gradients)")

    dual = {v for v, on in [(x, cfg.resolved_signed_inputs) for x in xs]
            + [(p, cfg.resolved_signed_params) for p in ps] if on}
    dual |= set(adjs) | set(gs)

    # N1: forward dynamics
    fwd = forward_system(cfg)
    # copy-x starts z at the input, so signed inputs need signed states
    z_dual = _needs_rails(fwd, zs) or (cfg.resolved_z_init == "copy-x" and cfg.resolved_signed_inputs)
    if z_dual:
        dual |= set(zs)
    fwd_kde = dual_rail_transform(fwd, [v for v in fwd.names if v in dual], absorb=True)
    n1 = _retag(canonic_translate(fwd_kde), C1, SLOW)

    systems = {"N1": fwd}
    n3: list[Reaction] = []
    fb_kde = None
    zb_used = False
    if not cfg.inference:
        fb = feedback_system(cfg)
        zb_used = any(v in fb.names for v in zbs)
        if zb_used:
            zb_dual = z_dual or _needs_rails(fb, zbs)
            if zb_dual:
                dual |= set(zbs)
            fb = _with_domains(fb, {z: (REAL if zb_dual else NONNEG) for z in zbs})
        fb_kde = dual_rail_transform(fb, [v for v in fb.names if v in dual], absorb=True)
        n3 = _retag(canonic_translate(fb_kde), C2, SLOW)
        systems["N3"] = fb

    logical = {"X": xs, "Y": ["Y"], "Yhat": ["Yhat"], "P": ps, "Z": zs}
    if z_dual:
        dual.add("Yhat")
    if not cfg.inference:
        logical.update({"Zb": zbs if zb_used else [], "A": adjs, "G": gs})
    rails = _rails_of([v for names in logical.values() for v in names], dual)

    def rail(name, sign):
        plus, minus = rails[name]
        return plus if (sign > 0 or minus is None) else minus

    # N2: adjoint creation (or output readout in an inference build)
    n2 = []
    for i, z in enumerate(zs):
        for sign in ((1, -1) if rails[z][1] else (1,)):
            products = [rail("Yhat", sign)]
            if not cfg.inference:
                if zb_used:
                    products.append(rail(zbs[i], sign))
                products += [rail(a, sign) for a in adjs]
            n2.append(Reaction.make([rail(z, sign)], products, 1.0, FAST, C2))
    if not cfg.inference:
        n2.append(Reaction.make(["Y"], [rail(a, -1) for a in adjs], 1.0, FAST, C2))

    # N4: parameter update (eta = 1 subtraction network) and flush
    n4 = []
    if not cfg.inference:
        for p, g in zip(ps, gs):
            if rails[p][1] is None:
                n4.append(Reaction.make([rail(g, -1)], [p], 1.0, FAST, C1))
                n4.append(Reaction.make([rail(g, 1), p], [], 1.0, FAST, C1))
            else:
                n4.append(Reaction.make([rail(g, -1)], [rail(p, 1)], 1.0, FAST, C1))
                n4.append(Reaction.make([rail(g, 1)], [rail(p, -1)], 1.0, FAST, C1))
    flush_roles = ["X", "Yhat"] + ([] if cfg.inference else ["Zb", "A"])
    flush = [Reaction.make([s], [], 1.0, FAST, C1)
             for role in flush_roles for ln in logical[role] for s in rails[ln] if s]
    n4 += flush

    # species registry in role order
    species: list[Species] = []
    for role in ("X", "Y", "Yhat", "P", "Z", "Zb", "A", "G"):
        for ln in logical.get(role, []):
            plus, minus = rails[ln]
            if minus is None:
                species.append(Species(plus))
            else:
                species += [Species(plus, PLUS, minus), Species(minus, MINUS, plus)]
    if any(CONSTANT in r.species() for r in n1 + n3):
        species.append(Species(CONSTANT, fixed=True))
    species += [Species(C1), Species(C2)]

    annihilation = tuple(Reaction.make([s.name, s.partner], [], 1.0, FAST, ALWAYS)
                         for s in species if s.rail == PLUS)
    stages = {"N1": tuple(n1), "N2": tuple(n2), "N3": tuple(n3), "N4": tuple(n4)}
    circuit = Circuit(cfg, tuple(species), stages, annihilation, tuple(flush), rails,
                      {k: tuple(v) for k, v in logical.items()}, systems)
    circuit.crn()  # validates that every reaction resolves
    return circuit


def first_order_simplify(circuit: Circuit) -> Circuit:
    """Rebuild with frozen adjoints: N3 keeps only gradient accumulation."""
    return build_circuit(replace(circuit.config, approx_gradients=True))
