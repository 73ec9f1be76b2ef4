import os
from pathlib import Path

import numpy as np
import pytest

from neuralcrn.compiler import (MATRIX_VARIANTS, VARIANTS, CircuitConfig, ConfigError, NonKdeError,
                                build_circuit, canonic_translate, first_order_simplify)
from neuralcrn.crn import ALWAYS, C1, C2, FAST, Reaction, derive_mass_action
from neuralcrn.learning import run_iteration
from neuralcrn.ode_ir import REAL, Monomial, PolyOdeSystem, dual_rail_transform
from neuralcrn.verification import rel_err

GOLDEN = Path(__file__).parent / "golden"
GOLDEN_CONFIGS = {
    "linreg": dict(f_theta="linreg", d=2, beta=1.0),
    "linreg_minimal": dict(f_theta="linreg", d=2, merge_adjoints=True),
    "lincls": dict(f_theta="lincls", d=2, beta=0.02),
    "nlreg": dict(f_theta="nlreg", d=2, p=1, pad_value=1.0),
    "nlcls": dict(f_theta="nlcls", d=2, p=1, beta=0.1),
    "nlclsV2": dict(f_theta="nlclsV2", d=2, p=1),
    "theta_z": dict(f_theta="theta_z", d=2),
}


def rxn(text):
    return Reaction.from_text(text)


def every_circuit():
    for v in VARIANTS:
        p = 1 if v in MATRIX_VARIANTS else 0
        yield build_circuit(CircuitConfig(v, d=2, p=p, beta=0.1))
        yield build_circuit(CircuitConfig(v, d=2, p=p, beta=0.1, approx_gradients=True))


# --- canonic_translate ------------------------------------------------------

def test_canonic_product_term():
    s = PolyOdeSystem.build(["X1", "X2", "Z"], {"Z": [Monomial.of(0.7, ["X1", "X2"])]})
    (r,) = canonic_translate(s).reactions
    assert r == rxn("X1 + X2 ->{0.7,slow,always} X1 + X2 + Z")


def test_canonic_negative_square():
    s = PolyOdeSystem.build(["Z"], {"Z": [Monomial.of(-1.0, {"Z": 2})]})
    (r,) = canonic_translate(s).reactions
    assert r == rxn("2Z ->{1.0,slow,always} Z")


def test_canonic_constant_source():
    s = PolyOdeSystem.build(["Z1", "Z2"], {"Z1": [Monomial.of(0.4, {})], "Z2": [Monomial.of(0.4, {})]})
    crn = canonic_translate(s)
    assert crn.reactions == (rxn("B ->{0.4,slow,always} B + Z1 + Z2"),)
    assert [s.name for s in crn.species if s.fixed] == ["B"]
    assert derive_mass_action(crn).same_equations(s)


def test_canonic_rejects_non_kde():
    s = PolyOdeSystem.build([("X", REAL), ("Z", REAL)], {"Z": [Monomial.of(-1.0, ["X"])]})
    with pytest.raises(NonKdeError, match="negative-cross-effect"):
        canonic_translate(s)


# --- circuit structure ------------------------------------------------------

def test_linreg_counts():
    assert build_circuit(CircuitConfig("linreg", d=2, beta=1.0)).counts() == (17, 14)
    assert build_circuit(CircuitConfig("linreg", d=2, merge_adjoints=True)).counts() == (15, 13)


def test_matrix_shape_mismatch():
    with pytest.raises(ConfigError, match="needs"):
        CircuitConfig("nlcls", d=2, p=1, theta_init=np.zeros((2, 2)))


@pytest.mark.parametrize("kw", [dict(T=0), dict(epsilon=0.1, T=1.0), dict(mode="full_kinetics", eta=0.5),
                                dict(beta=-1), dict(f_theta="mlp")])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        CircuitConfig(**kw)


def test_gate_discipline():
    for c in every_circuit():
        for st, gate in (("N1", C1), ("N4", C1), ("N2", C2), ("N3", C2)):
            assert all(r.gate == gate for r in c.stages[st]), (c.config.f_theta, st)
        assert all(r.gate == ALWAYS and r.speed == FAST for r in c.annihilation)


def _produced(rxns):
    return {s for r in rxns for s, k in r.net().items() if k > 0}


def _consumed(rxns):
    return {s for r in rxns for s, k in r.net().items() if k < 0}


def test_cross_effect_freedom():
    for c in every_circuit():
        n1, n4 = c.stages["N1"], c.stages["N4"]
        # phase C1: the update must not feed the forward pass and vice versa
        assert not _produced(n1) & _consumed(n4)
        assert not _produced(n4) & _consumed(n1)
        # phase C2: gradient accumulation must not refill what adjoint creation drains
        assert not _produced(c.stages["N3"]) & set(c.species_roles["Z"] + c.species_roles["Y"])


def test_n1_semantics_match_forward_system():
    for c in every_circuit():
        n1 = c.crn(["N1"], annihilation=False).with_reactions(c.stages["N1"])
        fwd = c.systems["N1"]
        dual = [v for v in fwd.names if c.rails[v][1] is not None]
        expected = dual_rail_transform(fwd, dual, absorb=True)
        got = derive_mass_action(n1)
        assert {t: sorted(m.to_text() for m in ms) for t, ms in got.equation_map.items() if ms} == \
               {t: sorted(m.to_text() for m in ms) for t, ms in expected.equation_map.items() if ms}


def test_n3_semantics_match_feedback_system():
    for c in every_circuit():
        n3 = c.crn(["N3"], annihilation=False).with_reactions(c.stages["N3"])
        fb = c.systems["N3"]
        dual = [v for v in fb.names if v in c.rails and c.rails[v][1] is not None]
        expected = dual_rail_transform(fb, dual, absorb=True)
        got = derive_mass_action(n3).equation_map
        for t, ms in expected.equation_map.items():
            assert sorted(m.to_text() for m in got.get(t, ())) == sorted(m.to_text() for m in ms)


def test_molecularity():
    for c in every_circuit():
        worst = max(r.order for r in c.crn().reactions)
        if c.config.f_theta == "nlcls":
            assert worst == 3
        else:
            assert worst <= 2, c.config.f_theta


def test_theta_z_feedback_fragment():
    c = build_circuit(CircuitConfig("theta_z", d=2))
    n3 = {r.to_text() for r in c.stages["N3"]}
    # z retraces: P + Zb -> P
    assert "P1 + Zb1 ->{1.0,slow,C2} P1" in n3
    # da/dt = a theta on each rail
    assert {"A1+ + P1 ->{1.0,slow,C2} 2A1+ + P1", "A1- + P1 ->{1.0,slow,C2} 2A1- + P1"} <= n3
    grads = [r for r in c.stages["N3"] if any(s.startswith("G1") for s in r.net())]
    assert len(grads) == 2  # a single-rail Zb feeds two sign-routed terms
    assert len(c.stages["N3"]) == 2 * (1 + 2 + 2)


def test_theta_z_signed_state_has_four_gradient_reactions():
    c = build_circuit(CircuitConfig("theta_z", d=2, signed_inputs=True))
    grads = [r for r in c.stages["N3"] if any(s.startswith("G1") for s in r.net())]
    assert len(grads) == 4


def test_inference_build_reads_out_only():
    c = build_circuit(CircuitConfig("linreg", d=2, beta=1.0, inference=True))
    assert c.stages["N3"] == ()
    assert {r.to_text() for r in c.stages["N2"]} == {"Z1 ->{1.0,fast,C2} Yhat", "Z2 ->{1.0,fast,C2} Yhat"}


# --- first_order_simplify ---------------------------------------------------

def test_first_order_linreg_n3():
    c = first_order_simplify(build_circuit(CircuitConfig("linreg", d=2, beta=1.0)))
    expected = {f"A{i}{s} + X{i} ->{{1.0,slow,C2}} A{i}{s} + G{i}{s} + X{i}" for i in (1, 2) for s in "+-"}
    assert {r.to_text() for r in c.stages["N3"]} == expected


def test_first_order_accumulates_t_a_x():
    cfg = CircuitConfig("linreg", d=2, T=1.0, theta_init=[1.0, 2.0], z_init="zero")
    c = first_order_simplify(build_circuit(cfg))
    tr = run_iteration(c, [1.0, 1.0], 1.0)
    # yhat = 3, a = 2, g = T a x
    assert tr.y_hat == pytest.approx(3.0)
    assert tr.gradient == pytest.approx([2.0, 2.0], abs=1e-7)


def test_first_order_gap_on_theta_z():
    # a_i z_i is conserved under dz/dt = theta * z, so frozen adjoints lose nothing here
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x, th, y = rng.uniform(0.5, 2, 2), rng.uniform(0, 1, 2), rng.uniform(0, 4)
        c = build_circuit(CircuitConfig("theta_z", d=2, T=0.1, theta_init=th))
        exact = run_iteration(c, x, y).gradient
        approx = run_iteration(first_order_simplify(c), x, y).gradient
        worst = max(worst, rel_err(approx, exact))
    assert worst <= 0.15
    assert worst <= 1e-6


def test_first_order_gap_on_nlreg_is_small_but_real():
    rng = np.random.default_rng(18)
    x, th, y = rng.uniform(0.5, 2, 2), rng.uniform(0, 1, 2), rng.uniform(0, 4)
    c = build_circuit(CircuitConfig("nlreg", d=2, T=0.1, theta_init=th))
    gap = rel_err(run_iteration(first_order_simplify(c), x, y).gradient, run_iteration(c, x, y).gradient)
    assert 1e-5 < gap <= 0.15


# --- golden dumps -----------------------------------------------------------

@pytest.mark.parametrize("name", sorted(GOLDEN_CONFIGS))
def test_golden_dump(name):
    text = build_circuit(CircuitConfig(**GOLDEN_CONFIGS[name])).dump()
    path = GOLDEN / f"{name}.txt"
    if os.environ.get("NEURALCRN_REGEN_GOLDEN"):
        path.parent.mkdir(exist_ok=True)
        path.write_text(text)
    assert text == path.read_text()
