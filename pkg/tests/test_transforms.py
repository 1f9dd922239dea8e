"""Step-counter encoding and the branching gadget."""
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from countable_mdp.errors import KeyFormatError, ValidationError
from countable_mdp.families import Fig1a, Fig1b, Fig3Hill, TreeChain
from countable_mdp.model import CONTROLLED, ExplicitMdp, bubble, parse_key, slice_from_json, truncate
from countable_mdp.transforms import GadgetModel, definitize_branching, encode_step_counter, gadget_weights


def _sample_states(model):
    if model.finitely_branching:
        return bubble(model, model.initial, 12)
    return [model.make_state(("hill", role, i)) for role in ("r", "g", "bot") for i in range(1, 8)]


@pytest.mark.parametrize("model", [Fig1a(), Fig3Hill(), TreeChain(variant="parity")], ids=lambda m: m.family)
def test_step_encoding_preserves_laws(model):
    enc = encode_step_counter(model)
    for s in _sample_states(model):
        for n in (0, 5):
            es = enc.encode(s, n)
            base, enc_exp = model.expand(s), enc.expand(es)
            assert enc_exp.kind == base.kind
            if base.kind == CONTROLLED:
                assert list(enc_exp.successors) == [enc.encode(t, n + 1) for t in base.successors]
            else:
                assert [(o.target, o.weight, o.red) for o in enc_exp.law] == \
                    [(enc.encode(o.target, n + 1), o.weight, o.red) for o in base.law]


def test_step_encoding_is_acyclic():
    m = Fig1a()
    enc = encode_step_counter(m)
    assert not truncate(m, list(m.initial), k=20).acyclic
    assert truncate(enc, list(enc.initial), k=20).acyclic


def test_step_encoding_of_cyclic_explicit_model():
    doc = {"states": [{"key": "a", "kind": "controlled"}, {"key": "b", "kind": "random"}],
           "edges": [{"from": "a", "to": "b"}, {"from": "a", "to": "a"},
                     {"from": "b", "to": "a", "numerator": 1, "denominator": 1}],
           "initial": ["a"]}
    m = ExplicitMdp(slice_from_json(doc))
    enc = encode_step_counter(m)
    sl = truncate(enc, list(enc.initial), k=10)
    assert sl.acyclic
    assert all(enc.decode(sl.states[k])[1] <= 10 for k in sl.states)


def test_step_keys_validated():
    enc = encode_step_counter(Fig1a())
    with pytest.raises(KeyFormatError):
        enc.make_state(parse_key("step.x.fig1a.s.0"))
    assert enc.make_state(parse_key("step.3.fig1a.s.2")).key == ("step", 3, "fig1a", "s", 2)


def test_gadget_only_for_infinite_branching():
    m = Fig1a()
    assert definitize_branching(m) is m
    g = definitize_branching(Fig1b())
    assert isinstance(g, GadgetModel) and g.finitely_branching


def test_gadget_chain_reaches_every_successor():
    base = Fig1b()
    g = definitize_branching(base)
    s = g.initial[0]
    for i in range(8):
        exp = g.expand(s)
        assert exp.kind == CONTROLLED and len(exp.successors) == 2
        nxt, leave = exp.successors
        assert leave == base.r(i)
        s = nxt


@given(st.lists(st.integers(min_value=1, max_value=30), min_size=1, max_size=10), st.integers(1, 40))
def test_gadget_weights_reproduce_the_distribution(raw, rest):
    total = sum(raw) + rest
    probs = [Fraction(w, total) for w in raw]
    chain = gadget_weights(probs)
    stay = Fraction(1)
    for p, c in zip(probs, chain):
        assert 0 < c <= 1
        assert stay * c == p
        stay *= 1 - c


def test_gadget_weights_reject_overfull_prefix():
    with pytest.raises(ValidationError):
        gadget_weights([Fraction(1, 2), Fraction(2, 3)])
    assert gadget_weights([Fraction(1, 2), Fraction(1, 2), Fraction(1, 4)]) == [Fraction(1, 2), Fraction(1)]
