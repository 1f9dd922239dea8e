"""Model transformations used by synthesis.

* StepEncodedModel: states (x, n); every edge increases n by one, so the
  result is acyclic.
* GadgetModel: every infinitely branching state x becomes the head of a
  chain x = z_1, z_2, ... where z_i either leaves to the i-th successor y_i or
  moves on to z_{i+1}.  Random chains use the conditional weights
  p_i / (1 - p_1 - ... - p_{i-1}), so the chain is left at y_i with
  probability p_i.
"""
from fractions import Fraction
from functools import lru_cache

from .errors import KeyFormatError, ValidationError
from .model import CONTROLLED, ONE, RANDOM, Expansion, InfiniteLaw, InfiniteSuccessors, MdpModel, Outcome, \
    ProbabilityLaw, StateRef, render_key

STEP = "step"
GADGET = "gadget"


class StepEncodedModel(MdpModel):
    transform_kind = "step"
    acyclic = True
    depth_finite = True

    def __init__(self, base):
        super().__init__()
        self.base = base
        self.family = f"{base.family}+step"
        self.finitely_branching = base.finitely_branching

    @property
    def initial(self):
        return tuple(self.encode(s, 0) for s in self.base.initial)

    def params(self):
        return {"base": self.base.family, **self.base.params()}

    def encode(self, state, n):
        return StateRef((STEP, n) + state.key, state.kind, state.labels)

    def decode(self, state):
        key = state.key
        return self.base.make_state(key[2:]), key[1]

    def make_state(self, key):
        if len(key) < 3 or key[0] != STEP or not isinstance(key[1], int) or key[1] < 0:
            raise KeyFormatError(f"malformed key {render_key(key)}: expected step.<n>.<state>",
                                 key=render_key(key), component=str(key[0] if key else ""))
        return self.encode(self.base.make_state(key[2:]), key[1])

    def _expand(self, state):
        inner, n = self.decode(state)
        exp = self.base.expand(inner)
        if exp.frontier:
            return Expansion(exp.kind, (), None, frontier=True)
        enc = self.encode
        if exp.finite:
            succ = tuple(enc(t, n + 1) for t in exp.successors)
            if exp.kind == CONTROLLED:
                return Expansion(CONTROLLED, succ)
            law = ProbabilityLaw((enc(o.target, n + 1), o.weight, o.red) for o in exp.law)
            return Expansion(RANDOM, law.targets(), law)
        base_succ = exp.successors

        def index(s):
            if s.key[:2] != (STEP, n + 1):
                return None
            return base_succ.index(self.base.make_state(s.key[2:]))
        succ = InfiniteSuccessors(lambda i: enc(base_succ[i], n + 1), index)
        if exp.kind == CONTROLLED:
            return Expansion(CONTROLLED, succ)
        base_law = exp.law

        def entry(i):
            o = base_law.entry(i)
            return Outcome(enc(o.target, n + 1), o.weight, o.red)
        return Expansion(RANDOM, succ, InfiniteLaw(entry))

    def _depth(self, state):
        return state.key[1]


def encode_step_counter(model):
    return StepEncodedModel(model)


class GadgetModel(MdpModel):
    transform_kind = "gadget"
    finitely_branching = True

    def __init__(self, base):
        super().__init__()
        self.base = base
        self.family = f"{base.family}+gadget"
        self.acyclic = base.acyclic
        self._remaining = lru_cache(maxsize=1 << 14)(self._remaining_mass)

    @property
    def initial(self):
        return self.base.initial

    def params(self):
        return {"base": self.base.family, **self.base.params()}

    def is_owner(self, state):
        if state.key[0] == GADGET:
            return False
        return not self.base.expand(state).finite

    def is_chain(self, state):
        return state.key[0] == GADGET

    def owner(self, state):
        """(x, i) when `state` is the i-th chain node of x's gadget, else None."""
        if state.key[0] == GADGET:
            return self.base.make_state(state.key[2:]), state.key[1]
        if self.is_owner(state):
            return state, 1
        return None

    def node(self, x, i):
        return x if i == 1 else StateRef((GADGET, i) + x.key, x.kind)

    def chain_to(self, x, index):
        """Chain nodes strictly after x on the way to the index-th successor."""
        return [self.node(x, i) for i in range(2, index + 1)]

    def exit_successor(self, state):
        return self.expand(state).successors[-1]

    def chain_successor(self, state):
        return self.expand(state).successors[0]

    def make_state(self, key):
        if key and key[0] == GADGET:
            if len(key) < 3 or not isinstance(key[1], int) or key[1] < 2:
                raise KeyFormatError(f"malformed key {render_key(key)}: expected gadget.<i>=2..>.<state>",
                                     key=render_key(key), component=str(key[1] if len(key) > 1 else ""))
            x = self.base.make_state(key[2:])
            if not self.is_owner(x):
                raise KeyFormatError(f"{x.name} is finitely branching and has no gadget",
                                     key=render_key(key), component=x.name)
            return StateRef(key, x.kind)
        return self.base.make_state(key)

    def _remaining_mass(self, x, i):
        """1 - p_1 - ... - p_{i-1} for the random owner x."""
        if i == 1:
            return ONE
        law = self.base.expand(x).law
        return self._remaining(x, i - 1) - law.entry(i - 2).weight

    def _expand(self, state):
        owner = self.owner(state)
        if owner is None:
            return self.base.expand(state)
        x, i = owner
        exp = self.base.expand(x)
        y = exp.successors[i - 1]
        nxt = self.node(x, i + 1)
        if exp.kind == CONTROLLED:
            return Expansion(CONTROLLED, (nxt, y))
        o = exp.law.entry(i - 1)
        rest = self._remaining(x, i)
        leave = o.weight / rest
        if leave >= 1:
            return Expansion(RANDOM, (o.target,), ProbabilityLaw([(o.target, ONE, o.red)]))
        law = ProbabilityLaw([(nxt, 1 - leave, False), (o.target, leave, o.red)])
        return Expansion(RANDOM, law.targets(), law)


def definitize_branching(model):
    """Finitely branching equivalent of `model` (unchanged if already finitely branching)."""
    if model.finitely_branching:
        return model
    return GadgetModel(model)


def gadget_weights(weights):
    """Conditional chain weights p_i' for a finite prefix of a distribution."""
    out = []
    rest = ONE
    for w in weights:
        w = Fraction(w)
        if w > rest:
            raise ValidationError(f"weight {w} exceeds the remaining mass {rest}", weight=str(w), rest=str(rest))
        out.append(w / rest)
        rest -= w
        if rest == 0:
            break
    return out
