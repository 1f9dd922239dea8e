"""Memory-based strategy kernels.

A kernel is a pair of functions over memory modes:

* ``decide(mode, state, successors)`` at controlled states returns a
  distribution over (next mode, successor) as a tuple of
  ``(weight, mode', successor)`` triples;
* ``observe(mode, state, successor)`` at random states returns the next mode
  once nature has drawn the successor.

Modes by class: MD/MR use ``None``; one-bit uses 0/1; Markov uses the step
count n; one-bit-Markov uses (n, bit); FR uses an index below ``size``.
"""
from fractions import Fraction

from .errors import ContractViolation, ValidationError
from .model import CONTROLLED, ONE, StateRef, parse_key, render_key

MD = "MD"
MR = "MR"
FR = "FR"
ONE_BIT = "one-bit"
MARKOV = "Markov"
ONE_BIT_MARKOV = "one-bit-Markov"
GENERAL = "general"
CLASSES = (MD, MR, FR, ONE_BIT, MARKOV, ONE_BIT_MARKOV, GENERAL)
FINITE_MEMORY = frozenset({MD, MR, FR, ONE_BIT})
STEP_CLASSES = frozenset({MARKOV, ONE_BIT_MARKOV})


class Kernel:
    def __init__(self, cls, initial, decide, observe, name="", size=None, deterministic=False, descriptor=None):
        if cls not in CLASSES:
            raise ValidationError(f"unknown strategy class {cls!r}", cls=cls)
        self.cls = cls
        self.initial = initial
        self.decide = decide
        self.observe = observe
        self.name = name or cls
        self.size = size
        self.deterministic = deterministic
        self.descriptor = descriptor or {"class": cls, "name": self.name}

    def __repr__(self):
        return f"<Kernel {self.name} ({self.cls})>"

    @property
    def finite_memory(self):
        return self.cls in FINITE_MEMORY


def _keep(mode, state, successor):
    return mode


def _next_step(n, state, successor):
    return n + 1


def _as_key(x):
    if isinstance(x, StateRef):
        return x.key
    return parse_key(x)


def _pick(successors, key, kernel_name, state):
    for t in successors:
        if t.key == key:
            return t
    raise ContractViolation(
        f"kernel {kernel_name} chose {render_key(key)}, which is not a successor of {state.name}",
        kernel=kernel_name, state=state.name, choice=render_key(key))


def _validate_table(model, entries, name):
    """entries: iterable of (state key, successor key) pairs."""
    for skey, tkey in entries:
        state = model.state(skey)
        exp = model.expand(state)
        if exp.kind != CONTROLLED:
            raise ValidationError(f"table entry for random state {state.name}", kernel=name, state=state.name)
        if not any(t.key == tkey for t in (exp.successors if exp.finite else [])) and \
                not (not exp.finite and StateRef(tkey, "", ()) in exp.successors):
            raise ValidationError(f"table maps {state.name} to non-successor {render_key(tkey)}",
                                  kernel=name, state=state.name, choice=render_key(tkey))


def make_kernel(cls, data, name=None, size=None, model=None, observe=None, initial=None):
    """Build a kernel of class `cls` from a table or rule (see module doc).

    MD: {state: successor} (states missing from the table take their first
    successor) or rule(state, successors) -> successor.
    MR: {state: {successor: weight}} or rule(state, successors) -> [(w, succ)].
    FR: rule(m, state, successors) -> [(w, m', succ)] plus observe(m, s, t) and size.
    one-bit: rule(bit, state, successors) -> (bit', succ) or [(w, bit', succ)],
    or a table {(bit, state): (bit', successor)}; observe(bit, s, t) -> bit'.
    Markov: rule(n, state, successors) -> succ or [(w, succ)].
    one-bit-Markov: rule(n, bit, state, successors) -> (bit', succ);
    observe(n, bit, s, t) -> bit'.
    general: dict with 'initial', 'decide', 'observe'.
    """
    name = name or cls
    if cls == MD:
        if isinstance(data, dict):
            table = {_as_key(k): _as_key(v) for k, v in data.items()}
            if model is not None:
                _validate_table(model, table.items(), name)

            def decide(mode, state, successors):
                key = table.get(state.key)
                if key is None:
                    return ((ONE, None, successors[0]),)
                return ((ONE, None, _pick(successors, key, name, state)),)
        else:
            rule = data

            def decide(mode, state, successors):
                return ((ONE, None, rule(state, successors)),)
        return Kernel(MD, None, decide, _keep, name, deterministic=True)

    if cls == MR:
        if isinstance(data, dict):
            table = {_as_key(k): [(Fraction(w), _as_key(t)) for t, w in v.items()] for k, v in data.items()}
            if model is not None:
                _validate_table(model, ((k, t) for k, row in table.items() for _, t in row), name)

            def decide(mode, state, successors):
                row = table.get(state.key)
                if row is None:
                    return ((ONE, None, successors[0]),)
                return tuple((w, None, _pick(successors, t, name, state)) for w, t in row if w > 0)
        else:
            rule = data

            def decide(mode, state, successors):
                return tuple((Fraction(w), None, t) for w, t in rule(state, successors) if w > 0)
        return Kernel(MR, None, decide, _keep, name)

    if cls == FR:
        if size is None or size < 1:
            raise ValidationError("FR kernels need a positive memory size", kernel=name)
        rule = data

        def decide(mode, state, successors):
            return tuple((Fraction(w), m, t) for w, m, t in rule(mode, state, successors) if w > 0)
        return Kernel(FR, 0 if initial is None else initial, decide, observe or _keep, name, size=size)

    if cls == ONE_BIT:
        if isinstance(data, dict):
            table = {(b, _as_key(k)): (b2, _as_key(t)) for (b, k), (b2, t) in data.items()}
            if model is not None:
                _validate_table(model, ((k, t) for (_, k), (_, t) in table.items()), name)

            def decide(bit, state, successors):
                entry = table.get((bit, state.key))
                if entry is None:
                    return ((ONE, bit, successors[0]),)
                return ((ONE, entry[0], _pick(successors, entry[1], name, state)),)
            det = True
        else:
            rule = data

            def decide(bit, state, successors):
                out = rule(bit, state, successors)
                if isinstance(out, tuple) and len(out) == 2 and isinstance(out[1], StateRef):
                    return ((ONE, out[0], out[1]),)
                return tuple((Fraction(w), b, t) for w, b, t in out if w > 0)
            det = False
        return Kernel(ONE_BIT, 0 if initial is None else initial, decide, observe or _keep, name, size=2,
                      deterministic=det)

    if cls == MARKOV:
        rule = data

        def decide(n, state, successors):
            out = rule(n, state, successors)
            if isinstance(out, StateRef):
                return ((ONE, n + 1, out),)
            return tuple((Fraction(w), n + 1, t) for w, t in out if w > 0)
        return Kernel(MARKOV, 0, decide, _next_step, name)

    if cls == ONE_BIT_MARKOV:
        rule = data
        obs = observe

        def decide(mode, state, successors):
            n, bit = mode
            out = rule(n, bit, state, successors)
            if isinstance(out, tuple) and len(out) == 2 and isinstance(out[1], StateRef):
                return ((ONE, (n + 1, out[0]), out[1]),)
            return tuple((Fraction(w), (n + 1, b), t) for w, b, t in out if w > 0)

        def observe_(mode, state, successor):
            n, bit = mode
            return (n + 1, obs(n, bit, state, successor) if obs else bit)
        return Kernel(ONE_BIT_MARKOV, (0, 1 if initial is None else initial), decide, observe_, name)

    if cls == GENERAL:
        return Kernel(GENERAL, data["initial"], data["decide"], data.get("observe", _keep), name)

    raise ValidationError(f"unknown strategy class {cls!r}", cls=cls)


def choose(choices, rng):
    if len(choices) == 1:
        _, mode, succ = choices[0]
        return mode, succ
    u = rng.random()
    acc = 0.0
    for w, mode, succ in choices:
        acc += float(w)
        if u < acc:
            return mode, succ
    return choices[-1][1], choices[-1][2]


def step_kernel(kernel, model, mode, state, rng):
    """One step from `state`: returns (mode', successor, red flag)."""
    exp = model.expand(state)
    if exp.kind == CONTROLLED:
        choices = kernel.decide(mode, state, exp.successors)
        if not choices:
            raise ContractViolation(f"kernel {kernel.name} made no choice at {state.name}",
                                    kernel=kernel.name, state=state.name)
        mode2, succ = choose(choices, rng)
        if succ not in exp.successors:
            raise ContractViolation(f"kernel {kernel.name} chose {succ!r}, not a successor of {state.name}",
                                    kernel=kernel.name, state=state.name)
        return mode2, succ, False
    outcome = exp.law.sample(rng.random())
    return kernel.observe(mode, state, outcome.target), outcome.target, outcome.red


def class_violations(kernel, mode, state, successors, choices):
    """Class invariants a single decision breaks (empty list when conforming)."""
    problems = []
    total = sum((w for w, _, _ in choices), Fraction(0))
    if total != 1:
        problems.append(f"weights sum to {total}")
    for w, mode2, succ in choices:
        if succ not in successors:
            problems.append(f"illegal successor {succ!r}")
        if kernel.cls in (MD, MR) and mode2 is not None:
            problems.append("memoryless kernel changed its mode")
        if kernel.cls == ONE_BIT and mode2 not in (0, 1):
            problems.append(f"bit outside {{0,1}}: {mode2!r}")
        if kernel.cls == MARKOV and mode2 != mode + 1:
            problems.append("step did not advance by one")
        if kernel.cls == ONE_BIT_MARKOV and (mode2[0] != mode[0] + 1 or mode2[1] not in (0, 1)):
            problems.append("step-and-bit mode malformed")
        if kernel.cls == FR and not (0 <= mode2 < kernel.size):
            problems.append("finite mode out of range")
    if kernel.cls == MD and len(choices) != 1:
        problems.append("MD kernel is not a point mass")
    return problems


# ------------------------------------------------------------- translations

def lift_to_step_encoding(kernel, encoded):
    """Kernel for `encoded` (a StepEncodedModel) acting like `kernel` on its base.

    At (s, n) the lifted kernel does what `kernel` does at s with step n.
    Markov kernels become memoryless, one-bit-Markov kernels become one-bit.
    """
    base = encoded.base
    decode, encode = encoded.decode, encoded.encode

    def base_successors(inner):
        return base.expand(inner).successors

    if kernel.cls in STEP_CLASSES:
        with_bit = kernel.cls == ONE_BIT_MARKOV

        def decide(mode, state, successors):
            inner, n = decode(state)
            base_mode = (n, mode) if with_bit else n
            out = []
            for w, m2, t in kernel.decide(base_mode, inner, base_successors(inner)):
                out.append((w, m2[1] if with_bit else None, encode(t, n + 1)))
            return tuple(out)

        def observe(mode, state, successor):
            inner, n = decode(state)
            base_mode = (n, mode) if with_bit else n
            m2 = kernel.observe(base_mode, inner, decode(successor)[0])
            return m2[1] if with_bit else None

        cls = ONE_BIT if with_bit else (MD if kernel.deterministic else MR)
        init = kernel.initial[1] if with_bit else None
        return Kernel(cls, init, decide, observe, f"{kernel.name}@step", size=2 if with_bit else None,
                      deterministic=kernel.deterministic,
                      descriptor={"class": cls, "name": "lifted", "of": kernel.descriptor, "transform": "step"})

    def decide(mode, state, successors):
        inner, n = decode(state)
        return tuple((w, m2, encode(t, n + 1)) for w, m2, t in kernel.decide(mode, inner, base_successors(inner)))

    def observe(mode, state, successor):
        inner, _ = decode(state)
        return kernel.observe(mode, inner, decode(successor)[0])

    return Kernel(kernel.cls, kernel.initial, decide, observe, f"{kernel.name}@step", size=kernel.size,
                  deterministic=kernel.deterministic,
                  descriptor={"class": kernel.cls, "name": "lifted", "of": kernel.descriptor, "transform": "step"})


def lift_through_gadget(kernel, gadget):
    """Kernel for `gadget` (a GadgetModel) acting like a deterministic memoryless `kernel` on its base.

    Inside a controlled gadget the lifted kernel walks the chain until it
    reaches the successor `kernel` picks at the gadget's owner.
    """
    if kernel.cls != MD:
        raise ValidationError("only MD kernels can be lifted through the branching gadget", kernel=kernel.name)
    base = gadget.base

    def decide(mode, state, successors):
        owner = gadget.owner(state)
        if owner is None:
            return kernel.decide(mode, state, successors)
        x, i = owner
        base_successors = base.expand(x).successors
        (_, _, target), = kernel.decide(mode, x, base_successors)
        want = base_successors.index(target) + 1
        if want <= i or len(successors) == 1:
            return ((ONE, None, gadget.exit_successor(state)),)
        return ((ONE, None, gadget.chain_successor(state)),)

    return Kernel(MD, None, decide, _keep, f"{kernel.name}@gadget", deterministic=True,
                  descriptor={"class": MD, "name": "lifted", "of": kernel.descriptor, "transform": "gadget"})


GADGET_UNROLL_CAP = 100_000


def back_translate(kernel, transform):
    """Kernel on the base of `transform` inducing the same behavior.

    `transform` is the transformed model itself (StepEncodedModel or
    GadgetModel); its ``transform_kind`` selects the translation.
    """
    kind = getattr(transform, "transform_kind", None)
    if kind == "step":
        return _back_from_step(kernel, transform)
    if kind == "gadget":
        return _back_from_gadget(kernel, transform)
    raise ValidationError("back_translate needs a step-encoded or gadget model", transform=str(kind))


def _back_from_step(kernel, encoded):
    encode, decode = encoded.encode, encoded.decode
    if kernel.cls in STEP_CLASSES:
        raise ValidationError("kernel on the step encoding already carries a step counter", kernel=kernel.name)

    def enc_successors(state_enc):
        return encoded.expand(state_enc).successors

    if kernel.cls in (MD, MR):
        def decide(n, state, successors):
            s = encode(state, n)
            return tuple((w, n + 1, decode(t)[0]) for w, _, t in kernel.decide(None, s, enc_successors(s)))

        def observe(n, state, successor):
            return n + 1
        cls, init, size = MARKOV, 0, None
    elif kernel.cls == ONE_BIT:
        def decide(mode, state, successors):
            n, bit = mode
            s = encode(state, n)
            return tuple((w, (n + 1, b), decode(t)[0]) for w, b, t in kernel.decide(bit, s, enc_successors(s)))

        def observe(mode, state, successor):
            n, bit = mode
            return (n + 1, kernel.observe(bit, encode(state, n), encode(successor, n + 1)))
        cls, init, size = ONE_BIT_MARKOV, (0, kernel.initial), None
    else:
        def decide(mode, state, successors):
            n, m = mode
            s = encode(state, n)
            return tuple((w, (n + 1, m2), decode(t)[0]) for w, m2, t in kernel.decide(m, s, enc_successors(s)))

        def observe(mode, state, successor):
            n, m = mode
            return (n + 1, kernel.observe(m, encode(state, n), encode(successor, n + 1)))
        cls, init, size = GENERAL, (0, kernel.initial), None
    return Kernel(cls, init, decide, observe, f"{kernel.name}@base", size=size,
                  deterministic=kernel.deterministic,
                  descriptor={"class": cls, "name": "back-translated", "of": kernel.descriptor, "transform": "step"})


def _back_from_gadget(kernel, gadget):
    base = gadget.base

    def decide(mode, state, successors):
        if not gadget.is_owner(state):
            return kernel.decide(mode, state, gadget.expand(state).successors)
        if not kernel.deterministic:
            raise ContractViolation("gadget collapse needs a deterministic kernel", kernel=kernel.name)
        m, s = mode, state
        for _ in range(GADGET_UNROLL_CAP):
            (_, m, nxt), = kernel.decide(m, s, gadget.expand(s).successors)
            if not gadget.is_chain(nxt):
                return ((ONE, m, nxt),)
            s = nxt
        # the gadget is never left: any choice does at least as well
        return ((ONE, mode, successors[0]),)

    def observe(mode, state, successor):
        if not gadget.is_owner(state):
            return kernel.observe(mode, state, successor)
        index = base.expand(state).successors.index(successor) + 1
        m = mode
        s = state
        for z in gadget.chain_to(state, index):
            m = kernel.observe(m, s, z)
            s = z
        return kernel.observe(m, s, successor)

    return Kernel(kernel.cls, kernel.initial, decide, observe, f"{kernel.name}@base", size=kernel.size,
                  deterministic=kernel.deterministic,
                  descriptor={"class": kernel.cls, "name": "back-translated", "of": kernel.descriptor,
                              "transform": "gadget"})
