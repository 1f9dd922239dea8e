"""The concrete model families and their named strategies.

* ``fig1a``: controlled spine s_0 -> s_1 -> ..., each s_i may drop to r_i,
  which falls into the sink with probability 2^-i and otherwise returns to s_0.
* ``fig1b``: s_0 branches directly to every r_i.
* ``fig3-hill``: s_0 branches to r_i (i >= 1); r_i reaches the goal g_i with
  probability 2^-i, its own sink with 3^-i, and s_0 otherwise.
* ``tree-chain``: a chain of blue states; blue_n enters the binary tree T^n
  with probability 1/n.  Trees have brown random states, yellow controlled
  states (down into a subtree or up past it), red guards in front of every
  subtree root, and green goal leaves.

Tree keys: ``treechain.T.<n>.<path>.<role>`` where the path is a word over
{L, R} and role is B0, Y0, B1, Y1, guard or leaf.
"""
import random
from fractions import Fraction
from math import ceil

from .errors import KeyFormatError, UnreachableState, ValidationError
from .model import (CONTROLLED, GOAL, LOSING_SINK, ONE, RANDOM, Expansion, InfiniteSuccessors, MdpModel, StateRef,
                    controlled, random_law, render_key, truncate)
from .strategies import GENERAL, MARKOV, MD, MR, ONE_BIT, Kernel, make_kernel

HALF = Fraction(1, 2)


def _bad(key, part, why):
    raise KeyFormatError(f"malformed key {render_key(key)}: component {part!r} {why}",
                         key=render_key(key), component=str(part))


def _index(key, pos, minimum=0):
    if len(key) <= pos:
        _bad(key, "<missing>", "index missing")
    v = key[pos]
    if not isinstance(v, int) or v < minimum:
        _bad(key, v, f"must be an integer >= {minimum}")
    return v


# ------------------------------------------------------------------ figure 1

class Fig1a(MdpModel):
    family = "fig1a"
    finitely_branching = True

    def __init__(self):
        super().__init__()
        self._s0 = self.make_state(("fig1a", "s", 0))

    @property
    def initial(self):
        return (self._s0,)

    def make_state(self, key):
        if not key or key[0] != "fig1a":
            _bad(key, key[0] if key else "", "is not the fig1a family tag")
        if len(key) >= 2 and key[1] == "bot" and len(key) == 2:
            return StateRef(key, RANDOM, {LOSING_SINK})
        if len(key) == 3 and key[1] in ("s", "r"):
            i = _index(key, 2)
            if key[1] == "s":
                return StateRef(key, CONTROLLED, {GOAL} if i == 0 else ())
            return StateRef(key, RANDOM)
        _bad(key, key[1] if len(key) > 1 else "<missing>", "is not a fig1a role (s, r, bot)")

    def s(self, i):
        return self.make_state(("fig1a", "s", i))

    def r(self, i):
        return self.make_state(("fig1a", "r", i))

    @property
    def bottom(self):
        return self.make_state(("fig1a", "bot"))

    def _expand(self, state):
        role = state.key[1]
        if role == "s":
            i = state.key[2]
            return controlled([self.s(i + 1), self.r(i)])
        if role == "r":
            return random_law(_drop_law(state.key[2], self.bottom, self._s0))
        return random_law([(state, ONE)])


def _drop_law(i, bottom, s0):
    fall = Fraction(1, 2 ** i)
    entries = [(bottom, fall)]
    if fall < 1:
        entries.append((s0, 1 - fall))
    return entries


class Fig1b(MdpModel):
    family = "fig1b"
    finitely_branching = False

    def __init__(self):
        super().__init__()
        self._s0 = self.make_state(("fig1b", "s0"))

    @property
    def initial(self):
        return (self._s0,)

    def make_state(self, key):
        if not key or key[0] != "fig1b":
            _bad(key, key[0] if key else "", "is not the fig1b family tag")
        if key == ("fig1b", "s0"):
            return StateRef(key, CONTROLLED, {GOAL})
        if key == ("fig1b", "bot"):
            return StateRef(key, RANDOM, {LOSING_SINK})
        if len(key) == 3 and key[1] == "r":
            _index(key, 2)
            return StateRef(key, RANDOM)
        _bad(key, key[1] if len(key) > 1 else "<missing>", "is not a fig1b role (s0, r, bot)")

    def r(self, i):
        return self.make_state(("fig1b", "r", i))

    @property
    def bottom(self):
        return self.make_state(("fig1b", "bot"))

    def _expand(self, state):
        role = state.key[1]
        if role == "s0":
            return Expansion(CONTROLLED, InfiniteSuccessors(self.r, _r_index("fig1b", 0)))
        if role == "r":
            return random_law(_drop_law(state.key[2], self.bottom, self._s0))
        return random_law([(state, ONE)])


def _r_index(tag, offset):
    def index(state):
        k = state.key
        if len(k) == 3 and k[0] == tag and k[1] == "r" and isinstance(k[2], int):
            return k[2] - offset
        return None
    return index


class Fig3Hill(MdpModel):
    family = "fig3-hill"
    finitely_branching = False

    def __init__(self):
        super().__init__()
        self._s0 = self.make_state(("hill", "s0"))

    @property
    def initial(self):
        return (self._s0,)

    def make_state(self, key):
        if not key or key[0] != "hill":
            _bad(key, key[0] if key else "", "is not the hill family tag")
        if key == ("hill", "s0"):
            return StateRef(key, CONTROLLED)
        if len(key) == 3 and key[1] in ("r", "g", "bot"):
            _index(key, 2, 1)
            labels = {"r": (), "g": {GOAL}, "bot": {LOSING_SINK}}[key[1]]
            return StateRef(key, RANDOM, labels)
        _bad(key, key[1] if len(key) > 1 else "<missing>", "is not a hill role (s0, r, g, bot)")

    def r(self, i):
        return self.make_state(("hill", "r", i))

    def _expand(self, state):
        role = state.key[1]
        if role == "s0":
            return Expansion(CONTROLLED, InfiniteSuccessors(lambda j: self.r(j + 1), _r_index("hill", 1)))
        i = state.key[2]
        if role == "r":
            win, lose = Fraction(1, 2 ** i), Fraction(1, 3 ** i)
            return random_law([(self.make_state(("hill", "g", i)), win),
                               (self.make_state(("hill", "bot", i)), lose),
                               (self._s0, 1 - win - lose)])
        if role == "g":
            return random_law([(self._s0, ONE)])
        return random_law([(state, ONE)])


# ---------------------------------------------------------------- tree chain

TAG = "treechain"
ANNOTATED = "annotated"
LOSING_CHAIN = "losing-chain"
DEPTH_EQUALIZED = "depth-equalized"
PARITY = "parity"
VARIANTS = (ANNOTATED, LOSING_CHAIN, DEPTH_EQUALIZED, PARITY)
ROLES = ("B0", "Y0", "B1", "Y1", "guard", "leaf")
DOWN, UP = 0, 1


def guard_weight(n):
    """Probability of the black (safe) edge at a red guard of T^n."""
    return Fraction(n * n, n * n + 1)


def subtree_length(h, g=1):
    """Longest path length from the root of a height-h subtree to its exit."""
    return (5 + 2 * g) * 2 ** h - (4 + 2 * g)


class TreeChain(MdpModel):
    family = "tree-chain"
    finitely_branching = True
    depth_finite = True
    acyclic = True

    def __init__(self, p=Fraction(7, 10), variant=ANNOTATED, skip=0):
        super().__init__()
        p = Fraction(p)
        if not 0 < p < 1:
            raise ValidationError(f"p must lie strictly between 0 and 1, got {p}", p=str(p))
        if variant not in VARIANTS:
            raise ValidationError(f"unknown tree-chain variant {variant!r}", variant=variant)
        if skip < 0:
            raise ValidationError("skip must be nonnegative", skip=skip)
        self.p = p
        self.variant = variant
        self.skip = skip
        self._g = 2 if variant == PARITY else 1
        self._initial = (self.blue(skip + 1),)

    @property
    def initial(self):
        return self._initial

    def params(self):
        return {"p": f"{self.p.numerator}/{self.p.denominator}", "variant": self.variant, "skip": self.skip}

    # keys -----------------------------------------------------------------
    def blue(self, n):
        return self.make_state((TAG, "blue", n))

    def node(self, n, path, role):
        return self.make_state((TAG, "T", n, *path, role))

    def root(self, n, path=()):
        return self.node(n, path, "leaf" if len(path) == n else "B0")

    def exit(self, n, path=()):
        while path and path[-1] == "R":
            path = path[:-1]
        if not path:
            return self.blue(n + 1)
        return self.node(n, path[:-1], "B1")

    def parse(self, key):
        """(kind, n, path, role, suffix) for a tree-chain key."""
        if len(key) < 3 or key[0] != TAG:
            _bad(key, key[0] if key else "", "is not the treechain family tag")
        if key[1] == "blue":
            n = _index(key, 2, 1)
            return "blue", n, (), "blue", tuple(key[3:])
        if key[1] != "T":
            _bad(key, key[1], "must be 'blue' or 'T'")
        n = _index(key, 2, 1)
        i = 3
        while i < len(key) and key[i] in ("L", "R"):
            i += 1
        path = tuple(key[3:i])
        if i >= len(key):
            _bad(key, "<missing>", "role missing")
        role = key[i]
        if role not in ROLES:
            _bad(key, role, f"is not a tree role {ROLES}")
        h = n - len(path)
        if h < 0:
            _bad(key, render_key(path), f"is longer than the tree height {n}")
        if role in ("B0", "Y0", "B1", "Y1") and h == 0:
            _bad(key, role, "needs a subtree of positive height")
        if role == "leaf" and h != 0:
            _bad(key, role, "only exists at height 0")
        if role == "guard" and not path:
            _bad(key, role, "needs a nonempty path")
        return "tree", n, path, role, tuple(key[i + 1:])

    def make_state(self, key):
        kind, n, path, role, suffix = self.parse(key)
        if suffix:
            return self._aux_state(key, role, suffix)
        if role == "blue":
            labels, k = {"blue"}, RANDOM
        elif role in ("B0", "B1"):
            labels, k = {"brown"}, RANDOM
        elif role in ("Y0", "Y1"):
            labels, k = {"yellow"}, CONTROLLED
        elif role == "guard":
            labels, k = {"red-guard"}, RANDOM
        else:
            labels, k = {"green", GOAL}, RANDOM
        if self.variant == PARITY:
            labels = labels | {"color-2" if role == "leaf" else "color-1"}
        return StateRef(key, k, labels)

    def _aux_state(self, key, role, suffix):
        tag = suffix[0]
        if tag == "lose" and role == "guard" and self.variant in (LOSING_CHAIN, DEPTH_EQUALIZED):
            if len(suffix) == 2 and isinstance(suffix[1], int) and suffix[1] >= 0:
                return StateRef(key, RANDOM, {"losing-chain"})
        elif tag == "c3" and role == "guard" and self.variant == PARITY:
            if len(suffix) == 1:
                return StateRef(key, RANDOM, {"color-3"})
        elif tag == "stretch" and self.variant == DEPTH_EQUALIZED:
            if len(suffix) == 3 and all(isinstance(x, int) for x in suffix[1:]) and suffix[2] >= 1:
                base = key[:len(key) - 3]
                succ = self._plain_successors(self.make_state(base))
                idx, j = suffix[1], suffix[2]
                if idx < len(succ) and j < self.depth(succ[idx][0]) - self.depth(self.make_state(base)):
                    return StateRef(key, RANDOM)
                _bad(key, f"stretch.{idx}.{j}", "lies outside the stretch chain")
        _bad(key, tag, f"is not a valid suffix for variant {self.variant}")

    # structure ------------------------------------------------------------
    def _plain_successors(self, state):
        """Targets (and weights for random states) before depth equalization.

        Returns a list of (target, weight, red) with weight None at controlled states.
        """
        kind, n, path, role, suffix = self.parse(state.key)
        p = self.p
        if suffix:
            tag = suffix[0]
            base = state.key[:len(state.key) - len(suffix)]
            if tag == "lose":
                return [(self.make_state(base + ("lose", suffix[1] + 1)), ONE, False)]
            if tag == "c3":
                return [(self.root(n, path), ONE, False)]
        if role == "blue":
            if n == 1:
                return [(self.root(1), ONE, False)]
            return [(self.root(n), Fraction(1, n), False), (self.blue(n + 1), 1 - Fraction(1, n), False)]
        if role == "B0":
            return [(self.node(n, path, "Y0"), p, False), (self.node(n, path, "B1"), 1 - p, False)]
        if role == "Y0":
            return [(self.node(n, path + ("L",), "guard"), None, False), (self.node(n, path, "B1"), None, False)]
        if role == "B1":
            return [(self.node(n, path, "Y1"), p, False), (self.exit(n, path), 1 - p, False)]
        if role == "Y1":
            return [(self.node(n, path + ("R",), "guard"), None, False), (self.exit(n, path), None, False)]
        if role == "leaf":
            return [(self.exit(n, path), ONE, False)]
        a = guard_weight(n)
        target = self.root(n, path)
        if self.variant == ANNOTATED:
            return [(target, a, False), (target, 1 - a, True)]
        if self.variant == PARITY:
            return [(target, a, False), (self.make_state(state.key + ("c3",)), 1 - a, False)]
        return [(target, a, False), (self.make_state(state.key + ("lose", 0)), 1 - a, False)]

    def _expand(self, state):
        key = state.key
        if self.variant == DEPTH_EQUALIZED and len(key) >= 3 and key[-3] == "stretch":
            base = self.make_state(key[:-3])
            idx, j = key[-2], key[-1]
            target = self._plain_successors(base)[idx][0]
            length = self.depth(target) - self.depth(base)
            nxt = target if j + 1 >= length else self.make_state(key[:-1] + (j + 1,))
            return random_law([(nxt, ONE)])
        entries = self._plain_successors(state)
        if self.variant == DEPTH_EQUALIZED:
            d = self.depth(state)
            stretched = []
            for idx, (t, w, red) in enumerate(entries):
                if self.depth(t) - d > 1:
                    t = self.make_state(key + ("stretch", idx, 1))
                stretched.append((t, w, red))
            entries = stretched
        if state.kind == CONTROLLED:
            return controlled([t for t, _, _ in entries])
        return random_law(entries)

    # depth ----------------------------------------------------------------
    def blue_depth(self, n):
        g = self._g
        return (n - 1) * (1 - (4 + 2 * g)) + (5 + 2 * g) * (2 ** n - 2)

    def root_depth(self, n, path):
        g = self._g
        r = self.blue_depth(n) + 1
        h = n
        for step in path:
            if step == "L":
                r += 2 + g
            else:
                r += 4 + 2 * g + subtree_length(h - 1, g)
            h -= 1
        return r

    def _depth(self, state):
        key = state.key
        if len(key) >= 3 and key[-3] == "stretch":
            return self.depth(self.make_state(key[:-3])) + key[-1]
        kind, n, path, role, suffix = self.parse(key)
        if role == "blue":
            if n <= self.skip:
                raise UnreachableState(f"{state.name} lies before the initial state", state=state.name)
            return self.blue_depth(n) - self.blue_depth(self.skip + 1)
        if n <= self.skip:
            raise UnreachableState(f"{state.name} lies before the initial state", state=state.name)
        offset = self.blue_depth(self.skip + 1)
        g = self._g
        h = n - len(path)
        if role == "guard":
            d = self.root_depth(n, path) - g
            if suffix and suffix[0] == "lose":
                return d + 1 + suffix[1] - offset
            if suffix and suffix[0] == "c3":
                return d + 1 - offset
            return d - offset
        r = self.root_depth(n, path)
        if role in ("B0", "leaf"):
            return r - offset
        if role == "Y0":
            return r + 1 - offset
        b1 = r + 2 + g + subtree_length(h - 1, g)
        return (b1 if role == "B1" else b1 + 1) - offset


def variant_transform(model, variant):
    """The losing-chain, depth-equalized or parity version of an annotated tree chain."""
    if not isinstance(model, TreeChain) or model.variant != ANNOTATED:
        raise ValidationError("variant_transform expects the annotated tree-chain model")
    return TreeChain(model.p, variant, model.skip)


def tree_slice(model, n, path=()):
    """Explicit graph of the subtree of T^n at `path`, with its exit as boundary."""
    exit_state = model.exit(n, path)

    def stop(s):
        return s == exit_state or "losing-chain" in s.labels
    return truncate(model, [model.root(n, path)], stop=stop)


def chain_slice(model, last):
    """Explicit graph from the initial blue state through trees up to T^last."""
    end = model.blue(last + 1)
    return truncate(model, list(model.initial), stop=lambda s: s == end or "losing-chain" in s.labels)


def is_blue(state, n=None):
    k = state.key
    return len(k) == 3 and k[1] == "blue" and (n is None or k[2] == n)


# ------------------------------------------------------------- parameter grids

def yellow_nodes(height):
    """(relative path, which) for every yellow state of a height-`height` subtree."""
    out = []

    def walk(path, h):
        if h == 0:
            return
        out.append((path, 0))
        walk(path + ("L",), h - 1)
        out.append((path, 1))
        walk(path + ("R",), h - 1)
    walk((), height)
    return out


class MrParamGrid:
    """Downward-move probabilities for the yellow states of one subtree.

    Keys are (path relative to the subtree root, 0 for the left yellow state
    or 1 for the right one).  The effective probability of entering a child
    subtree is p times the downward probability, so it never exceeds p.
    """

    def __init__(self, values, grid_id="grid"):
        self.values = {}
        for key, v in values.items():
            v = Fraction(v)
            if not 0 <= v <= 1:
                raise ValidationError(f"downward probability {v} outside [0, 1]", node=str(key))
            self.values[(tuple(key[0]), key[1])] = v
        self.grid_id = grid_id

    def down(self, path, which):
        return self.values[(tuple(path), which)]

    def missing(self, height):
        return [n for n in yellow_nodes(height) if n not in self.values]

    @classmethod
    def uniform(cls, down, height, grid_id=None):
        down = Fraction(down)
        return cls({n: down for n in yellow_nodes(height)}, grid_id or f"down:{down}")

    @classmethod
    def per_level(cls, levels, height, grid_id=None):
        """levels[h] = (left, right) downward probabilities at subtrees of height h (1-based)."""
        vals = {}
        for path, which in yellow_nodes(height):
            h = height - len(path)
            vals[(path, which)] = Fraction(levels[h][which])
        return cls(vals, grid_id or "levels")

    @classmethod
    def random(cls, rng, height, denominator=20, grid_id=None):
        vals = {n: Fraction(rng.randint(0, denominator), denominator) for n in yellow_nodes(height)}
        return cls(vals, grid_id or "random")

    def to_json(self):
        return {"id": self.grid_id,
                "values": [{"path": "".join(p), "which": w, "down": f"{v.numerator}/{v.denominator}"}
                           for (p, w), v in sorted(self.values.items())]}


def structured_grids(height):
    """27 per-level grids: downward probabilities in {0, 1/2, 1}, i.e. visits in {0, p/2, p}.

    The top level takes every (left, right) pair and all deeper levels share
    a third value.
    """
    if height == 0:
        return [MrParamGrid({}, "empty")]
    choices = (Fraction(0), HALF, ONE)
    grids = []
    for left in choices:
        for right in choices:
            for deep in choices:
                levels = {h: (deep, deep) for h in range(1, height)}
                levels[height] = (left, right)
                grids.append(MrParamGrid.per_level(levels, height, f"levels:{left},{right},{deep}"))
    return grids


def parse_grid(text, height, p):
    """Grid from CLI syntax: uniform:X (visit probability X), down:X, random:SEED."""
    kind, _, arg = text.partition(":")
    if kind == "uniform":
        visit = Fraction(arg)
        if not 0 <= visit <= p:
            raise ValidationError(f"visit probability {visit} must lie in [0, p]", grid=text)
        return MrParamGrid.uniform(visit / p, height, text)
    if kind == "down":
        return MrParamGrid.uniform(Fraction(arg), height, text)
    if kind == "random":
        return MrParamGrid.random(random.Random(int(arg)), height, grid_id=text)
    raise ValidationError(f"unknown grid syntax {text!r}", grid=text)


# ------------------------------------------------------------------ strategies

def _tree_position(state):
    k = state.key
    if len(k) >= 4 and k[0] == TAG and k[1] == "T":
        i = 3
        while i < len(k) and k[i] in ("L", "R"):
            i += 1
        return k[2], tuple(k[3:i]), k[i]
    return None


def mr_grid_kernel(grid, n, base=()):
    """MR kernel playing `grid` inside the subtree of T^n at path `base`; down elsewhere."""
    cut = len(base)

    def rule(state, successors):
        pos = _tree_position(state)
        if pos is None or pos[0] != n or pos[1][:cut] != tuple(base):
            return [(ONE, successors[DOWN])]
        x = grid.down(pos[1][cut:], 0 if pos[2] == "Y0" else 1)
        return [(x, successors[DOWN]), (1 - x, successors[UP])]
    k = make_kernel(MR, rule, name=f"mr-grid[{grid.grid_id}]")
    k.descriptor = {"class": MR, "name": "mr-grid", "params": {"grid": grid.to_json(), "n": n, "base": "".join(base)}}
    return k


def _blue_bit(k):
    def observe(bit, state, successor):
        if is_blue(successor):
            return 1 if successor.key[2] <= k else 0
        if GOAL in state.labels:
            return 1
        return bit
    return observe


def _one_bit_tree_kernel(model, k, name, params):
    first = model.initial[0].key[2]

    observe = _blue_bit(k)

    def decide(bit, state, successors):
        succ = successors[DOWN] if bit == 0 else successors[UP]
        return (observe(bit, state, succ), succ)
    kern = make_kernel(ONE_BIT, decide, name=name, observe=observe, initial=1 if first <= k else 0)
    kern.deterministic = True
    kern.descriptor = {"class": ONE_BIT, "name": name, "params": params}
    return kern


def sigma_eps_k(eps):
    """Number of trees to skip so that the remaining red risk is at most eps.

    The expected number of red transitions in T^n is at most 1/(n^2+1) < 1/n^2
    and the tail sum over n > k is below 1/k.
    """
    eps = Fraction(eps)
    return ceil(1 / eps)


def fig1_k(eps):
    """Smallest k with 2^-k <= eps."""
    eps = Fraction(eps)
    k = 0
    while Fraction(1, 2 ** k) > eps:
        k += 1
    return k


def fig1b_markov(k):
    def rule(n, state, successors):
        return successors[n // 2 + 1 + k]
    kern = make_kernel(MARKOV, rule, name=f"fig1-markov(k={k})")
    kern.deterministic = True
    kern.descriptor = {"class": MARKOV, "name": "fig1-markov", "params": {"k": k}}
    return kern


def fig1b_log_index(n, k):
    """Index of r picked at step n by the logarithmic probe."""
    return k + 2 * (n // 2 + 1).bit_length()


def fig1b_log_markov(k):
    """Markov strategy picking r_j with j = k + 2 * bitlength(n//2 + 1).

    Visits t in [2^b - 1, 2^(b+1) - 1) share the index k + 2(b + 1), so the
    total risk is at most 2^-(k+1); the index grows only logarithmically.
    """
    def rule(n, state, successors):
        return successors[fig1b_log_index(n, k)]
    kern = make_kernel(MARKOV, rule, name=f"fig1b-log(k={k})")
    kern.deterministic = True
    kern.descriptor = {"class": MARKOV, "name": "fig1b-log", "params": {"k": k}}
    return kern


def fig1a_round_start(i, k):
    """Step at which round i (1-based) starts when round j takes k+j+2 steps."""
    return (i - 1) * i // 2 + (i - 1) * (k + 2)


def fig1a_markov(k):
    """Round i walks the spine to s_{i+k}, drops to r_{i+k} and returns to s_0."""
    def rule(n, state, successors):
        m = state.key[2]
        t0 = n - m
        i = 1
        while fig1a_round_start(i + 1, k) <= t0:
            i += 1
        return successors[0] if m < i + k else successors[1]
    kern = make_kernel(MARKOV, rule, name=f"fig1-markov(k={k})")
    kern.deterministic = True
    kern.descriptor = {"class": MARKOV, "name": "fig1-markov", "params": {"k": k}}
    return kern


def hill_block(visit):
    """Block index j of the visit-th (0-based) decision: block j spans 2^j visits."""
    return (visit + 2).bit_length() - 1


def hill_blocks():
    """Counts decisions at s_0; block j (2^j decisions) picks r_j."""
    def decide(v, state, successors):
        return ((ONE, v + 1, successors[hill_block(v) - 1]),)

    def observe(v, state, successor):
        return v
    kern = Kernel(GENERAL, 0, decide, observe, "hill-blocks", deterministic=True,
                  descriptor={"class": GENERAL, "name": "hill-blocks", "params": {}})
    return kern


def hill_block_survival(blocks):
    """Exact probability that the block strategy avoids every sink during the first `blocks` blocks.

    Block j makes 2^j independent visits to r_j, each losing with probability 3^-j.
    """
    out = ONE
    for j in range(1, blocks + 1):
        out *= (1 - Fraction(1, 3 ** j)) ** (2 ** j)
    return out


STRATEGIES = ("greedy-mr", "always-up-mr", "sigma1-onebit", "sigma-eps", "fig1-markov", "fig1b-log", "hill-blocks")


def build_strategy(name, model, **params):
    """Named strategy for a model of the matching family."""
    fam = model.family
    if name in ("greedy-mr", "always-up-mr", "sigma1-onebit", "sigma-eps"):
        if fam != "tree-chain":
            raise ValidationError(f"strategy {name} needs the tree-chain family, not {fam}", strategy=name)
        if name == "greedy-mr":
            k = make_kernel(MD, lambda s, succ: succ[DOWN], name="greedy-mr")
        elif name == "always-up-mr":
            k = make_kernel(MD, lambda s, succ: succ[UP], name="always-up-mr")
        elif name == "sigma1-onebit":
            return _one_bit_tree_kernel(model, 0, "sigma1-onebit", {})
        else:
            if "k" in params:
                kk = int(params["k"])
            elif "eps" in params:
                kk = sigma_eps_k(params["eps"])
            else:
                raise ValidationError("sigma-eps needs k or eps", strategy=name)
            return _one_bit_tree_kernel(model, kk, f"sigma-eps(k={kk})", {"k": kk})
        k.descriptor = {"class": MD, "name": name, "params": {}}
        return k
    if name == "fig1-markov":
        if "k" in params:
            kk = int(params["k"])
        elif "eps" in params:
            kk = fig1_k(params["eps"])
        else:
            raise ValidationError("fig1-markov needs k or eps", strategy=name)
        if fam == "fig1b":
            return fig1b_markov(kk)
        if fam == "fig1a":
            return fig1a_markov(kk)
        raise ValidationError(f"fig1-markov needs fig1a or fig1b, not {fam}", strategy=name)
    if name == "fig1b-log":
        if fam != "fig1b":
            raise ValidationError(f"fig1b-log needs the fig1b family, not {fam}", strategy=name)
        return fig1b_log_markov(int(params.get("k", 4)))
    if name == "hill-blocks":
        if fam != "fig3-hill":
            raise ValidationError(f"hill-blocks needs the fig3-hill family, not {fam}", strategy=name)
        return hill_blocks()
    raise ValidationError(f"unknown strategy {name!r}", strategy=name)


FAMILIES = ("fig1a", "fig1b", "fig3-hill", "tree-chain")


def build_family(name, **params):
    if name == "fig1a":
        return Fig1a()
    if name == "fig1b":
        return Fig1b()
    if name == "fig3-hill":
        return Fig3Hill()
    if name == "tree-chain":
        return TreeChain(Fraction(params.get("p", Fraction(7, 10))), params.get("variant", ANNOTATED),
                         int(params.get("skip", 0)))
    raise ValidationError(f"unknown family {name!r}", family=name)


def law_of(model, state):
    exp = model.expand(state)
    if exp.kind != RANDOM:
        raise ValidationError(f"{state.name} is controlled", state=state.name)
    return exp.law
