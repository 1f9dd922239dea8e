"""Countable MDPs given by a lazy successor function, plus finite slices of them.

A model never materializes its state space.  States are identified by
structured keys (tuples of strings and integers) that render as dotted paths
such as ``treechain.T.3.L.R.leaf``.  Random states carry an exact
ProbabilityLaw; transitions may be flagged red.
"""
from bisect import bisect_right
from collections import deque
from fractions import Fraction
from functools import lru_cache
from itertools import accumulate, count
from typing import NamedTuple

from .errors import InfiniteBranchingError, KeyFormatError, UnreachableState, UnsupportedOperation, ValidationError

CONTROLLED = "controlled"
RANDOM = "random"
KINDS = (CONTROLLED, RANDOM)

GOAL = "goal"
BOUNDARY = "boundary"
LOSING_SINK = "losing-sink"

ONE = Fraction(1)


def render_key(key):
    return ".".join(str(part) for part in key)


def parse_key(text):
    if isinstance(text, tuple):
        return text
    if not isinstance(text, str) or not text:
        raise KeyFormatError(f"state key must be a non-empty dotted string, got {text!r}", key=str(text))
    parts = text.split(".")
    if any(part == "" for part in parts):
        raise KeyFormatError(f"empty component in key {text!r}", key=text)
    return tuple(int(part) if part.isdigit() else part for part in parts)


def key_order(key):
    """Total order on keys: integers before strings, componentwise."""
    return tuple((0, part, "") if isinstance(part, int) else (1, 0, part) for part in key)


class StateRef:
    """A state of some model.  Equality and hashing use the key only."""
    __slots__ = ("key", "kind", "labels", "_hash")

    def __init__(self, key, kind, labels=()):
        self.key = key
        self.kind = kind
        self.labels = frozenset(labels)
        self._hash = hash(key)

    def __eq__(self, other):
        try:
            return self.key == other.key
        except AttributeError:
            return NotImplemented

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"<{self.name} {self.kind}>"

    @property
    def name(self):
        return render_key(self.key)

    @property
    def controlled(self):
        return self.kind == CONTROLLED

    def relabeled(self, labels):
        return StateRef(self.key, self.kind, labels)


class Outcome(NamedTuple):
    target: StateRef
    weight: Fraction
    red: bool = False


class ProbabilityLaw:
    """Finite distribution over successors with exact rational weights.

    Entries are distinct as (target, red-flag) pairs: a red and a black edge
    may lead to the same state.
    """
    infinite = False

    def __init__(self, entries):
        items = []
        seen = set()
        for entry in entries:
            target, weight = entry[0], Fraction(entry[1])
            red = bool(entry[2]) if len(entry) > 2 else False
            if weight <= 0:
                raise ValidationError(f"non-positive weight {weight} for {target.name}", target=target.name)
            tag = (target.key, red)
            if tag in seen:
                raise ValidationError(f"duplicate law entry for {target.name}", target=target.name)
            seen.add(tag)
            items.append(Outcome(target, weight, red))
        total = sum((o.weight for o in items), Fraction(0))
        if total != 1:
            raise ValidationError(f"weights sum to {total.numerator}/{total.denominator}, not 1",
                                  total=f"{total.numerator}/{total.denominator}")
        self.entries = tuple(items)
        self._cdf = None

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, ProbabilityLaw) and self.entries == other.entries

    def probability(self, target):
        return sum((o.weight for o in self.entries if o.target == target), Fraction(0))

    def targets(self):
        out = []
        for o in self.entries:
            if o.target not in out:
                out.append(o.target)
        return tuple(out)

    def sample(self, u):
        if self._cdf is None:
            cdf = list(accumulate(float(o.weight) for o in self.entries))
            cdf[-1] = 1.0
            self._cdf = cdf
        i = bisect_right(self._cdf, u)
        return self.entries[min(i, len(self.entries) - 1)]


class InfiniteLaw:
    """Distribution over infinitely many successors, given entry by entry."""
    infinite = True

    def __init__(self, entry):
        self._entry = lru_cache(maxsize=4096)(entry)

    def entry(self, i):
        return self._entry(i)

    def __iter__(self):
        return (self._entry(i) for i in count())

    def sample(self, u):
        acc = 0.0
        for i in count():
            o = self._entry(i)
            acc += float(o.weight)
            if u < acc:
                return o
            if i > 100000:
                return o


class InfiniteSuccessors:
    """Lazily indexed, infinite successor list."""
    finite = False

    def __init__(self, item, index=None):
        self._item = lru_cache(maxsize=4096)(item)
        self._index = index

    def __getitem__(self, i):
        if i < 0:
            raise IndexError("infinite successor lists have no end")
        return self._item(i)

    def __iter__(self):
        return (self._item(i) for i in count())

    def index(self, state):
        i = self._index(state) if self._index else None
        if i is None or i < 0 or self._item(i) != state:
            raise ValueError(f"{state!r} is not a successor")
        return i

    def __contains__(self, state):
        try:
            self.index(state)
        except (ValueError, KeyFormatError):
            return False
        return True


class Expansion(NamedTuple):
    kind: str
    successors: object          # tuple of StateRef or InfiniteSuccessors
    law: object = None          # ProbabilityLaw / InfiniteLaw for random states
    frontier: bool = False      # successors unknown (explicit boundary)

    @property
    def finite(self):
        return isinstance(self.successors, tuple)


def controlled(successors):
    return Expansion(CONTROLLED, tuple(successors))


def random_law(entries):
    law = ProbabilityLaw(entries)
    return Expansion(RANDOM, law.targets(), law)


def infinite_random(entry, index=None):
    law = InfiniteLaw(entry)
    return Expansion(RANDOM, InfiniteSuccessors(lambda i: law.entry(i).target, index), law)


class MdpModel:
    """Base class for lazily generated models.

    Subclasses provide ``initial``, ``make_state(key)`` and ``_expand(state)``.
    Expansions are memoized in a bounded, thread-safe LRU cache.
    """
    family = "model"
    finitely_branching = True
    depth_finite = False
    acyclic = False

    def __init__(self, cache_size=1 << 17):
        self._cached_expand = lru_cache(maxsize=cache_size)(self._checked_expand)

    @property
    def initial(self):
        raise NotImplementedError

    def params(self):
        return {}

    def describe(self):
        return {
            "family": self.family,
            "params": self.params(),
            "initial": [s.name for s in self.initial],
            "finitely_branching": self.finitely_branching,
            "depth_finite": self.depth_finite,
            "acyclic": self.acyclic,
        }

    def state(self, key):
        """StateRef for a key (tuple or dotted string); KeyFormatError if malformed."""
        key = parse_key(key)
        return self.make_state(key)

    def make_state(self, key):
        raise NotImplementedError

    def expand(self, state):
        return self._cached_expand(state)

    def _checked_expand(self, state):
        exp = self._expand(state)
        if not exp.frontier:
            empty = exp.finite and len(exp.successors) == 0
            if empty:
                raise ValidationError(f"state {state.name} has no successor", state=state.name)
        return exp

    def _expand(self, state):
        raise NotImplementedError

    def is_goal(self, state):
        return GOAL in state.labels

    def depth(self, state):
        if not self.depth_finite:
            raise UnsupportedOperation(f"model {self.family} is not depth-finite", family=self.family)
        return self._depth(state)

    def _depth(self, state):
        raise UnsupportedOperation(f"model {self.family} has no depth function", family=self.family)


def bubble_distances(model, roots, k=None, stop=None, max_states=2_000_000):
    """Shortest distance from `roots` for every state within k steps (BFS order).

    States satisfying `stop` are included but not expanded.  k=None explores
    until closure, guarded by max_states.
    """
    dist = {}
    queue = deque()
    for s in roots:
        if s not in dist:
            dist[s] = 0
            queue.append(s)
    while queue:
        s = queue.popleft()
        d = dist[s]
        if k is not None and d >= k:
            continue
        if stop is not None and stop(s):
            continue
        exp = model.expand(s)
        if exp.frontier:
            continue
        if not exp.finite:
            raise InfiniteBranchingError(
                f"state {s.name} is infinitely branching; apply definitize_branching first", state=s.name)
        for t in exp.successors:
            if t not in dist:
                dist[t] = d + 1
                if len(dist) > max_states:
                    raise UnsupportedOperation(f"exploration exceeded {max_states} states", limit=max_states)
                queue.append(t)
    return dist


def bubble(model, roots, k):
    """States reachable from `roots` in at most k transitions."""
    return set(bubble_distances(model, roots, k))


class SliceEdge(NamedTuple):
    source: tuple
    target: tuple
    weight: object      # Fraction for random sources, None for controlled ones
    red: bool = False


class FiniteSlice:
    """Explicit finite part of a model with a flagged boundary."""

    def __init__(self, states, edges, initial, boundary):
        self.boundary = frozenset(boundary)
        self.states = {}
        for key, ref in states.items():
            if key in self.boundary and BOUNDARY not in ref.labels:
                ref = ref.relabeled(ref.labels | {BOUNDARY})
            self.states[key] = ref
        self.edges = list(edges)
        self.initial = tuple(initial)
        self.out = {key: [] for key in self.states}
        for e in self.edges:
            self.out[e.source].append(e)
        self.topological_order = self._toposort()

    def __len__(self):
        return len(self.states)

    @property
    def acyclic(self):
        return self.topological_order is not None

    def ref(self, key):
        return self.states[key]

    def successors(self, key):
        seen = []
        for e in self.out[key]:
            ref = self.states[e.target]
            if ref not in seen:
                seen.append(ref)
        return tuple(seen)

    def law(self, key):
        return ProbabilityLaw((self.states[e.target], e.weight, e.red) for e in self.out[key])

    def _toposort(self):
        indeg = {key: 0 for key in self.states}
        targets = {key: [] for key in self.states}
        for e in self.edges:
            if e.target not in targets[e.source]:
                targets[e.source].append(e.target)
                indeg[e.target] += 1
        queue = deque(key for key in self.states if indeg[key] == 0)
        order = []
        while queue:
            key = queue.popleft()
            order.append(key)
            for t in targets[key]:
                indeg[t] -= 1
                if indeg[t] == 0:
                    queue.append(t)
        if len(order) != len(self.states):
            return None
        return tuple(order)

    def to_json(self):
        states = []
        for key, ref in self.states.items():
            states.append({"key": render_key(key), "kind": ref.kind, "labels": sorted(ref.labels)})
        edges = []
        for e in self.edges:
            item = {"from": render_key(e.source), "to": render_key(e.target),
                    "numerator": None if e.weight is None else e.weight.numerator,
                    "denominator": None if e.weight is None else e.weight.denominator}
            if e.red:
                item["red"] = True
            edges.append(item)
        return {
            "states": states,
            "edges": edges,
            "initial": [render_key(k) for k in self.initial],
            "boundary": [render_key(k) for k in self.states if k in self.boundary],
            "acyclic": self.acyclic,
        }


def truncate(model, roots, k=None, stop=None, max_states=2_000_000):
    """Explicit slice over the bubble of `roots`.

    A state keeps its outgoing edges only if all its successors lie in the
    slice (and it is not a stop state); otherwise it becomes boundary.
    """
    dist = bubble_distances(model, roots, k, stop=stop, max_states=max_states)
    states = {s.key: s for s in dist}
    edges = []
    boundary = set()
    for s in dist:
        if stop is not None and stop(s):
            boundary.add(s.key)
            continue
        exp = model.expand(s)
        if exp.frontier or not exp.finite or any(t not in dist for t in exp.successors):
            boundary.add(s.key)
            continue
        if exp.kind == CONTROLLED:
            edges.extend(SliceEdge(s.key, t.key, None, False) for t in exp.successors)
        else:
            edges.extend(SliceEdge(s.key, o.target.key, o.weight, o.red) for o in exp.law)
    return FiniteSlice(states, edges, [s.key for s in roots], boundary)


def longest_paths(slice_, roots=None):
    """Longest path length from the slice's initial states, per reachable key."""
    if not slice_.acyclic:
        raise UnsupportedOperation("longest paths need an acyclic slice")
    roots = slice_.initial if roots is None else roots
    best = {key: 0 for key in roots}
    for key in slice_.topological_order:
        if key not in best:
            continue
        for e in slice_.out[key]:
            d = best[key] + 1
            if best.get(e.target, -1) < d:
                best[e.target] = d
    return best


def path_length_sets(slice_, roots=None):
    """All lengths of paths from the initial states, per reachable key."""
    if not slice_.acyclic:
        raise UnsupportedOperation("path enumeration needs an acyclic slice")
    roots = slice_.initial if roots is None else roots
    lengths = {key: {0} for key in roots}
    for key in slice_.topological_order:
        if key not in lengths:
            continue
        for t in {e.target for e in slice_.out[key]}:
            lengths.setdefault(t, set()).update(d + 1 for d in lengths[key])
    return lengths


# ---------------------------------------------------------------- explicit models

def _pointer(*parts):
    return "/" + "/".join(str(p) for p in parts)


def slice_from_json(doc):
    """Validate a slice document and build the FiniteSlice it describes."""
    if not isinstance(doc, dict):
        raise ValidationError("document must be a JSON object", pointer="")
    for field in ("states", "edges", "initial"):
        if field not in doc:
            raise ValidationError(f"missing field '{field}'", pointer=_pointer(field))
        if not isinstance(doc[field], list):
            raise ValidationError(f"field '{field}' must be an array", pointer=_pointer(field))
    states = {}
    for i, item in enumerate(doc["states"]):
        if not isinstance(item, dict):
            raise ValidationError("state entry must be an object", pointer=_pointer("states", i))
        name = item.get("key")
        if not isinstance(name, str):
            raise ValidationError("state key must be a string", pointer=_pointer("states", i, "key"))
        try:
            key = parse_key(name)
        except KeyFormatError as exc:
            raise ValidationError(str(exc), pointer=_pointer("states", i, "key")) from exc
        if key in states:
            raise ValidationError(f"duplicate state {name}", pointer=_pointer("states", i, "key"))
        kind = item.get("kind")
        if kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}", pointer=_pointer("states", i, "kind"))
        labels = item.get("labels", [])
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise ValidationError("labels must be an array of strings", pointer=_pointer("states", i, "labels"))
        states[key] = StateRef(key, kind, labels)

    def lookup(name, *where):
        if not isinstance(name, str):
            raise ValidationError("state reference must be a string", pointer=_pointer(*where))
        try:
            key = parse_key(name)
        except KeyFormatError as exc:
            raise ValidationError(str(exc), pointer=_pointer(*where)) from exc
        if key not in states:
            raise ValidationError(f"unknown state {name}", pointer=_pointer(*where))
        return key

    boundary = set()
    for i, name in enumerate(doc.get("boundary", [])):
        boundary.add(lookup(name, "boundary", i))
    initial = [lookup(name, "initial", i) for i, name in enumerate(doc["initial"])]

    edges = []
    for i, item in enumerate(doc["edges"]):
        if not isinstance(item, dict):
            raise ValidationError("edge entry must be an object", pointer=_pointer("edges", i))
        src = lookup(item.get("from"), "edges", i, "from")
        dst = lookup(item.get("to"), "edges", i, "to")
        red = item.get("red", False)
        if not isinstance(red, bool):
            raise ValidationError("red must be a boolean", pointer=_pointer("edges", i, "red"))
        if states[src].kind == CONTROLLED:
            weight = None
        else:
            num, den = item.get("numerator"), item.get("denominator")
            if not (isinstance(num, int) and isinstance(den, int)) or isinstance(num, bool) or den <= 0 or num <= 0:
                raise ValidationError("random edges need positive integer numerator/denominator",
                                      pointer=_pointer("edges", i))
            weight = Fraction(num, den)
        edges.append(SliceEdge(src, dst, weight, red))

    out = {key: [] for key in states}
    for i, e in enumerate(edges):
        if e.source in boundary:
            raise ValidationError(f"boundary state {render_key(e.source)} has outgoing edges",
                                  pointer=_pointer("edges", i))
        out[e.source].append(e)
    positions = {key: i for i, key in enumerate(states)}
    for key, ref in states.items():
        if key in boundary:
            continue
        where = _pointer("states", positions[key])
        if not out[key]:
            raise ValidationError(f"state {ref.name} has no successor", pointer=where, state=ref.name)
        if ref.kind == RANDOM:
            total = sum((e.weight for e in out[key]), Fraction(0))
            if total != 1:
                raise ValidationError(f"weights of state {ref.name} sum to {total.numerator}/{total.denominator}",
                                      pointer=where, state=ref.name, total=f"{total.numerator}/{total.denominator}")
            tags = [(e.target, e.red) for e in out[key]]
            if len(set(tags)) != len(tags):
                raise ValidationError(f"duplicate edge out of {ref.name}", pointer=where, state=ref.name)
        else:
            targets = [e.target for e in out[key]]
            if len(set(targets)) != len(targets):
                raise ValidationError(f"duplicate successor of {ref.name}", pointer=where, state=ref.name)
    result = FiniteSlice(states, edges, initial, boundary)
    claim = doc.get("acyclic")
    if claim is not None and not isinstance(claim, bool):
        raise ValidationError("acyclic must be a boolean", pointer=_pointer("acyclic"))
    if claim and not result.acyclic:
        raise ValidationError("document claims acyclic but contains a cycle", pointer=_pointer("acyclic"))
    return result


class ExplicitMdp(MdpModel):
    """A FiniteSlice behind the lazy model interface."""
    family = "explicit"

    def __init__(self, slice_, name="explicit"):
        super().__init__()
        self.slice = slice_
        self.name = name
        self.acyclic = slice_.acyclic
        self.depth_finite = slice_.acyclic

    @property
    def initial(self):
        return tuple(self.slice.states[k] for k in self.slice.initial)

    def params(self):
        return {"name": self.name, "states": len(self.slice)}

    def make_state(self, key):
        try:
            return self.slice.states[key]
        except KeyError:
            raise KeyFormatError(f"unknown state {render_key(key)}", key=render_key(key)) from None

    def _expand(self, state):
        key = state.key
        if key in self.slice.boundary:
            return Expansion(state.kind, (), None, frontier=True)
        if state.kind == CONTROLLED:
            return controlled(self.slice.successors(key))
        law = self.slice.law(key)
        return Expansion(RANDOM, law.targets(), law)

    def _depth(self, state):
        if not hasattr(self, "_longest"):
            self._longest = longest_paths(self.slice)
        try:
            return self._longest[state.key]
        except KeyError:
            raise UnreachableState(f"{state.name} is not reachable from the initial states", state=state.name) from None
