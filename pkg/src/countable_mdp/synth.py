"""One-bit strategy synthesis for Büchi objectives on acyclic models.

Pipeline (``synthesize_onebit_markov``): encode a step counter, replace
infinite branching by chains, pick a bubble schedule K_1 < L_1 < K_2 < ...
against a probe strategy, solve the nested bounded-reward problems level by
level from the deepest one down, assemble the one-bit strategy and translate
it back to the original model.

Level i works on the region K_i minus K_{i-2}.  A run starting after an F_{i-1}
visit scores the value of the later levels at its first F_i visit, and 0 if
it leaves K_i or re-enters K_{i-2} first.
"""
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ContractViolation, ScheduleError, UnsupportedOperation, ValidationError
from .model import CONTROLLED, GOAL, LOSING_SINK, ONE, bubble_distances, key_order, render_key
from .numeric import fmt_decimal
from .strategies import MD, ONE_BIT, Kernel, back_translate, lift_through_gadget, lift_to_step_encoding
from .transforms import GadgetModel, definitize_branching, encode_step_counter

ZERO = Fraction(0)


# ---------------------------------------------------------------- helpers

def potential(model, state):
    """A quantity that never decreases along edges (the step counter when present)."""
    fn = getattr(model, "potential", None)
    if fn is not None:
        return fn(state)
    if isinstance(model, GadgetModel):
        owner = model.owner(state)
        return potential(model.base, owner[0] if owner else state)
    if getattr(model, "transform_kind", None) == "step":
        return state.key[1]
    return model.depth(state)


def _is_dead(state):
    return LOSING_SINK in state.labels


def absorption(model, kernel, starts, terminal, limit=2_000_000, carry=None):
    """Exact probability-weighted terminal value from each start.

    terminal(state, tag) returns a value for absorbing nodes and None
    otherwise; carry(tag, state) updates a tag along the run (default: none).
    The kernel must be memoryless.  Iterative post-order evaluation over the
    (finite) set of nodes the kernel reaches before absorption.
    """
    if kernel.cls not in (MD, "MR"):
        raise UnsupportedOperation("absorption needs a memoryless kernel", kernel=kernel.name)
    memo = {}
    roots = [(s, carry(None, s) if carry else None) for s in starts]
    for root in roots:
        stack = [(root, False)]
        while stack:
            node, ready = stack.pop()
            if node in memo:
                continue
            state, tag = node
            t = terminal(state, tag)
            if t is not None:
                memo[node] = t
                continue
            exp = model.expand(state)
            if exp.kind == CONTROLLED:
                children = [(w, s) for w, _, s in kernel.decide(None, state, exp.successors)]
            else:
                children = [(o.weight, o.target) for o in exp.law]
            children = [(w, (s, carry(tag, s) if carry else None)) for w, s in children]
            if ready:
                memo[node] = sum((w * memo[c] for w, c in children), ZERO)
                continue
            stack.append((node, True))
            for _, c in children:
                if c not in memo:
                    stack.append((c, False))
            if len(memo) > limit:
                raise UnsupportedOperation("absorption search exceeded its state limit", limit=limit)
    return {r[0]: memo[r] for r in roots}


def topological(states, successors):
    """Kahn order of the subgraph induced by `states`; None if it has a cycle."""
    states = list(states)
    inside = set(states)
    indeg = {s: 0 for s in states}
    out = {}
    for s in states:
        ts = [t for t in successors(s) if t in inside]
        out[s] = ts
        for t in ts:
            indeg[t] += 1
    queue = sorted((s for s in states if indeg[s] == 0), key=lambda s: key_order(s.key))
    order = []
    while queue:
        s = queue.pop()
        order.append(s)
        for t in out[s]:
            indeg[t] -= 1
            if indeg[t] == 0:
                queue.append(t)
    if len(order) != len(states):
        return None
    return order


# ---------------------------------------------------------------- schedule

@dataclass
class Level:
    index: int
    k: int
    l: int
    eps: Fraction
    visit_bound: Fraction
    return_bound: Fraction
    K: frozenset = frozenset()
    L: frozenset = frozenset()
    F: frozenset = frozenset()

    def to_json(self):
        return {"i": self.index, "k": self.k, "l": self.l, "eps": f"{self.eps.numerator}/{self.eps.denominator}",
                "visit_bound": fmt_decimal(self.visit_bound), "return_bound": fmt_decimal(self.return_bound),
                "K": len(self.K), "L": len(self.L), "F": len(self.F)}


@dataclass
class BubbleSchedule:
    eps: Fraction
    levels: list
    dist: dict

    def level(self, i):
        return self.levels[i - 1]

    def K(self, i):
        return self.levels[i - 1].K if 1 <= i <= len(self.levels) else frozenset()

    def F(self, i):
        return self.levels[i - 1].F if 1 <= i <= len(self.levels) else frozenset()

    def layer(self, state):
        d = self.dist.get(state)
        if d is None:
            return None
        for lv in self.levels:
            if d <= lv.k:
                return lv.index
        return None

    def check(self):
        """Violated schedule invariants (empty when all hold)."""
        problems = []
        for a, b in zip(self.levels, self.levels[1:]):
            if not a.k < a.l < b.k:
                problems.append(f"k/l order broken at level {a.index}")
        for lv in self.levels:
            if not lv.k < lv.l:
                problems.append(f"k_{lv.index} >= l_{lv.index}")
            if lv.eps != self.eps / 2 ** (lv.index + 1):
                problems.append(f"eps_{lv.index} is not eps/2^{lv.index + 1}")
        seen = set()
        for lv in self.levels:
            if seen & lv.F:
                problems.append(f"F_{lv.index} overlaps an earlier F set")
            seen |= lv.F
        return problems

    def to_json(self):
        return {"eps": f"{self.eps.numerator}/{self.eps.denominator}", "levels": [lv.to_json() for lv in self.levels]}


def _within(dist, k):
    return frozenset(s for s, d in dist.items() if d <= k)


def choose_schedule(model, initial, goal, eps, probe, levels, k_cap=4000, dist_cap=None):
    """Minimal k_i, l_i (levels 1..`levels`) for the probe kernel.

    k_i: smallest k > l_{i-1} such that, from every initial state, the probe
    leaves bubble(I, k) alive without visiting F outside L_{i-1} with
    probability at most eps_i.
    l_i: smallest l > k_i such that the probe visits a state outside
    bubble(I, l) whose potential still allows a return into K_i with
    probability at most eps_i.  Runs are explored only while their potential
    (never decreasing along edges) can still lead back into K_i.
    """
    eps = Fraction(eps)
    if not model.finitely_branching:
        raise UnsupportedOperation("schedules need a finitely branching model; apply definitize_branching")
    initial = list(initial)
    dist = {}
    reach = [-1]

    def ensure(k):
        if k > reach[0]:
            nonlocal dist
            dist = bubble_distances(model, initial, k)
            reach[0] = k
        return dist

    out = []
    prev_l = -1
    prev_L = frozenset()
    for i in range(1, levels + 1):
        eps_i = eps / 2 ** (i + 1)

        def escape(k):
            d = ensure(k)

            def terminal(s, tag):
                if _is_dead(s):
                    return ZERO
                dd = d.get(s)
                if dd is None or dd > k:
                    return ONE
                if goal(s) and s not in prev_L:
                    return ZERO
                return None
            vals = absorption(model, probe, initial, terminal)
            return max(vals.values())

        lo = prev_l + 1
        if escape(lo) <= eps_i:
            k = lo
        else:
            hi = lo + 1
            while escape(hi) > eps_i:
                if hi >= k_cap:
                    raise ScheduleError(
                        f"level {i}: no k up to {k_cap} brings the escape probability to {eps_i}",
                        level=i, achieved=fmt_decimal(escape(hi)), threshold=str(eps_i))
                lo, hi = hi, min(k_cap, hi * 2)
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if escape(mid) <= eps_i:
                    hi = mid
                else:
                    lo = mid
            k = hi
        visit = escape(k)
        d = ensure(k)
        K = _within(d, k)
        top = max(potential(model, s) for s in K)

        def returns(l):
            dd = ensure(l)

            def outside(s):
                x = dd.get(s)
                return x is None or x > l

            def carry(left, s):
                return bool(left) or outside(s)

            def terminal(s, left):
                if potential(model, s) > top:
                    return ZERO
                if left and s in K:
                    return ONE
                return None
            vals = absorption(model, probe, initial, terminal, carry=carry)
            return max(vals.values())

        lo = k + 1
        if returns(lo) <= eps_i:
            l = lo
        else:
            hi = lo + 1
            while returns(hi) > eps_i:
                if hi >= k_cap:
                    raise ScheduleError(f"level {i}: no l up to {k_cap} bounds the return probability",
                                        level=i, achieved=fmt_decimal(returns(hi)), threshold=str(eps_i))
                lo, hi = hi, min(k_cap, hi * 2)
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if returns(mid) <= eps_i:
                    hi = mid
                else:
                    lo = mid
            l = hi
        back = returns(l)
        d = ensure(l)
        L = _within(d, l)
        F = frozenset(s for s in K if goal(s) and s not in prev_L)
        if i == 1 and not F:
            raise ScheduleError("level 1: no goal state is reachable within the first bubble", level=1,
                                achieved=fmt_decimal(visit), threshold=str(eps_i))
        out.append(Level(i, k, l, eps_i, visit, back, K, L, F))
        prev_l, prev_L = l, L
    d = ensure(reach[0])
    return BubbleSchedule(eps, out, dict(d))


# --------------------------------------------------------- region solving

@dataclass
class ValueTable:
    level: int
    J: int
    values: dict            # F_level state -> value of the later levels (upper bound)
    direction: str = "upper"


@dataclass
class RegionSolution:
    level: int
    strategy: dict          # controlled state -> chosen successor
    values: dict            # region state -> optimal bounded-reward value
    start_values: dict      # value at the run starts of this level (I or F_{level-1})


def _successors(model, s):
    return model.expand(s).successors


def solve_region(model, schedule, i, rewards):
    """Optimal MD strategy for level i's bounded-reward objective.

    rewards: value collected at the first visit of each F_i state.
    """
    K_i, K_prev2, F_i = schedule.K(i), schedule.K(i - 2), schedule.F(i)
    region = K_i - K_prev2
    order = topological(region, lambda s: _successors(model, s))
    if order is None:
        raise UnsupportedOperation(f"region of level {i} is not acyclic", level=i)
    values = {}
    strategy = {}

    def worth(t):
        if t in F_i:
            return rewards.get(t, ZERO)
        if t not in K_i or t in K_prev2:
            return ZERO
        return values[t]

    for s in reversed(order):
        if s in F_i and i > 0:
            values[s] = rewards.get(s, ZERO)
            # decisions at F_i states are taken by the next level; keep a best move anyway
        exp = model.expand(s)
        if exp.frontier:
            values.setdefault(s, ZERO)      # nothing is known past a slice boundary
        elif exp.kind == CONTROLLED:
            best, pick = None, None
            for t in sorted(exp.successors, key=lambda x: key_order(x.key)):
                w = worth(t)
                if best is None or w > best:
                    best, pick = w, t
            strategy[s] = pick
            if s not in F_i:
                values[s] = best
        elif s not in F_i:
            values[s] = sum((o.weight * worth(o.target) for o in exp.law), ZERO)
    if i == 1:
        starts = {s: (rewards.get(s, ZERO) if s in F_i else values.get(s, ZERO)) for s in schedule_initial(schedule)}
    else:
        starts = {s: _continuation(model, s, values, strategy, worth) for s in schedule.F(i - 1)}
    return RegionSolution(i, strategy, values, starts)


def _continuation(model, s, values, strategy, worth):
    """Value of level i's objective for a run that has just visited s (s itself does not count)."""
    exp = model.expand(s)
    if exp.kind == CONTROLLED:
        return max(worth(t) for t in exp.successors)
    return sum((o.weight * worth(o.target) for o in exp.law), ZERO)


def schedule_initial(schedule):
    return [s for s, d in schedule.dist.items() if d == 0]


def nested_values(model, schedule, J):
    """Solutions of levels J, J-1, ..., 1 with nesting truncated at J."""
    sols = {}
    rewards = {s: ONE for s in schedule.F(J)}
    for j in range(J, 0, -1):
        sol = solve_region(model, schedule, j, rewards)
        sols[j] = sol
        rewards = sol.start_values if j > 1 else {}
    return sols


def value_R_ge(model, schedule, i, J=None, tolerance=Fraction(1, 10**6)):
    """Values of the later levels at F_i states, deepening the nesting up to J (or all levels)."""
    top = len(schedule.levels)
    J = top if J is None else min(J, top)
    if J <= i:
        raise ValidationError("need J > i", i=i, J=J)
    history = []
    table = None
    for depth in range(i + 1, J + 1):
        sols = nested_values(model, schedule, depth)
        table = dict(sols[i + 1].start_values)
        history.append(table)
    gap = None
    if len(history) >= 2:
        gap = max((abs(history[-2][s] - history[-1][s]) for s in history[-1]), default=ZERO)
    vt = ValueTable(i, J, table)
    vt.history = history
    vt.gap = gap
    vt.converged = gap is not None and gap <= tolerance
    return vt


def policy_values(model, schedule, i, rewards, strategy):
    """Independent evaluation of a fixed MD strategy on level i's region."""
    K_i, K_prev2, F_i = schedule.K(i), schedule.K(i - 2), schedule.F(i)
    region = K_i - K_prev2
    memo = {}

    def worth(t):
        if t in F_i:
            return rewards.get(t, ZERO)
        if t not in K_i or t in K_prev2:
            return ZERO
        return val(t)

    def val(s):
        stack = [s]
        while stack:
            x = stack[-1]
            if x in memo:
                stack.pop()
                continue
            exp = model.expand(x)
            if exp.frontier:
                memo[x] = ZERO
                stack.pop()
                continue
            targets = [strategy[x]] if exp.kind == CONTROLLED else [o.target for o in exp.law]
            pending = [t for t in targets if t not in F_i and t in K_i and t not in K_prev2 and t not in memo]
            if pending:
                stack.extend(pending)
                continue
            if exp.kind == CONTROLLED:
                memo[x] = worth(strategy[x])
            else:
                memo[x] = sum((o.weight * worth(o.target) for o in exp.law), ZERO)
            stack.pop()
        return memo[s]

    return {s: val(s) for s in region if s not in F_i}, worth


def improving_deviations(model, schedule, i, rewards, strategy):
    """Controlled states where switching one choice beats the strategy (empty if locally optimal)."""
    vals, worth = policy_values(model, schedule, i, rewards, strategy)
    bad = []
    for s, v in vals.items():
        exp = model.expand(s)
        if exp.kind != CONTROLLED:
            continue
        for t in exp.successors:
            if worth(t) > v:
                bad.append((s, t))
    return bad


# --------------------------------------------------------------- assembly

def assemble_onebit(schedule, strategies, fallback=None, name="sigma-prime"):
    """One-bit kernel switching between the level strategies.

    In layer i (K_i minus K_{i-1}) with bit i mod 2 the kernel plays sigma_i
    until it stands on an F_i state, where the bit becomes (i+1) mod 2; with
    bit (i+1) mod 2 it plays sigma_{i+1}.  Levels without a strategy defer to
    the highest available one and then to `fallback`.
    """
    top = max(strategies)
    F_sets = {lv.index: lv.F for lv in schedule.levels}
    stats = {"fallback": 0}

    def pick(level, state, successors):
        for j in (level, top):
            table = strategies.get(min(j, top))
            if table is not None and state in table:
                return table[state]
        stats["fallback"] += 1
        if fallback is not None:
            (_, _, t), = fallback.decide(fallback.initial, state, successors)
            return t
        return min(successors, key=lambda x: key_order(x.key))

    def flips(bit, state):
        i = schedule.layer(state)
        return i is not None and bit == i % 2 and state in F_sets.get(i, ())

    def decide(bit, state, successors):
        i = schedule.layer(state)
        if i is None:
            return ((ONE, bit, pick(top, state, successors)),)
        if bit == i % 2:
            if state in F_sets.get(i, ()):
                return ((ONE, (i + 1) % 2, pick(i + 1, state, successors)),)
            return ((ONE, bit, pick(i, state, successors)),)
        return ((ONE, bit, pick(i + 1, state, successors)),)

    def observe(bit, state, successor):
        if flips(bit, state):
            return 1 - bit
        return bit

    kern = Kernel(ONE_BIT, 1, decide, observe, name, size=2, deterministic=True,
                  descriptor={"class": ONE_BIT, "name": name})
    kern.stats = stats
    kern.flips = flips
    return kern


def bit_flip_violations(trace, schedule):
    """Transitions where the bit changed somewhere other than a first F_i visit in the active layer."""
    F_sets = {lv.index: lv.F for lv in schedule.levels}
    bad = []
    recs = trace.records
    for a, b in zip(recs, recs[1:]):
        if a.mode != b.mode:
            i = schedule.layer(a.state)
            ok = i is not None and a.mode == i % 2 and a.state in F_sets.get(i, ())
            if not ok:
                bad.append(a.step)
    return bad


# ------------------------------------------------------------------ pipeline

@dataclass
class SynthesisReport:
    eps: Fraction
    schedule: BubbleSchedule
    solutions: dict
    gaps: dict = field(default_factory=dict)
    tolerance: Fraction = Fraction(1, 10**6)
    levels: int = 0
    proxy_goals: int = 0
    proxy_horizon: int = 0
    notes: list = field(default_factory=list)

    def to_json(self):
        return {
            "eps": f"{self.eps.numerator}/{self.eps.denominator}",
            "schedule": self.schedule.to_json(),
            "schedule_problems": self.schedule.check(),
            "levels": self.levels,
            "tolerance": fmt_decimal(self.tolerance),
            "value_gaps": {str(i): (None if g is None else fmt_decimal(g)) for i, g in self.gaps.items()},
            "start_values": {render_key(s.key): fmt_decimal(v) for s, v in self.solutions[1].start_values.items()},
            "proxy": {"m": self.proxy_goals, "h": self.proxy_horizon},
            "notes": self.notes,
        }


@dataclass
class Synthesis:
    kernel: Kernel              # on the original model
    working_kernel: Kernel      # on the transformed model
    working_model: object
    encoded_model: object
    report: SynthesisReport


def synthesize_onebit_markov(model, eps, probe, goals=8, extra_levels=4, k_cap=4000,
                             tolerance=Fraction(1, 10**6)):
    """Deterministic one-bit Markov kernel for Büchi(goal states) on `model`.

    `probe` is a kernel on the original model (Markov or memoryless); it
    stands in for the near-optimal strategies the schedule is measured
    against.  The schedule covers goals + extra_levels levels; the nesting of
    later-level values is truncated there.
    """
    eps = Fraction(eps)
    encoded = encode_step_counter(model)
    work = definitize_branching(encoded)
    probe_work = lift_to_step_encoding(probe, encoded)
    if probe_work.cls != MD:
        raise ValidationError("the probe must lift to a deterministic memoryless kernel", probe=probe.name)
    if work is not encoded:
        probe_work = lift_through_gadget(probe_work, work)

    def goal(s):
        return GOAL in s.labels

    levels = goals + extra_levels
    schedule = choose_schedule(work, work.initial, goal, eps, probe_work, levels, k_cap=k_cap)
    sols = nested_values(work, schedule, levels)
    gaps = {}
    for i in range(1, goals + 1):
        if i + 1 < levels:
            shallow = nested_values(work, schedule, levels - 1)
            gaps[i] = max((abs(shallow[i + 1].start_values[s] - sols[i + 1].start_values[s])
                           for s in sols[i + 1].start_values), default=ZERO)
            break
    strategies = {j: sols[j].strategy for j in sols}
    sigma = assemble_onebit(schedule, strategies, fallback=probe_work)
    back = back_translate(sigma, work) if work is not encoded else sigma
    original = back_translate(back, encoded)
    original.descriptor = {"class": original.cls, "name": "synthesized",
                           "params": {"eps": f"{eps.numerator}/{eps.denominator}", "goals": goals,
                                      "extra_levels": extra_levels, "probe": probe.descriptor}}
    horizon = max(potential(work, s) for s in schedule.K(goals))
    report = SynthesisReport(eps, schedule, sols, gaps, tolerance, levels, goals, horizon)
    if any(g is not None and g > tolerance for g in gaps.values()):
        report.notes.append("value nesting did not reach the tolerance at the level cap")
    report.notes.append(f"beyond level {levels} the strategy defers to level {levels} and then to the probe")
    return Synthesis(original, sigma, work, encoded, report)


def check_synthesis(syn, traces=()):
    """Schedule invariants, bit-flip discipline on traces and region local optimality."""
    sched = syn.report.schedule
    problems = {"schedule": sched.check(), "bit_flips": [], "deviations": []}
    for tr in traces:
        problems["bit_flips"].extend(bit_flip_violations(tr, sched))
    sols = syn.report.solutions
    top = max(sols)
    for i in sorted(sols):
        rewards = {s: ONE for s in sched.F(top)} if i == top else sols[i + 1].start_values
        problems["deviations"].extend(improving_deviations(syn.working_model, sched, i, rewards, sols[i].strategy))
    return problems


def raise_on_problems(problems):
    if any(problems.values()):
        raise ContractViolation("synthesis checks failed", **{k: len(v) for k, v in problems.items()})
