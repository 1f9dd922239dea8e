"""Recursions and inequality checks for the tree-chain counterexample.

Quantities for a subtree of T^n (guard weight a = n^2/(n^2+1), brown
probability p):

* survival s (no red transition) and total success t (a green leaf and no
  red transition) under an MR grid of downward probabilities;
* greedy sequences u_n (no green in a height-n tree when always moving down
  until the first green) and v_n (expected red-guard visits);
* the one-bit strategy's per-tree law: A (no green, no red) and B (green, no red).

Exact rationals are used while denominators stay manageable; beyond
``EXACT_LIMIT`` levels values are certified mpmath intervals wrapped as
Enclosure objects.
"""
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
from mpmath import iv

from .errors import ValidationError
from .families import MrParamGrid, guard_weight, structured_grids
from .numeric import Enclosure, certified, lower, to_iv, upper, working_precision

P_DEFAULT = Fraction(7, 10)
EXACT_LIMIT = 12
ONE = Fraction(1)


def q_const(p=P_DEFAULT):
    return (1 - Fraction(p)) / 9


@dataclass(frozen=True)
class SurvivalStats:
    s: Fraction
    t: Fraction

    @property
    def d(self):
        return 1 - self.s


def tree_recursion(n, k, grid, p=P_DEFAULT):
    """Exact (s, t, d) of the height-k subtree of T^n under `grid`."""
    if not 0 <= k <= n:
        raise ValidationError(f"need 0 <= k <= n, got k={k}, n={n}", n=n, k=k)
    missing = grid.missing(k)
    if missing:
        names = [("".join(path) or "root") + (".Y0" if w == 0 else ".Y1") for path, w in missing]
        raise ValidationError(f"grid misses {len(missing)} yellow states: {', '.join(names[:8])}",
                              missing=names)
    p = Fraction(p)
    a = guard_weight(n)

    def rec(path, h):
        if h == 0:
            return ONE, ONE
        p0 = p * grid.down(path, 0)
        p1 = p * grid.down(path, 1)
        s0, t0 = rec(path + ("L",), h - 1)
        s1, t1 = rec(path + ("R",), h - 1)
        keep0 = 1 - p0 + p0 * a * s0
        keep1 = 1 - p1 + p1 * a * s1
        win0, win1 = p0 * a * t0, p1 * a * t1
        return keep0 * keep1, win0 * keep1 + win1 * keep0 - win0 * win1

    s, t = rec((), k)
    return SurvivalStats(s, t)


# ------------------------------------------------------------------ sequences

@dataclass
class GreedySeq:
    p: Fraction
    u: list
    v: list
    fixed_point: Fraction
    exact_upto: int = 0


def _arith(exact):
    if exact:
        return Fraction
    return to_iv


def greedy_sequences(p=P_DEFAULT, N=50, exact_limit=None):
    """u_0..u_N and v_0..v_N; exact up to `exact_limit`, certified intervals after."""
    p = Fraction(p)
    if not 0 < p < 1:
        raise ValidationError("p must lie strictly between 0 and 1", p=str(p))
    limit = 16 if exact_limit is None else exact_limit
    u, v = [Fraction(0)], [Fraction(0)]
    uu, vv = Fraction(0), Fraction(0)
    with working_precision():
        for n in range(1, N + 1):
            if n == limit + 1:
                uu, vv = to_iv(uu), to_iv(vv)
            if n <= limit:
                pp, qq = p, 1 - p
            else:
                pp, qq = to_iv(p), to_iv(1 - p)
            u_prev, v_prev = uu, vv
            uu = (pp * u_prev + qq) ** 2
            vv = pp * (1 + v_prev + u_prev * pp * (1 + v_prev)) + qq * pp * (1 + v_prev)
            u.append(certified(uu))
            v.append(certified(vv))
    return GreedySeq(p, u, v, ((1 - p) / p) ** 2, min(limit, N))


def sequence_checks(seq):
    """Certified checks: u nondecreasing, u_n <= u*, v_n <= n (per index)."""
    rows = []
    for n in range(len(seq.u)):
        u, v = seq.u[n], seq.v[n]
        mono = n == 0 or upper(seq.u[n - 1]) <= lower(u)
        rows.append({"n": n, "u": u, "v": v, "u_nondecreasing": mono,
                     "u_below_fixed": upper(u) <= seq.fixed_point, "v_below_n": upper(v) <= n})
    return rows


# ------------------------------------------------------------- lemma checks

@dataclass
class LemmaReport:
    name: str
    rows: list = field(default_factory=list)
    violations: int = 0

    @property
    def min_slack(self):
        if not self.rows:
            return None
        return min(lower(r["slack"]) for r in self.rows)

    def summary(self):
        m = self.min_slack
        return {"lemma": self.name, "checked": len(self.rows), "violations": self.violations,
                "min_slack": None if m is None else float(m)}


def key_bound(n, t, p=P_DEFAULT):
    """Enclosure of a^(q t n^2)."""
    a = guard_weight(n)
    with working_precision():
        x = iv.exp(iv.log(to_iv(a)) * to_iv(q_const(p) * t * n * n))
    return Enclosure.of(x)


def check_key_lemma(n, grids, p=P_DEFAULT):
    """s <= a^(q t n^2) on the full tree T^n for every grid."""
    rep = LemmaReport("key")
    for grid in grids:
        st = tree_recursion(n, n, grid, p)
        bound = key_bound(n, st.t, p)
        slack = Enclosure(bound.lo - st.s, bound.hi - st.s)
        bad = st.s > bound.hi
        rep.violations += bad
        rep.rows.append({"n": n, "grid": grid.grid_id, "s": st.s, "t": st.t, "d": st.d, "bound": bound,
                         "slack": slack, "violation": bad})
    return rep


SKETCH_CONSTANT = Fraction(8, 1000)


def check_death_bound(n, grids, p=P_DEFAULT):
    """d >= (q/4) t and d >= 0.008 t, exactly."""
    rep = LemmaReport("death")
    quarter_q = q_const(p) / 4
    for grid in grids:
        st = tree_recursion(n, n, grid, p)
        slack_q = st.d - quarter_q * st.t
        slack_s = st.d - SKETCH_CONSTANT * st.t
        bad = slack_q < 0 or slack_s < 0
        rep.violations += bad
        rep.rows.append({"n": n, "grid": grid.grid_id, "s": st.s, "t": st.t, "d": st.d,
                         "bound": quarter_q * st.t, "slack": min(slack_q, slack_s),
                         "slack_quarter_q": slack_q, "slack_sketch": slack_s, "violation": bad})
    return rep


def check_calculus_lemma(points):
    """exp(-r x) >= 1 - r + r exp(-x - x^2) for r >= 0 and 0 <= x <= 1/2."""
    rep = LemmaReport("calculus")
    with working_precision():
        for r, x in points:
            r, x = Fraction(r), Fraction(x)
            if r < 0 or not 0 <= x <= Fraction(1, 2):
                raise ValidationError(f"point (r={r}, x={x}) outside r >= 0, 0 <= x <= 1/2",
                                      r=str(r), x=str(x))
            R, X = to_iv(r), to_iv(x)
            lhs = iv.exp(-R * X)
            rhs = 1 - R + R * iv.exp(-X - X * X)
            slack = Enclosure.of(lhs - rhs)
            bad = slack.hi < 0
            rep.violations += bad
            rep.rows.append({"r": r, "x": x, "lhs": Enclosure.of(lhs), "rhs": Enclosure.of(rhs),
                             "slack": slack, "violation": bad})
    return rep


def calculus_grid(count=10_000, r_max=10, x_max=Fraction(1, 2)):
    side = int(math.isqrt(count))
    if side * side < count:
        side += 1
    return [(Fraction(r_max * i, side - 1), Fraction(x_max) * j / (side - 1))
            for i in range(side) for j in range(side)]


def random_grids(height, count, seed, denominator=20):
    rng = random.Random(seed)
    return [MrParamGrid.random(rng, height, denominator, f"random:{seed}:{i}") for i in range(count)]


def oracle_grids(height, random_count=10, seed=0):
    return structured_grids(height) + random_grids(height, random_count, seed)


# ---------------------------------------------------------- expected red

def pi_squared_over_six():
    with working_precision():
        return Enclosure.of(iv.pi ** 2 / 6)


def expected_red_partial_sum(N):
    """Exact sum over n <= N of (1/n) * n/(n^2+1), with the pi^2/6 cap."""
    if N < 1:
        raise ValidationError("N must be at least 1", N=N)
    total = sum((Fraction(1, n * n + 1) for n in range(1, N + 1)), Fraction(0))
    cap = pi_squared_over_six()
    return total, cap, total < cap.lo


# --------------------------------------------------- per-tree laws (chain)

def _tree_value(n, exact, fn):
    with working_precision():
        return fn(_arith(exact))


def sigma1_tree_law(n, p=P_DEFAULT, exact=None):
    """(A, B) for T^n entered with bit 0: A = no green and no red, B = green and no red."""
    exact = n <= EXACT_LIMIT if exact is None else exact

    def fn(num):
        pp, qq, a = num(Fraction(p)), num(1 - Fraction(p)), num(guard_weight(n))
        A, B = num(Fraction(0)), num(Fraction(1))
        for _ in range(n):
            x0 = qq + pp * a * A
            x1 = pp * a * B
            A, B = x0 * x0, x1 * (x0 + 1)
        return certified(A), certified(B)
    return _tree_value(n, exact, fn)


def greedy_tree_survival(n, p=P_DEFAULT, exact=None):
    """Probability of no red transition in T^n when always moving down."""
    exact = n <= EXACT_LIMIT if exact is None else exact

    def fn(num):
        pp, qq, a = num(Fraction(p)), num(1 - Fraction(p)), num(guard_weight(n))
        s = num(Fraction(1))
        for _ in range(n):
            keep = qq + pp * a * s
            s = keep * keep
        return certified(s)
    return _tree_value(n, exact, fn)


def sigma1_expected_red(n, p=P_DEFAULT, seq=None):
    """Expected red transitions inside T^n (once entered) under the one-bit strategy."""
    seq = seq or greedy_sequences(p, n)
    v = seq.v[n]
    w = Fraction(1, n * n + 1)
    if isinstance(v, Enclosure):
        return Enclosure(v.lo * w, v.hi * w)
    return v * w


def _combine_product(factors):
    """Product of a list of Fractions / Enclosures (all nonnegative)."""
    exact = all(not isinstance(f, Enclosure) for f in factors)
    if exact:
        out = Fraction(1)
        for f in factors:
            out *= f
        return out
    with working_precision():
        x = iv.mpf(1)
        for f in factors:
            x = x * to_iv(f)
        return Enclosure.of(x)


def _sub(a, b):
    if isinstance(a, Enclosure) or isinstance(b, Enclosure):
        a, b = Enclosure.of(a), Enclosure.of(b)
        return Enclosure(a.lo - b.hi, a.hi - b.lo)
    return a - b


def _scale(x, c):
    if isinstance(x, Enclosure):
        return Enclosure(x.lo * c, x.hi * c)
    return x * c


def chain_red_probability(N, tree_death, skip=0):
    """P(some red transition within T^1..T^N) when T^n is entered with probability 1/n.

    tree_death(n) is the red probability inside T^n once entered; trees
    n <= skip contribute nothing.
    """
    factors = []
    for n in range(skip + 1, N + 1):
        factors.append(_sub(ONE, _scale(tree_death(n), Fraction(1, n))))
    return _sub(ONE, _combine_product(factors))


def greedy_death(n, p=P_DEFAULT):
    return _sub(ONE, greedy_tree_survival(n, p))


def sigma1_death(n, p=P_DEFAULT):
    A, B = sigma1_tree_law(n, p)
    return _sub(ONE, _add(A, B))


def _add(a, b):
    if isinstance(a, Enclosure) or isinstance(b, Enclosure):
        a, b = Enclosure.of(a), Enclosure.of(b)
        return Enclosure(a.lo + b.lo, a.hi + b.hi)
    return a + b


def greedy_red_curve(N, p=P_DEFAULT):
    """P(red within T^1..T^m) under greedy for m = 1..N (certified enclosures)."""
    out = []
    with working_precision():
        prod = iv.mpf(1)
        for n in range(1, N + 1):
            d = to_iv(greedy_death(n, p))
            prod = prod * (1 - d / n)
            out.append(Enclosure.of(1 - prod))
    return out


def first_exceeding(curve, threshold):
    for i, x in enumerate(curve, start=1):
        if lower(x) > threshold:
            return i
    return None


def sigma_eps_red_curve(N, k, p=P_DEFAULT):
    """P(red within T^1..T^m) under sigma-eps(k) for m = 1..N."""
    out = []
    with working_precision():
        prod = iv.mpf(1)
        for n in range(1, N + 1):
            if n > k:
                prod = prod * (1 - to_iv(sigma1_death(n, p)) / n)
            out.append(Enclosure.of(1 - prod))
    return out


def sigma_eps_red_tail_bound(k):
    """Upper bound on P(any red transition) under sigma-eps(k): sum over n > k of 1/(n^2+1) < 1/k."""
    return Fraction(1, k)


# ----------------------------------------------------- green-count bounds

def green_count_tail_lower(N, k, at_least=10, p=P_DEFAULT, dps=60):
    """Lower bound on P(>= at_least trees with a green visit among T^{k+1}..T^N).

    Each tree n > k is entered with probability 1/n and, once entered, shows a
    green leaf with probability 1 - u_n >= 1 - u*.  Trees are independent, and
    the count is stochastically smallest with rates c/n, c = 1 - u*, whose
    Poisson-binomial tail has closed forms through gamma, digamma and Hurwitz
    zeta functions.
    """
    p = Fraction(p)
    c = 1 - ((1 - p) / p) ** 2
    with mpmath.workdps(dps):
        cc = mpmath.mpf(c.numerator) / c.denominator
        lo, hi = k + 1, N
        if hi < lo:
            return Fraction(0) if at_least > 0 else Fraction(1)
        log_p0 = (mpmath.loggamma(hi + 1 - cc) - mpmath.loggamma(lo - cc)
                  - mpmath.loggamma(hi + 1) + mpmath.loggamma(lo))
        p0 = mpmath.exp(log_p0)
        power = [None]
        for j in range(1, at_least):
            if j == 1:
                s = mpmath.digamma(hi + 1 - cc) - mpmath.digamma(lo - cc)
            else:
                s = mpmath.zeta(j, lo - cc) - mpmath.zeta(j, hi + 1 - cc)
            power.append(cc ** j * s)
        e = [mpmath.mpf(1)]
        for m in range(1, at_least):
            e.append(sum((-1) ** (j - 1) * e[m - j] * power[j] for j in range(1, m + 1)) / m)
        below = p0 * sum(e)
        return 1 - below


def green_horizon(k, at_least=10, target=0.75, p=P_DEFAULT):
    """Smallest N (to 2 significant digits) with green_count_tail_lower >= target."""
    lo, hi = k + 1, k + 2
    while green_count_tail_lower(hi, k, at_least, p) < target:
        lo, hi = hi, hi * 2
    while hi - lo > max(1, hi // 100):
        mid = (lo + hi) // 2
        if green_count_tail_lower(mid, k, at_least, p) >= target:
            hi = mid
        else:
            lo = mid
    return hi


# -------------------------------------------- aggregated chain sampler

class ChainLaw:
    """Per-tree outcome law of the one-bit strategy along the chain.

    For n <= exact_trees the law is the true (A_n, B_n) (as floats); beyond it
    the law is replaced by a stochastically worse (pessimistic) or better
    (optimistic) one:

    * pessimistic: P(red) = n/(n^2+1), P(green and no red) = (1-u*) - n/(n^2+1)
    * optimistic:  P(red) = 0, P(green and no red) = 1 - u_{exact_trees}
    """

    def __init__(self, p=P_DEFAULT, exact_trees=60, polarity="pessimistic"):
        self.p = Fraction(p)
        self.exact_trees = exact_trees
        self.polarity = polarity
        self.table = {}
        for n in range(1, exact_trees + 1):
            A, B = sigma1_tree_law(n, p)
            self.table[n] = (float(lower(A) if polarity == "pessimistic" else upper(A)), float(B))
        seq = greedy_sequences(p, exact_trees)
        self.u_star = float(((1 - self.p) / self.p) ** 2)
        self.u_last = float(lower(seq.u[exact_trees]))

    def outcome(self, n, x):
        """0 = red, 1 = green without red, 2 = neither; x uniform in [0, 1)."""
        if n in self.table:
            A, B = self.table[n]
            red = 1.0 - A - B
            green = B
        elif self.polarity == "pessimistic":
            red = n / (n * n + 1.0)
            green = (1.0 - self.u_star) - red
        else:
            red = 0.0
            green = 1.0 - self.u_last
        if x < red:
            return 0
        if x < red + green:
            return 1
        return 2


def next_entered_tree(n, x):
    """Index of the next tree entered from blue_n, given x uniform in (0, 1]."""
    if n == 1:
        return 1
    m = int((n - 1) / x) + 1
    return max(n, m)


def sample_chain(rng, law, horizon, skip, greens):
    """True iff >= `greens` green trees and no red transition among T^1..T^horizon.

    Trees n <= skip are played upward (no green, no red).
    """
    count = 0
    n = skip + 1
    while True:
        x = 1.0 - rng.random()
        n = next_entered_tree(n, x)
        if n > horizon:
            return count >= greens
        o = law.outcome(n, rng.random())
        if o == 0:
            return False
        if o == 1:
            count += 1
        n += 1


def sample_subtree(rng, h, bit, p, red_weight):
    """One pass through a height-h subtree under the one-bit strategy: (red count, bit at exit).

    With bit 0 the strategy moves down at both yellow states (through a red
    guard, red with probability red_weight); a green leaf sets the bit to 1,
    after which it moves up.
    """
    if h == 0:
        return 0, 1
    reds = 0
    for _ in range(2):            # B0 -> Y0 -> left child, then B1 -> Y1 -> right child
        if rng.random() < p and bit == 0:
            if rng.random() < red_weight:
                reds += 1
            r, bit = sample_subtree(rng, h - 1, bit, p, red_weight)
            reds += r
    return reds, bit


def sample_chain_reds(rng, N, k=0, p=P_DEFAULT):
    """Red transitions along blue_1, T^1, ..., T^N under the one-bit strategy that skips trees n <= k."""
    p = float(p)
    reds = 0
    for n in range(1, N + 1):
        if n > 1 and rng.random() >= 1.0 / n:
            continue
        if n <= k:
            continue
        r, _ = sample_subtree(rng, n, 0, p, 1.0 / (n * n + 1))
        reds += r
    return reds
