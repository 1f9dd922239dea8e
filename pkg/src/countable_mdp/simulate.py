"""Run sampling, event monitors, Monte Carlo estimates and exact forward DP.

Infinitary objectives are replaced by finite-horizon proxies: a monitor sees
every transition (source, target, red flag) and settles on success or
failure.  Undecided runs, cut off by a slice boundary or the horizon, count
according to the monitor's polarity.
"""
import multiprocessing
import random
from dataclasses import dataclass, field
from fractions import Fraction
from math import fsum, sqrt
from statistics import NormalDist
from typing import NamedTuple

import numpy as np

from .errors import UnsupportedOperation, ValidationError
from .model import CONTROLLED, GOAL
from .strategies import FINITE_MEMORY, choose, step_kernel

PESSIMISTIC = "pessimistic"
OPTIMISTIC = "optimistic"

REACH = "reach"     # success at the m-th goal visit, unless disqualified first
SAFE = "safe"       # failure on any disqualifier; at the end success iff >= m goal visits
HIT = "hit"         # success on the first red transition / target state
ALWAYS = "always"


def _has_goal(state):
    return GOAL in state.labels


class Monitor:
    """Finite-state observer of transitions.

    Observer states are pairs (goal count capped at m, verdict) with verdict
    in {None, True, False}; True and False are absorbing.
    """

    def __init__(self, kind, m=0, horizon=None, goal=_has_goal, forbid_red=False, forbid=None,
                 target=None, stop=None, polarity=PESSIMISTIC, name=None):
        if kind not in (REACH, SAFE, HIT, ALWAYS):
            raise ValidationError(f"unknown monitor kind {kind!r}", kind=kind)
        if polarity not in (PESSIMISTIC, OPTIMISTIC):
            raise ValidationError(f"unknown polarity {polarity!r}", polarity=polarity)
        self.kind = kind
        self.m = m
        self.horizon = horizon
        self.goal = goal
        self.forbid_red = forbid_red
        self.forbid = forbid
        self.target = target
        self.stop = stop
        self.polarity = polarity
        self.name = name or kind

    def __repr__(self):
        return f"<Monitor {self.name} m={self.m} h={self.horizon}>"

    def _visit(self, count, status, state, red):
        if status is not None:
            return count, status
        if self.kind == HIT:
            if red or (self.target is not None and self.target(state)):
                return count, True
            return count, None
        if (red and self.forbid_red) or (self.forbid is not None and self.forbid(state)):
            return count, False
        if self.goal(state) and count < self.m:
            count += 1
        if self.kind == REACH and count >= self.m:
            return count, True
        return count, None

    def start(self, state):
        if self.kind == ALWAYS:
            return (0, True)
        return self._visit(0, None, state, False)

    def update(self, obs, step, source, target, red):
        return self._visit(obs[0], obs[1], target, red)

    @staticmethod
    def verdict(obs):
        return obs[1]

    def close(self, obs):
        """Verdict at the horizon or at a stop state."""
        if obs[1] is not None:
            return obs[1]
        if self.kind == SAFE:
            return obs[0] >= self.m
        return self.polarity == OPTIMISTIC

    def undecided(self, obs):
        """Verdict for a run cut off by a slice boundary."""
        if obs[1] is not None:
            return obs[1]
        return self.polarity == OPTIMISTIC

    def describe(self):
        return {"kind": self.kind, "m": self.m, "h": self.horizon, "polarity": self.polarity, "name": self.name}


def always_success():
    return Monitor(ALWAYS, name="always")


# -------------------------------------------------------------------- traces

class TraceRecord(NamedTuple):
    step: int
    state: object
    mode: object
    red: bool       # the transition into this state was red
    goal: bool


@dataclass
class RunTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def states(self):
        return [r.state for r in self.records]

    def names(self):
        return [r.state.name for r in self.records]


def sample_run(model, kernel, start, horizon, seed, stop=None):
    """Trace of horizon+1 states (fewer if `stop` fires), reproducible from seed."""
    rng = random.Random(seed)
    mode = kernel.initial
    state = start
    trace = RunTrace([TraceRecord(0, state, mode, False, model.is_goal(state))])
    for step in range(horizon):
        if stop is not None and stop(state):
            break
        mode, state, red = step_kernel(kernel, model, mode, state, rng)
        trace.records.append(TraceRecord(step + 1, state, mode, red, model.is_goal(state)))
    return trace


def run_verdict(model, kernel, start, monitor, horizon, rng):
    """Monitor verdict (bool) of one sampled run."""
    mode = kernel.initial
    state = start
    obs = monitor.start(state)
    stop = monitor.stop
    limit = horizon if horizon is not None else monitor.horizon
    step = 0
    expand = model.expand
    while obs[1] is None:
        if (limit is not None and step >= limit) or (stop is not None and stop(state)):
            return monitor.close(obs)
        exp = expand(state)
        if exp.kind == CONTROLLED:
            choices = kernel.decide(mode, state, exp.successors)
            mode2, nxt = choose(choices, rng)
            if nxt not in exp.successors:
                step_kernel(kernel, model, mode, state, random.Random(0))  # raises the contract error
            red = False
        else:
            o = exp.law.sample(rng.random())
            nxt, red = o.target, o.red
            mode2 = kernel.observe(mode, state, nxt)
        obs = monitor.update(obs, step, state, nxt, red)
        mode, state = mode2, nxt
        step += 1
    return obs[1]


class Counter:
    """Counts red transitions (or states matching `count_state`) until `stop`."""

    def __init__(self, count_red=True, count_state=None, stop=None, name="red-count"):
        self.count_red = count_red
        self.count_state = count_state
        self.stop = stop
        self.name = name

    def increment(self, target, red):
        inc = 1 if (red and self.count_red) else 0
        if self.count_state is not None and self.count_state(target):
            inc += 1
        return inc


def run_count(model, kernel, start, counter, horizon, rng):
    mode = kernel.initial
    state = start
    total = 0
    stop = counter.stop
    for _ in range(horizon):
        if stop is not None and stop(state):
            break
        mode, state, red = step_kernel(kernel, model, mode, state, rng)
        total += counter.increment(state, red)
    return total


# ----------------------------------------------------------------- estimates

@dataclass(frozen=True)
class Estimate:
    point: float
    lo: float
    hi: float
    samples: int
    successes: int
    level: float
    seed: int
    horizon: object

    @property
    def half_width(self):
        return (self.hi - self.lo) / 2


def wilson(successes, n, level=0.95):
    if n <= 0:
        raise ValidationError("need at least one sample", samples=n)
    z = NormalDist().inv_cdf(0.5 + level / 2)
    phat = successes / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return min(lo, phat), max(hi, phat)


CHUNK = 5000
_JOB = None


def _chunk_seeds(seed, n_chunks):
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    return [int(c.generate_state(2, dtype=np.uint64)[0]) for c in children]


def _run_chunk(args):
    index, chunk_seed, size = args
    fn = _JOB
    rng = random.Random(chunk_seed)
    return index, [fn(rng) for _ in range(size)]


def _map_chunks(fn, samples, seed, workers):
    global _JOB
    sizes = [CHUNK] * (samples // CHUNK)
    if samples % CHUNK:
        sizes.append(samples % CHUNK)
    seeds = _chunk_seeds(seed, len(sizes))
    tasks = [(i, seeds[i], sizes[i]) for i in range(len(sizes))]
    _JOB = fn
    try:
        if workers > 1 and len(tasks) > 1:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(workers) as pool:
                results = pool.map(_run_chunk, tasks)
        else:
            results = [_run_chunk(t) for t in tasks]
    finally:
        _JOB = None
    results.sort(key=lambda r: r[0])
    return [v for _, vals in results for v in vals]


def estimate_event(model, kernel, start, monitor, samples=100_000, horizon=None, seed=0, level=0.95, workers=1):
    """Monte Carlo estimate of the monitor's success probability with a Wilson interval.

    Samples are split into fixed-size chunks, each with its own stream spawned
    from `seed`, so the result does not depend on `workers`.
    """
    if samples < 1:
        raise ValidationError("samples must be at least 1", samples=samples)
    h = horizon if horizon is not None else monitor.horizon
    if h is None and monitor.stop is None:
        raise ValidationError("an estimate needs a horizon or a stop condition")
    outcomes = _map_chunks(lambda rng: run_verdict(model, kernel, start, monitor, h, rng), samples, seed, workers)
    successes = sum(1 for x in outcomes if x)
    lo, hi = wilson(successes, samples, level)
    point = successes / samples
    return Estimate(point, min(lo, point), max(hi, point), samples, successes, level, seed, h)


@dataclass(frozen=True)
class MeanEstimate:
    mean: float
    stderr: float
    samples: int
    seed: int
    horizon: object

    def within(self, value, sigmas=3.0):
        return abs(self.mean - float(value)) <= sigmas * self.stderr


def estimate_mean(model, kernel, start, counter, samples=100_000, horizon=10**7, seed=0, workers=1):
    values = _map_chunks(lambda rng: run_count(model, kernel, start, counter, horizon, rng), samples, seed, workers)
    mean = fsum(values) / samples
    var = fsum((v - mean) ** 2 for v in values) / max(1, samples - 1)
    return MeanEstimate(mean, sqrt(var / samples), samples, seed, horizon)


# ------------------------------------------------------------------ exact DP

def exact_event_probability(slice_, kernel, monitor, start=None):
    """Exact success probability on an acyclic slice by forward DP.

    The product tracks (slice state, memory mode, observer state) and the
    step count when the monitor has a horizon.
    """
    if not slice_.acyclic:
        raise UnsupportedOperation("exact evaluation needs an acyclic slice; encode a step counter first")
    if kernel.cls not in FINITE_MEMORY:
        raise UnsupportedOperation(
            f"kernel class {kernel.cls} has unbounded memory; lift it to the step encoding and truncate",
            kernel=kernel.name)
    start_key = slice_.initial[0] if start is None else (start.key if hasattr(start, "key") else start)
    h = monitor.horizon
    mass = {key: {} for key in slice_.states}
    s0 = slice_.states[start_key]
    mass[start_key][(kernel.initial, monitor.start(s0), 0)] = Fraction(1)
    success = Fraction(0)
    for key in slice_.topological_order:
        here = mass.pop(key)
        if not here:
            continue
        ref = slice_.states[key]
        is_boundary = key in slice_.boundary
        stop_here = monitor.stop is not None and monitor.stop(ref)
        succs = None if is_boundary else slice_.successors(key)
        law = None if (is_boundary or ref.kind == CONTROLLED) else slice_.law(key)
        for (mode, obs, step), p in here.items():
            verdict = obs[1]
            if verdict is not None:
                if verdict:
                    success += p
                continue
            if stop_here or (h is not None and step >= h):
                if monitor.close(obs):
                    success += p
                continue
            if is_boundary:
                if monitor.undecided(obs):
                    success += p
                continue
            nstep = step + 1 if h is not None else 0
            if law is None:
                for w, mode2, t in kernel.decide(mode, ref, succs):
                    obs2 = monitor.update(obs, step, ref, t, False)
                    node = (mode2, obs2, nstep)
                    bucket = mass[t.key]
                    bucket[node] = bucket.get(node, 0) + p * w
            else:
                for o in law:
                    mode2 = kernel.observe(mode, ref, o.target)
                    obs2 = monitor.update(obs, step, ref, o.target, o.red)
                    node = (mode2, obs2, nstep)
                    bucket = mass[o.target.key]
                    bucket[node] = bucket.get(node, 0) + p * o.weight
    return success


def exact_expected_count(slice_, kernel, counter, start=None, initial_mode=None):
    """Exact expected counter total on an acyclic slice (boundary and stop states end the run)."""
    if not slice_.acyclic:
        raise UnsupportedOperation("exact evaluation needs an acyclic slice; encode a step counter first")
    if kernel.cls not in FINITE_MEMORY:
        raise UnsupportedOperation(f"kernel class {kernel.cls} has unbounded memory", kernel=kernel.name)
    start_key = slice_.initial[0] if start is None else (start.key if hasattr(start, "key") else start)
    mode0 = kernel.initial if initial_mode is None else initial_mode
    mass = {key: {} for key in slice_.states}
    mass[start_key][mode0] = Fraction(1)
    total = Fraction(0)
    for key in slice_.topological_order:
        here = mass.pop(key)
        if not here or key in slice_.boundary:
            continue
        ref = slice_.states[key]
        if counter.stop is not None and counter.stop(ref):
            continue
        succs = slice_.successors(key)
        for mode, p in here.items():
            if ref.kind == CONTROLLED:
                moves = [(w, mode2, t, False) for w, mode2, t in kernel.decide(mode, ref, succs)]
            else:
                moves = [(o.weight, kernel.observe(mode, ref, o.target), o.target, o.red)
                         for o in slice_.law(key)]
            for w, mode2, t, red in moves:
                q = p * w
                total += q * counter.increment(t, red)
                bucket = mass[t.key]
                bucket[mode2] = bucket.get(mode2, 0) + q
    return total
