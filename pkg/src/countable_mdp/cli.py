"""Command-line entry point: ``countable-mdp <command> ...``.

Every command writes delimited (CSV) or JSON output to ``--out`` (or to a
file in the directory named by COUNTABLE_MDP_OUTPUT_DIR, or to stdout), and
commands that draw figures accept ``--plot PATH``.  Exit codes: 0 success,
1 validation or check failure (error JSON on stderr), 2 usage error.
"""
import argparse
import hashlib
import json
import sys
from fractions import Fraction

from . import families as fam
from . import lowerbound as lb
from . import report
from .errors import MdpError, ValidationError
from .model import LOSING_SINK, ExplicitMdp, path_length_sets, slice_from_json, truncate
from .numeric import Enclosure, fmt_decimal, parse_rational
from .simulate import HIT, OPTIMISTIC, PESSIMISTIC, REACH, SAFE, Monitor, estimate_event, \
    exact_event_probability, sample_run
from .strategies import FINITE_MEMORY, MD, lift_to_step_encoding, make_kernel
from .transforms import encode_step_counter

# ------------------------------------------------------------------ parsing


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_params(text):
    """'k=3,eps=1/4' -> {'k': '3', 'eps': '1/4'} (values may contain ':')."""
    out = {}
    if not text:
        return out
    for part in text.split(","):
        if not part:
            continue
        name, eq, value = part.partition("=")
        if not eq:
            raise ValidationError(f"parameter {part!r} is not name=value", parameter=part)
        out[name.strip()] = value.strip()
    return out


def split_descriptor(text):
    name, _, rest = text.partition(":")
    return name, parse_params(rest)


def load_model(args):
    if getattr(args, "model", None):
        try:
            with open(args.model, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ValidationError(f"model file {args.model} does not exist", path=args.model) from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"model file is not JSON: {exc}", path=args.model, pointer="") from None
        return ExplicitMdp(slice_from_json(doc), name=args.model)
    params = {}
    for item in args.param or ():
        params.update(parse_params(item))
    return fam.build_family(args.family, **params)


def model_name(args):
    return args.model if getattr(args, "model", None) else args.family


def default_probe(model, eps):
    k = fam.fig1_k(eps)
    if model.family == "fig1a":
        return fam.fig1a_markov(k)
    if model.family == "fig1b":
        return fam.fig1b_log_markov(k)
    raise ValidationError(f"no default probe for family {model.family}; pass --probe", family=model.family)


def build_kernel(text, model):
    name, params = split_descriptor(text)
    if name == "first":
        return make_kernel(MD, lambda s, succ: succ[0], name="first")
    if name == "table":
        with open(params["path"], encoding="utf-8") as fh:
            doc = json.load(fh)
        return make_kernel(doc.get("class", MD), doc["table"], name=doc.get("name", "table"), model=model)
    if name == "mr-grid":
        n = int(params.get("n", 1))
        grid = fam.parse_grid(params.get("grid", "uniform:7/10"), n, model.p)
        return fam.mr_grid_kernel(grid, n)
    if name == "synthesized":
        from .synth import synthesize_onebit_markov
        eps = parse_rational(params.get("eps", "1/10"))
        syn = synthesize_onebit_markov(model, eps, default_probe(model, eps), goals=int(params.get("goals", 8)))
        return syn.kernel
    converted = {}
    for key, value in params.items():
        converted[key] = parse_rational(value) if key == "eps" else value
    return fam.build_strategy(name, model, **converted)


def _has(label):
    return lambda s: label in s.labels


def build_monitor(text):
    """no-sink:h=H, buchi:m=M,h=H, red:h=H, no-red:h=H, parity:m=M,h=H (plus polarity=...)."""
    kind, params = split_descriptor(text)
    h = int(params["h"]) if "h" in params else None
    m = int(params.get("m", 0))
    polarity = params.get("polarity", PESSIMISTIC)
    if polarity not in (PESSIMISTIC, OPTIMISTIC):
        raise ValidationError(f"unknown polarity {polarity!r}", polarity=polarity)
    if kind == "no-sink":
        return Monitor(SAFE, m=0, horizon=h, forbid=_has(LOSING_SINK), polarity=polarity, name=text)
    if kind == "buchi":
        return Monitor(REACH, m=m, horizon=h, forbid=_has(LOSING_SINK), polarity=polarity, name=text)
    if kind == "red":
        return Monitor(HIT, horizon=h, polarity=polarity, name=text)
    if kind == "no-red":
        return Monitor(SAFE, m=m, horizon=h, forbid_red=True, polarity=polarity, name=text)
    if kind == "parity":
        return Monitor(REACH, m=m, horizon=h, goal=_has("color-2"), forbid=_has("color-3"),
                       polarity=polarity, name=text)
    raise ValidationError(f"unknown monitor {kind!r}", monitor=kind)


# ----------------------------------------------------------------- commands

OUTPUT_ARGS = ("out", "plot", "report", "run", "workers", "context")


def command_context(args):
    """Experiment id and inputs digest stamped on every report row."""
    inputs = {k: v for k, v in sorted(vars(args).items()) if k not in OUTPUT_ARGS}
    if getattr(args, "model", None):
        try:
            with open(args.model, "rb") as fh:
                inputs["model_sha256"] = hashlib.sha256(fh.read()).hexdigest()
        except OSError:
            pass
    return {"experiment": args.command, "inputs_digest": report.inputs_digest(inputs)}


def _write(args, text, default_name, out):
    path = report.resolve_path(getattr(args, "out", None), default_name)
    return report.emit(text, path, out)


def cmd_family(args, out):
    model = load_model(args)
    if args.action == "build":
        init = model.initial[0]
        exp = model.expand(init)
        doc = {"family": model.family, "params": model.params(),
               "initial": [s.name for s in model.initial],
               "initial_kind": init.kind,
               "initial_successors": [s.name for s in exp.successors] if exp.finite else "infinite",
               "finitely_branching": model.finitely_branching}
        _write(args, report.render_json(doc, args.context), "family.json", out)
        return 0
    slice_ = truncate(model, list(model.initial), k=args.depth)
    _write(args, json.dumps(slice_.to_json(), indent=2) + "\n", f"{model.family}-slice.json", out)
    return 0


def cmd_simulate(args, out):
    model = load_model(args)
    kernel = build_kernel(args.strategy, model)
    trace = sample_run(model, kernel, model.initial[0], args.steps, args.seed)
    rows = [{"step": r.step, "state": r.state.name, "mode": r.mode, "red": r.red, "goal": r.goal}
            for r in trace.records]
    _write(args, report.render_csv(("step", "state", "mode", "red", "goal"), rows, args.context), "trace.csv", out)
    return 0


def _estimate_row(name, strategy, monitor, est):
    return {"family": name, "strategy": strategy, "monitor": monitor.name, "m": monitor.m,
            "h": est.horizon, "samples": est.samples, "point": est.point, "lo": est.lo, "hi": est.hi,
            "seed": est.seed}


def cmd_estimate(args, out):
    model = load_model(args)
    kernel = build_kernel(args.strategy, model)
    monitor = build_monitor(args.monitor)
    est = estimate_event(model, kernel, model.initial[0], monitor, samples=args.samples, seed=args.seed,
                         level=args.level, workers=args.workers)
    row = _estimate_row(model_name(args), args.strategy, monitor, est)
    _write(args, report.render_csv(report.ESTIMATE_COLUMNS, [row], args.context), "estimate.csv", out)
    if args.plot:
        report.plot_points(args.plot, [args.strategy], [est.point], [est.lo], [est.hi],
                           title=f"{model_name(args)}: {monitor.name}", ylabel="probability")
    return 0


def cmd_exact(args, out):
    model = load_model(args)
    if args.red_curve:
        return _red_curve(args, model, out)
    if args.monitor is None:
        raise ValidationError("exact needs --monitor (or --red-curve)")
    kernel = build_kernel(args.strategy, model)
    monitor = build_monitor(args.monitor)
    if monitor.horizon is None:
        raise ValidationError("exact evaluation needs a horizon h in the monitor")
    h = monitor.horizon
    if model.acyclic and kernel.cls in FINITE_MEMORY:
        slice_ = truncate(model, list(model.initial), k=h)
        value = exact_event_probability(slice_, kernel, monitor)
    else:
        encoded = encode_step_counter(model)
        lifted = lift_to_step_encoding(kernel, encoded)
        slice_ = truncate(encoded, list(encoded.initial), k=h)
        value = exact_event_probability(slice_, lifted, monitor)
    row = {"family": model_name(args), "strategy": args.strategy, "monitor": monitor.name, "m": monitor.m,
           "h": h, "states": len(slice_), "probability": value}
    cols = ("family", "strategy", "monitor", "m", "h", "states", "probability")
    _write(args, report.render_csv(cols, [row], args.context), "exact.csv", out)
    return 0


def _red_curve(args, model, out):
    if model.family != "tree-chain":
        raise ValidationError("--red-curve needs the tree-chain family", family=model.family)
    name, params = split_descriptor(args.strategy)
    N = args.red_curve
    if name == "greedy-mr":
        curve = lb.greedy_red_curve(N, model.p)
    elif name == "sigma-eps":
        k = int(params["k"]) if "k" in params else fam.sigma_eps_k(parse_rational(params["eps"]))
        curve = lb.sigma_eps_red_curve(N, k, model.p)
    else:
        raise ValidationError("--red-curve supports greedy-mr and sigma-eps", strategy=name)
    rows = [{"N": i, "lo": x.lo, "hi": x.hi} for i, x in enumerate(curve, start=1)]
    _write(args, report.render_csv(("N", "lo", "hi"), rows, args.context), "red-curve.csv", out)
    if args.plot:
        report.plot_series(args.plot, range(1, N + 1), {args.strategy: [x.hi for x in curve]},
                           title="P(red within the first N trees)", xlabel="N", ylabel="probability")
    return 0


def cmd_recursion(args, out):
    rows = []
    for text in args.grid:
        grid = fam.parse_grid(text, args.k, Fraction(args.p))
        st = lb.tree_recursion(args.n, args.k, grid, Fraction(args.p))
        rows.append({"n": args.n, "k": args.k, "grid": text, "s": st.s, "t": st.t, "d": st.d})
    _write(args, report.render_csv(("n", "k", "grid", "s", "t", "d"), rows, args.context), "recursion.csv", out)
    return 0


def cmd_check_lemma(args, out):
    p = Fraction(args.p)
    if args.lemma == "calculus":
        rep = lb.check_calculus_lemma(lb.calculus_grid(args.points))
        rows = [{"r": r["r"], "x": r["x"], "slack": r["slack"].lo, "violation": r["violation"]} for r in rep.rows]
        cols = ("r", "x", "slack", "violation")
    else:
        grids = lb.structured_grids(args.n) + lb.random_grids(args.n, args.grids, args.seed)
        check = lb.check_key_lemma if args.lemma == "key" else lb.check_death_bound
        rep = check(args.n, grids, p)
        rows = [{"n": r["n"], "grid": r["grid"], "s": r["s"], "t": r["t"], "d": r["d"],
                 "bound": r["bound"], "slack": r["slack"], "violation": r["violation"]} for r in rep.rows]
        cols = report.LOWERBOUND_COLUMNS + ("violation",)
    _write(args, report.render_csv(cols, rows, args.context), f"lemma-{args.lemma}.csv", out)
    if args.plot:
        slacks = sorted(float(Enclosure.of(r["slack"]).lo) for r in rep.rows)
        report.plot_series(args.plot, range(len(slacks)), {"slack (sorted)": slacks},
                           title=f"{args.lemma} check: {rep.violations} violations", xlabel="case",
                           ylabel="slack", hlines=[(0, "zero")])
    if rep.violations:
        raise ValidationError(f"{rep.violations} violations of the {args.lemma} bound", **rep.summary())
    return 0


def cmd_greedy_seq(args, out):
    seq = lb.greedy_sequences(Fraction(args.p), args.N, exact_limit=args.exact_limit)
    rows = lb.sequence_checks(seq)
    cols = ("n", "u", "v", "u_nondecreasing", "u_below_fixed", "v_below_n")
    _write(args, report.render_csv(cols, rows, args.context), "greedy-seq.csv", out)
    if args.plot:
        report.plot_series(args.plot, [r["n"] for r in rows],
                           {"u_n": [r["u"] for r in rows], "v_n / n": [Fraction(0) if r["n"] == 0 else
                                                                      Enclosure.of(r["v"]).mid / r["n"]
                                                                      for r in rows]},
                           title="greedy sequences", xlabel="n", hlines=[(seq.fixed_point, "u*")])
    return 0


def cmd_expected_red(args, out):
    rows = []
    cap = lb.pi_squared_over_six()
    total = Fraction(0)
    for n in range(1, args.N + 1):
        total += Fraction(1, n * n + 1)
        rows.append({"N": n, "partial_sum": total, "cap": fmt_decimal(cap), "below": total < cap.lo})
    _write(args, report.render_csv(("N", "partial_sum", "cap", "below"), rows, args.context), "expected-red.csv", out)
    if args.plot:
        report.plot_series(args.plot, [r["N"] for r in rows], {"partial sum": [r["partial_sum"] for r in rows]},
                           title="expected red transitions", xlabel="N", hlines=[(cap, "pi^2/6")])
    return 0


def _synthesize(args, model):
    from .synth import synthesize_onebit_markov
    eps = parse_rational(args.eps)
    probe = build_kernel(args.probe, model) if args.probe else default_probe(model, eps)
    return synthesize_onebit_markov(model, eps, probe, goals=args.goals, extra_levels=args.extra_levels)


def cmd_synthesize(args, out):
    model = load_model(args)
    syn = _synthesize(args, model)
    _write(args, report.render_json(syn.report.to_json(), args.context), "synthesis.json", out)
    if args.plot:
        levels = syn.report.schedule.levels
        report.plot_series(args.plot, [lv.index for lv in levels],
                           {"k_i": [lv.k for lv in levels], "l_i": [lv.l for lv in levels]},
                           title="bubble schedule", xlabel="level i", ylabel="radius")
    return 0


def cmd_evaluate(args, out):
    from .synth import check_synthesis
    model = load_model(args)
    syn = _synthesize(args, model)
    h = syn.report.proxy_horizon
    monitor = Monitor(REACH, m=args.goals, horizon=h, forbid=_has(LOSING_SINK), polarity=PESSIMISTIC,
                      name=f"buchi:m={args.goals},h={h}")
    est = estimate_event(model, syn.kernel, model.initial[0], monitor, samples=args.samples, seed=args.seed,
                         workers=args.workers)
    traces = [sample_run(syn.working_model, syn.working_kernel, syn.working_model.initial[0], 2 * h, args.seed + i)
              for i in range(args.traces)]
    problems = check_synthesis(syn, traces)
    row = _estimate_row(model_name(args), f"synthesized:eps={args.eps}", monitor, est)
    _write(args, report.render_csv(report.ESTIMATE_COLUMNS, [row], args.context), "evaluate.csv", out)
    if args.report:
        doc = syn.report.to_json()
        doc["checks"] = {k: len(v) for k, v in problems.items()}
        report.emit(report.render_json(doc, args.context), args.report, out)
    if args.plot:
        report.plot_points(args.plot, ["synthesized"], [est.point], [est.lo], [est.hi],
                           reference=1 - parse_rational(args.eps), title=f"{model_name(args)}: {monitor.name}",
                           ylabel="probability")
    if any(problems.values()):
        raise ValidationError("synthesis checks failed", **{k: len(v) for k, v in problems.items()})
    return 0


def cmd_m2_depth_check(args, out):
    model = fam.TreeChain(Fraction(args.p), fam.DEPTH_EQUALIZED)
    rows = []
    bad_total = 0
    for depth in range(args.step, args.depth + 1, args.step):
        slice_ = truncate(model, list(model.initial), k=depth)
        lengths = path_length_sets(slice_)
        bad = sum(1 for key, ls in lengths.items() if ls != {model.depth(slice_.states[key])})
        bad_total += bad
        rows.append({"depth": depth, "states": len(lengths), "exceptions": bad})
    _write(args, report.render_csv(("depth", "states", "exceptions"), rows, args.context), "m2-depth.csv", out)
    if bad_total:
        raise ValidationError(f"{bad_total} states with more than one incoming path length")
    return 0


# ------------------------------------------------------------------- parser

def _model_options(p, family_required=False):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--family", choices=fam.FAMILIES)
    g.add_argument("--model", help="finite model in slice JSON format")
    p.add_argument("--param", action="append", help="family parameters, e.g. variant=parity,skip=2")


def _stochastic(p, samples=True):
    p.add_argument("--seed", type=int, required=True)
    if samples:
        p.add_argument("--samples", type=int, default=100_000)
        p.add_argument("--workers", type=int, default=1)


def build_parser():
    parser = Parser(prog="countable-mdp", description="Countable MDP experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("family", help="build or export a model family")
    p.add_argument("action", choices=("build", "export"))
    _model_options(p)
    p.add_argument("--depth", type=int, default=10, help="export: bubble radius")
    p.add_argument("--out")
    p.set_defaults(run=cmd_family)

    p = sub.add_parser("simulate", help="sample one run")
    _model_options(p)
    p.add_argument("--strategy", required=True)
    p.add_argument("--steps", type=int, default=100)
    _stochastic(p, samples=False)
    p.add_argument("--out")
    p.set_defaults(run=cmd_simulate)

    p = sub.add_parser("estimate", help="Monte Carlo estimate of a monitored event")
    _model_options(p)
    p.add_argument("--strategy", required=True)
    p.add_argument("--monitor", required=True)
    p.add_argument("--level", type=float, default=0.95)
    _stochastic(p)
    p.add_argument("--out")
    p.add_argument("--plot")
    p.set_defaults(run=cmd_estimate)

    p = sub.add_parser("exact", help="exact probability on a truncated model")
    _model_options(p)
    p.add_argument("--strategy", required=True)
    p.add_argument("--monitor")
    p.add_argument("--red-curve", type=int, help="tree-chain: P(red within T^1..T^N) for N up to this")
    p.add_argument("--out")
    p.add_argument("--plot")
    p.set_defaults(run=cmd_exact)

    p = sub.add_parser("recursion", help="survival statistics of a tree under parameter grids")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--grid", action="append", required=True, help="uniform:X, down:X or random:SEED")
    p.add_argument("--p", default="7/10")
    p.add_argument("--out")
    p.set_defaults(run=cmd_recursion)

    p = sub.add_parser("check-lemma", help="check a lower-bound inequality")
    p.add_argument("lemma", choices=("key", "death", "calculus"))
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--grids", type=int, default=100, help="random grids besides the structured ones")
    p.add_argument("--points", type=int, default=10_000, help="calculus: grid points")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", default="7/10")
    p.add_argument("--out")
    p.add_argument("--plot")
    p.set_defaults(run=cmd_check_lemma)

    p = sub.add_parser("greedy-seq", help="sequences u_n, v_n of the greedy strategy")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--exact-limit", type=int, default=8,
                   help="print exact rationals up to this n (denominators grow doubly exponentially)")
    p.add_argument("--p", default="7/10")
    p.add_argument("--out")
    p.add_argument("--plot")
    p.set_defaults(run=cmd_greedy_seq)

    p = sub.add_parser("expected-red", help="partial sums of the expected red-transition bound")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--plot")
    p.set_defaults(run=cmd_expected_red)

    for name, fn, help_text in (("synthesize", cmd_synthesize, "synthesize a one-bit Markov strategy"),
                                ("evaluate", cmd_evaluate, "synthesize, then estimate and check it")):
        p = sub.add_parser(name, help=help_text)
        _model_options(p)
        p.add_argument("--eps", default="1/10")
        p.add_argument("--probe", help="probe strategy descriptor (default depends on the family)")
        p.add_argument("--goals", type=int, default=8)
        p.add_argument("--extra-levels", type=int, default=4)
        if name == "evaluate":
            _stochastic(p)
            p.add_argument("--traces", type=int, default=20)
            p.add_argument("--report", help="path of the JSON synthesis report")
        p.add_argument("--out")
        p.add_argument("--plot")
        p.set_defaults(run=fn)

    p = sub.add_parser("m2-depth-check", help="incoming path lengths on the depth-equalized chain")
    p.add_argument("--depth", type=int, default=60)
    p.add_argument("--step", type=int, default=10)
    p.add_argument("--p", default="7/10")
    p.add_argument("--out")
    p.set_defaults(run=cmd_m2_depth_check)
    return parser


def run_command(argv, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        err.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return 2
    except SystemExit as exc:      # --help
        return int(exc.code or 0)
    args.context = command_context(args)
    try:
        return args.run(args, out)
    except MdpError as exc:
        err.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return 1
    except (OSError, KeyError, ValueError) as exc:
        err.write(json.dumps({"error": "validation-error", "message": f"{type(exc).__name__}: {exc}"}) + "\n")
        return 1


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
