"""Command-line entry point: ``otc <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error (unparseable graph, no
alignment path, oracle disagreement, ...) and 2 on a usage error.  Every
subcommand accepts ``--config FILE`` with ``key = value`` lines named
after its long flags; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .corruption import (
    ERROR_TYPES,
    CorruptionReport,
    EmptyPool,
    ErrorSpec,
    corpus_error_rate,
    corrupt_corpus,
    single_spec,
)
from .graphs import (
    STAR_MODES,
    Lexicon,
    PenaltyPair,
    Vocabulary,
    build_ctc_topology,
    build_emission,
    build_lexicon_fst,
    build_linear_g,
    build_otc_g,
    build_training_graph,
)
from .io import (
    FormatError,
    format_matrix,
    read_emissions,
    read_lexicon,
    read_transcripts,
    read_vocabulary,
    vocabulary_from_tokens,
    write_transcripts,
)
from .loss import MODES, LossConfig, PenaltySchedule, ctc_loss, otc_loss, penalty_at
from .oracle import Explosion, brute_posterior, lattice_log_likelihood
from .toy import BenchmarkConfig, ModelParams, evaluate, parse_key_values, run_benchmark
from .wfst import WfstError, compose, connect, read_text, total_weight, write_dot, write_text

GRAPH_TYPES = ("ctc-topo", "lexicon", "g", "otc-g", "emission", "training")
VERIFY_TOLERANCE = 1e-8
SEED_ENV = "OTC_SEED"
DEFAULT_SWEEP_RATES = "0,0.1,0.3,0.5,0.7"


class DomainError(Exception):
    pass


def fmt(x: float) -> str:
    return f"{x + 0.0:.6g}"


@dataclass
class RunManifest:
    subcommand: str
    argv: list[str]
    config: dict
    seeds: dict = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    version: str = __version__
    started: str = ""
    wall_clock_seconds: float = 0.0

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# --------------------------------------------------------------------------
# shared helpers


def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise DomainError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _emit(text: str, output: str | None, outputs: list[str]) -> None:
    if output:
        Path(output).write_text(text)
        outputs.append(output)
    else:
        sys.stdout.write(text)


def _schedule(args) -> PenaltySchedule:
    return PenaltySchedule(args.beta1, args.tau1, args.beta2, args.tau2)


def _penalties(args) -> PenaltyPair:
    """Explicit lambdas win; otherwise the schedule at ``--epoch``."""
    scheduled = penalty_at(_schedule(args), args.epoch)
    l1 = args.lambda1 if args.lambda1 is not None else scheduled.lambda1
    l2 = args.lambda2 if args.lambda2 is not None else scheduled.lambda2
    return PenaltyPair(l1, l2)


def _add_penalty_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta1", type=float, help="initial self-loop penalty")
    p.add_argument("--tau1", type=float, help="self-loop decay per epoch")
    p.add_argument("--beta2", type=float, help="initial bypass penalty")
    p.add_argument("--tau2", type=float, help="bypass decay per epoch")
    p.add_argument("--epoch", type=int, help="epoch index for the schedule")
    p.add_argument("--lambda1", type=float, help="self-loop penalty (overrides the schedule)")
    p.add_argument("--lambda2", type=float, help="bypass penalty (overrides the schedule)")


PENALTY_DEFAULTS = dict(beta1=3.75, tau1=0.999, beta2=-19.0, tau2=0.975, epoch=0)


def _load_symbols(args, transcripts: Sequence[Sequence[str]] = ()) -> tuple[Vocabulary, Lexicon]:
    """Vocabulary from --vocab, else emissions header, else transcript tokens."""
    vocab = None
    if getattr(args, "vocab", None):
        vocab = read_vocabulary(args.vocab)
    elif getattr(args, "emissions", None):
        first = args.emissions[0] if isinstance(args.emissions, list) else args.emissions
        vocab = read_emissions(first)[0]
    if getattr(args, "lexicon", None):
        if vocab is None:
            raise DomainError("--lexicon needs --vocab (or an emission header) for the unit inventory")
        return vocab, read_lexicon(args.lexicon, vocab)
    if vocab is None:
        if not any(transcripts):
            raise DomainError("cannot infer a vocabulary: give --vocab or a non-empty transcript")
        vocab = vocabulary_from_tokens(transcripts)
    return vocab, Lexicon.identity(vocab)


def _transcript_tokens(args) -> list[str]:
    if args.transcript is not None and args.transcript_file is not None:
        raise DomainError("give --transcript or --transcript-file, not both")
    if args.transcript_file is not None:
        lines = read_transcripts(args.transcript_file)
        return lines[0] if lines else []
    return (args.transcript or "").split()


def _encode(lexicon: Lexicon, tokens: Sequence[str]) -> tuple[int, ...]:
    try:
        return lexicon.encode(tokens)
    except KeyError as err:
        raise DomainError(f"transcript: {err.args[0]}") from None


def _render(w, fmt_name: str, isymbols=None, osymbols=None) -> str:
    if fmt_name == "dot":
        return write_dot(w, isymbols, osymbols)
    return write_text(w)


# --------------------------------------------------------------------------
# subcommands


def cmd_build_graph(args, manifest: RunManifest) -> int:
    tokens = _transcript_tokens(args)
    vocab, lexicon = _load_symbols(args, [tokens])
    isyms = vocab.symbol_table()
    osyms = lexicon.word_symbol_table()
    if args.type == "ctc-topo":
        w = build_ctc_topology(vocab, include_star=args.include_star)
        osyms = isyms
    elif args.type == "lexicon":
        w = build_lexicon_fst(lexicon, include_star=args.include_star)
    elif args.type == "g":
        w = build_linear_g(_encode(lexicon, tokens))
        isyms = osyms
    elif args.type == "otc-g":
        w = build_otc_g(_encode(lexicon, tokens), _penalties(args), vocab.star_id)
        isyms = osyms
    elif args.type == "emission":
        if not args.emissions:
            raise DomainError("--type emission needs --emissions")
        evocab, star_mode, lp = read_emissions(args.emissions)
        if evocab != vocab:
            raise DomainError("emission header does not match the vocabulary")
        manifest.inputs.append(args.emissions)
        w = build_emission(lp, vocab, star_mode, include_star=args.include_star)
        osyms = isyms
    else:
        penalties = _penalties(args) if args.mode == "otc" else None
        w = connect(build_training_graph(lexicon, _encode(lexicon, tokens), penalties))
    _emit(_render(w, args.format, isyms, osyms), args.output, manifest.outputs)
    return 0


def cmd_compose(args, manifest: RunManifest) -> int:
    a = read_text(Path(args.first).read_text())
    b = read_text(Path(args.second).read_text())
    manifest.inputs += [args.first, args.second]
    c = compose(a, b)
    if args.connect:
        c = connect(c)
    _emit(_render(c, args.format), args.output, manifest.outputs)
    return 0


def cmd_total_weight(args, manifest: RunManifest) -> int:
    w = read_text(Path(args.fst).read_text())
    manifest.inputs.append(args.fst)
    print(fmt(total_weight(w)))
    return 0


def cmd_convert(args, manifest: RunManifest) -> int:
    w = read_text(Path(args.fst).read_text())
    manifest.inputs.append(args.fst)
    syms = read_vocabulary(args.vocab).symbol_table() if args.vocab else None
    _emit(_render(w, args.format, syms, syms), args.output, manifest.outputs)
    return 0


def _verify_one(lp, y, lexicon: Lexicon, cfg: LossConfig, penalties, nll: float) -> float:
    """Largest relative disagreement between the engine and the oracles."""
    pen = penalties if cfg.mode == "otc" else None
    refs = [lattice_log_likelihood(lp, y, lexicon, pen, cfg.star_mode)]
    try:
        refs.append(
            brute_posterior(
                lp,
                lexicon.expand(y) if cfg.mode == "ctc" else y,
                cfg.vocab,
                extended=cfg.mode == "otc",
                penalties=pen,
                star_mode=cfg.star_mode,
                lexicon=lexicon,
            )
        )
    except Explosion:
        pass
    worst = 0.0
    for ref in refs:
        if math.isinf(ref) and math.isinf(nll):
            continue
        denom = max(abs(ref), abs(nll), 1e-300)
        worst = max(worst, abs(-nll - ref) / denom)
    return worst


def cmd_loss(args, manifest: RunManifest) -> int:
    transcripts = read_transcripts(args.transcript)
    manifest.inputs += [*args.emissions, args.transcript]
    if len(transcripts) < len(args.emissions):
        raise DomainError(f"{len(args.emissions)} emission files but {len(transcripts)} transcript lines")
    if args.grad and len(args.emissions) != 1:
        raise DomainError("--grad writes one matrix; give a single emission file")
    vocab, lexicon = _load_symbols(args)
    schedule = _schedule(args) if args.mode == "otc" else None
    penalties = _penalties(args) if args.mode == "otc" else None
    status = 0
    worst = 0.0
    for i, path in enumerate(args.emissions):
        evocab, header_mode, lp = read_emissions(path)
        if evocab != vocab:
            raise DomainError(f"{path}: header does not match the vocabulary")
        star_mode = args.star_mode or header_mode
        if star_mode != header_mode:
            raise DomainError(f"{path}: header implies star mode {header_mode!r}")
        cfg = LossConfig(vocab, args.mode, star_mode, schedule, lexicon)
        y = _encode(lexicon, transcripts[i])
        res = ctc_loss(lp, y, cfg) if args.mode == "ctc" else otc_loss(lp, y, cfg, penalties=penalties)
        print(fmt(res.nll))
        if res.no_path:
            print(f"error: {path}: no alignment path for the transcript", file=sys.stderr)
            status = 1
        if args.grad:
            _emit(format_matrix(vocab.column_names(star_mode), res.grad), args.grad, manifest.outputs)
        if args.verify:
            worst = max(worst, _verify_one(lp, y, lexicon, cfg, penalties, res.nll))
    if args.verify:
        ok = worst <= VERIFY_TOLERANCE
        print(f"verify: {'ok' if ok else 'FAILED'} max relative difference {fmt(worst)}", file=sys.stderr)
        if not ok:
            status = 1
    return status


def cmd_corrupt(args, manifest: RunManifest) -> int:
    transcripts = read_transcripts(args.input)
    manifest.inputs.append(args.input)
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    manifest.seeds["corruption"] = seed
    if args.error_rate is not None:
        if any(p is not None for p in (args.p_sub, args.p_ins, args.p_del)):
            raise DomainError("give either --error-rate or per-type probabilities, not both")
        spec = single_spec(args.error_type or "mix", args.error_rate, seed)
    else:
        spec = ErrorSpec(args.p_sub or 0.0, args.p_ins or 0.0, args.p_del or 0.0, seed)
    if args.pool:
        pool = list(read_vocabulary(args.pool).units)
        manifest.inputs.append(args.pool)
    else:
        pool = list(dict.fromkeys(tok for t in transcripts for tok in t))
    outs, reports = corrupt_corpus(transcripts, spec, pool)
    write_transcripts(args.output, outs)
    manifest.outputs.append(args.output)
    total = CorruptionReport()
    for r in reports:
        total += r
    report = {
        "spec": asdict(spec),
        "aggregate": total.to_dict(),
        "utterances": [r.to_dict() for r in reports],
    }
    report_path = args.report or args.output + ".report.json"
    Path(report_path).write_text(json.dumps(report, indent=2) + "\n")
    manifest.outputs.append(report_path)
    rates = total.rates()
    print(f"sub {fmt(rates['sub'])} ins {fmt(rates['ins'])} del {fmt(rates['del'])}")
    return 0


BENCH_FIELDS = {f.name: f for f in fields(BenchmarkConfig)}


def _benchmark_config(args, manifest: RunManifest) -> BenchmarkConfig:
    """Packaged benchmark, overridden by OTC_SEED, then by --config and flags."""
    values = parse_key_values(_packaged_benchmark_text())
    seed = _env_seed()
    if seed is not None:
        values["train_seed"] = values["corruption_seed"] = str(seed)
    for name in BENCH_FIELDS:
        if getattr(args, name, None) is not None:
            values[name] = str(getattr(args, name))
    cfg = BenchmarkConfig.from_mapping(values)
    manifest.seeds.update(data=cfg.data_seed, train=cfg.train_seed, corruption=cfg.corruption_seed)
    return cfg


def _packaged_benchmark_text() -> str:
    from importlib import resources

    return resources.files("otc").joinpath("data/toy_benchmark.cfg").read_text()


def _record(result: dict) -> dict:
    keep = ("mode", "error_type", "error_rate", "ter", "loss_trace", "diverged", "skipped", "realized_error_rate")
    return {k: result[k] for k in keep}


def cmd_train_toy(args, manifest: RunManifest) -> int:
    cfg = _benchmark_config(args, manifest)
    manifest.config["benchmark"] = asdict(cfg)
    data = cfg.dataset()
    error_type = args.error_type or "mix"
    if args.sweep:
        rates = [float(r) for r in (args.sweep_rates or DEFAULT_SWEEP_RATES).split(",")]
        modes = (args.sweep_modes or "ctc,otc").split(",")
        for m in modes:
            if m not in MODES:
                raise DomainError(f"unknown mode {m!r} in --sweep-modes")
        records = []
        for rate in rates:
            for m in modes:
                res = run_benchmark(m, error_type, rate, cfg, data)
                records.append(_record(res))
                print(f"{m}\t{error_type}\t{fmt(rate)}\t{fmt(res['ter'])}")
        rows = ["error_type\terror_rate\tmode\tter"]
        rows += [f"{r['error_type']}\t{fmt(r['error_rate'])}\t{r['mode']}\t{fmt(r['ter'])}" for r in records]
        Path(args.sweep).write_text("\n".join(rows) + "\n")
        manifest.outputs.append(args.sweep)
        out = records
    else:
        res = run_benchmark(args.mode or "ctc", error_type, args.error_rate or 0.0, cfg, data)
        out = _record(res)
        print(f"ter {fmt(res['ter'])}")
        if args.save_model:
            res["params"].save(args.save_model)
            manifest.outputs.append(args.save_model)
    if args.output:
        Path(args.output).write_text(json.dumps(out, indent=2, default=_json_default) + "\n")
        manifest.outputs.append(args.output)
    return 0


def cmd_eval(args, manifest: RunManifest) -> int:
    if args.model:
        cfg = _benchmark_config(args, manifest)
        manifest.inputs.append(args.model)
        params = ModelParams.load(args.model)
        _, test = cfg.dataset()
        expected = cfg.vocab().num_columns(cfg.star_mode)
        if params.weight.shape != (cfg.dim, expected):
            raise DomainError(f"model shape {params.weight.shape} does not fit the benchmark ({cfg.dim}, {expected})")
        print(f"ter {fmt(evaluate(params, test, cfg.star_mode))}")
        return 0
    if not (args.ref and args.hyp):
        raise DomainError("eval needs --model, or both --ref and --hyp")
    refs, hyps = read_transcripts(args.ref), read_transcripts(args.hyp)
    manifest.inputs += [args.ref, args.hyp]
    print(f"ter {fmt(corpus_error_rate(refs, hyps))}")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; explicit flags take precedence")
    common.add_argument("--manifest", help="where to write the run manifest (default: next to the first output)")

    parser = argparse.ArgumentParser(prog="otc", description="WFST-based CTC and OTC losses and tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)

    p = sub.add_parser("build-graph", parents=[common], help="build one of the training-graph components")
    p.add_argument("--type", choices=GRAPH_TYPES, required=True)
    p.add_argument("--vocab", help="unit list, one per line")
    p.add_argument("--lexicon", help="word<TAB>units file (default: identity lexicon)")
    p.add_argument("--transcript", help="space-separated transcript")
    p.add_argument("--transcript-file", help="transcript file; the first line is used")
    p.add_argument("--emissions", help="emission TSV (for --type emission)")
    p.add_argument("--include-star", action="store_true", default=None, help="add star arcs")
    p.add_argument("--mode", choices=MODES, help="training-graph flavour (default ctc)")
    p.add_argument("--format", choices=("att", "dot"))
    p.add_argument("-o", "--output")
    _add_penalty_flags(p)
    p.set_defaults(func=cmd_build_graph, _defaults=dict(PENALTY_DEFAULTS, mode="ctc", format="att", include_star=False))

    p = sub.add_parser("compose", parents=[common], help="compose two AT&T text transducers")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--connect", action="store_true", default=None, help="trim useless states")
    p.add_argument("--format", choices=("att", "dot"))
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_compose, _defaults=dict(format="att", connect=False))

    p = sub.add_parser("total-weight", parents=[common], help="log-semiring total weight of an acyclic graph")
    p.add_argument("fst")
    p.set_defaults(func=cmd_total_weight, _defaults={})

    p = sub.add_parser("loss", parents=[common], help="CTC or OTC loss of emission matrices")
    p.add_argument("--emissions", nargs="+", required=True, help="emission TSV file(s), one per utterance")
    p.add_argument("--transcript", required=True, help="transcript file, one line per emission file")
    p.add_argument("--vocab")
    p.add_argument("--lexicon")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--star-mode", choices=STAR_MODES, help="default: implied by the emission header")
    p.add_argument("--grad", help="write the gradient TSV here")
    p.add_argument("--verify", action="store_true", default=None, help="cross-check against the brute-force oracles")
    _add_penalty_flags(p)
    p.set_defaults(func=cmd_loss, _defaults=dict(PENALTY_DEFAULTS, mode="ctc", verify=False))

    p = sub.add_parser("corrupt", parents=[common], help="inject synthetic transcript errors")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", help="JSON report path (default: OUTPUT.report.json)")
    p.add_argument("--p-sub", type=float)
    p.add_argument("--p-ins", type=float)
    p.add_argument("--p-del", type=float)
    p.add_argument("--error-type", choices=ERROR_TYPES)
    p.add_argument("--error-rate", type=float)
    p.add_argument("--seed", type=int, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--pool", help="replacement tokens, one per line (default: tokens of the input)")
    p.set_defaults(func=cmd_corrupt, _defaults={})

    p = sub.add_parser("train-toy", parents=[common], help="train the toy model with CTC or OTC")
    _add_benchmark_flags(p)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seed", type=int, dest="train_seed", help="training seed")
    p.add_argument("--error-type", choices=ERROR_TYPES)
    p.add_argument("--error-rate", type=float)
    p.add_argument("-o", "--output", help="JSON results")
    p.add_argument("--sweep", help="run every mode at every rate and write a TSV table here")
    p.add_argument("--sweep-rates", help=f"comma-separated rates (default {DEFAULT_SWEEP_RATES})")
    p.add_argument("--sweep-modes", help="comma-separated modes (default ctc,otc)")
    p.add_argument("--save-model", help="write final parameters (.npz)")
    p.set_defaults(func=cmd_train_toy, _defaults={})

    p = sub.add_parser("eval", parents=[common], help="token error rate of a model or of transcript files")
    _add_benchmark_flags(p)
    p.add_argument("--model", help="parameters saved by train-toy --save-model")
    p.add_argument("--ref", help="reference transcripts")
    p.add_argument("--hyp", help="hypothesis transcripts")
    p.set_defaults(func=cmd_eval, _defaults={})

    p = sub.add_parser("convert", parents=[common], help="re-emit an AT&T graph as AT&T or DOT")
    p.add_argument("fst")
    p.add_argument("--format", choices=("att", "dot"))
    p.add_argument("--vocab", help="unit list for DOT labels")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_convert, _defaults=dict(format="att"))
    return parser


def _add_benchmark_flags(p: argparse.ArgumentParser) -> None:
    for name, f in BENCH_FIELDS.items():
        if name == "train_seed":
            continue
        kind = type(f.default)
        p.add_argument("--" + name.replace("_", "-"), type=kind, dest=name)


def _apply_config(args, parser: argparse.ArgumentParser) -> None:
    """Fill unset options from --config and then from the built-in defaults."""
    explicit = args._explicit
    values: dict[str, str] = {}
    if args.config:
        values = parse_key_values(Path(args.config).read_text())
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    actions = {}
    for action in sub_action.choices[args.command]._actions:
        actions[action.dest] = action
        for opt in action.option_strings:
            if opt.startswith("--"):
                actions[opt[2:].replace("-", "_")] = action
    for key, raw in values.items():
        action = actions.get(key.replace("-", "_"))
        if action is None or action.dest in ("config", "manifest", "help"):
            parser.error(f"unknown key {key!r} in {args.config}")
        dest = action.dest
        if dest in explicit:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.strip().lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                value = action.type(raw)
            except ValueError:
                parser.error(f"{args.config}: invalid value {raw!r} for {key}")
        else:
            value = raw
        if action.nargs == "+":
            value = raw.split()
        if action.choices is not None and value not in action.choices:
            parser.error(f"{args.config}: {key} must be one of {sorted(action.choices)}")
        setattr(args, dest, value)
    for dest, value in args._defaults.items():
        if getattr(args, dest, None) is None:
            setattr(args, dest, value)


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    args._explicit = {k for k, v in vars(args).items() if v is not None}
    started = time.time()
    manifest = RunManifest(
        args.command,
        argv,
        config={},
        started=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    try:
        _apply_config(args, parser)
        manifest.config.update(
            {k: v for k, v in vars(args).items() if not k.startswith("_") and k != "func" and v is not None}
        )
        status = args.func(args, manifest)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    except (DomainError, WfstError, FormatError, EmptyPool, ValueError, KeyError, OSError) as err:
        message = err.args[0] if isinstance(err, KeyError) and err.args else err
        print(f"error: {message}", file=sys.stderr)
        return 1
    manifest.wall_clock_seconds = round(time.time() - started, 3)
    target = args.manifest or (manifest.outputs[0] + ".manifest.json" if manifest.outputs else None)
    if target:
        manifest.write(target)
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
