"""Command-line front end.

Subcommands: ``run`` (sample guided traces and report the free-energy
estimate), ``oracle`` (exact quantities by enumeration), ``bound``
(evidence / hypothesis lower bounds), ``optimize`` (guide-table search),
and ``trace`` (dump one trace with its per-event free-energy
contributions).

Every invocation emits a single JSON document; all randomness derives
from ``--seed``, and floats are serialized with 17 significant digits so
identical invocations produce byte-identical output (with ``--workers
1``; more workers only split the seed range into chunks, which are
merged back in order).
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from .dists import ZeroMassError, DuplicateValueError, EmptyRangeError
from .enumeration import (
    ConditioningOnNullError,
    EnumerationCapError,
    ExtraChoicesUnsupportedError,
    enumerate_paths,
    exact_conditional_expectation,
    exact_evidence,
    exact_free_energy,
    exact_guided_profile,
)
from .estimators import (
    BatchStats,
    EmptyError,
    NoAcceptedRunsError,
    StatusError,
    UndefinedRatioError,
    WeightError,
    batch_stats,
    estimate_from_batch,
    hypothesis_estimate_from_stats,
    lower_confidence_bound,
    merge_batch_stats,
)
from .guideopt import UtilityConfig, optimize_guide
from .models import MODELS, monkey_evidence_dp
from .runtime import RunStatus, derive_seeds, run_trace

_HANDLED_ERRORS = (
    NoAcceptedRunsError,
    UndefinedRatioError,
    EmptyError,
    StatusError,
    WeightError,
    ConditioningOnNullError,
    EnumerationCapError,
    ExtraChoicesUnsupportedError,
    ZeroMassError,
    DuplicateValueError,
    EmptyRangeError,
    ValueError,
)


# ---------------------------------------------------------------------------
# deterministic JSON


def _format_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _emit(value, indent: int, out: list) -> None:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if value is None:
        out.append("null")
    elif isinstance(value, (bool, np.bool_)):
        out.append("true" if value else "false")
    elif isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        out.append(_format_float(float(value)))
    elif isinstance(value, str):
        out.append(_escape(value))
    elif isinstance(value, dict):
        if not value:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(value.items()):
            out.append(f"{inner}{_escape(str(k))}: ")
            _emit(v, indent + 1, out)
            out.append(",\n" if i < len(value) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(value, (list, tuple, np.ndarray)):
        items = list(value)
        if not items:
            out.append("[]")
            return
        out.append("[\n")
        for i, v in enumerate(items):
            out.append(inner)
            _emit(v, indent + 1, out)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(value).__name__}")


def _escape(s: str) -> str:
    parts = ['"']
    for ch in s:
        if ch == '"':
            parts.append('\\"')
        elif ch == "\\":
            parts.append("\\\\")
        elif ch == "\n":
            parts.append("\\n")
        elif ch == "\t":
            parts.append("\\t")
        elif ch == "\r":
            parts.append("\\r")
        elif ord(ch) < 0x20:
            parts.append(f"\\u{ord(ch):04x}")
        else:
            parts.append(ch)
    parts.append('"')
    return "".join(parts)


def dumps(doc) -> str:
    out: list[str] = []
    _emit(doc, 0, out)
    return "".join(out)


# ---------------------------------------------------------------------------
# model and guide resolution


class UsageError(Exception):
    """Unknown model or guide name (exit code 2)."""


def _guide_config(args) -> dict:
    cfg = {"ceiling": args.ceiling}
    for key in ("alphabet", "length", "pattern", "depth_cap"):
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    if getattr(args, "params", None):
        cfg["params"] = _load_params(args.params)
    return cfg


def _load_params(path: str) -> dict:
    import json

    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"guide parameter file {path} must hold a JSON object")
    return {str(k): [float(x) for x in v] for k, v in raw.items()}


def build_model(model_name: str, cfg: dict):
    entry = MODELS.get(model_name)
    if entry is None:
        raise UsageError(f"unknown model {model_name!r}; known: {', '.join(sorted(MODELS))}")
    kwargs = {k: cfg[k] for k in entry.model_args if cfg.get(k) is not None}
    return entry, entry.build(**kwargs)


def build_guide(entry, guide_name: str, cfg: dict):
    if guide_name == "tabular":
        if entry.family is None:
            raise UsageError(f"model {entry.name!r} has no tabular guide family")
        family = entry.family(ceiling=cfg.get("ceiling"))
        return family.bind(cfg.get("params") or {})
    factory = entry.guides.get(guide_name)
    if factory is None:
        known = ", ".join(sorted([*entry.guides, *(["tabular"] if entry.family else [])]))
        raise UsageError(f"unknown guide {guide_name!r} for model {entry.name!r}; known: {known}")
    return factory(**cfg)


def _stats_chunk(model_name: str, guide_name: str, cfg: dict, seeds, max_events: int) -> BatchStats:
    entry, model = build_model(model_name, cfg)
    guide = build_guide(entry, guide_name, cfg)
    return batch_stats(model, guide, seeds, max_events=max_events)


def _collect_stats(args, stream: int, guide_name: Optional[str] = None) -> BatchStats:
    cfg = _guide_config(args)
    guide_name = guide_name or args.guide
    seeds = derive_seeds(args.seed, args.n, stream=stream)
    workers = max(1, args.workers)
    if workers == 1:
        return _stats_chunk(args.model, guide_name, cfg, seeds, args.max_events)
    chunks = [c for c in np.array_split(seeds, workers) if len(c)]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(
            pool.map(
                _stats_chunk,
                [args.model] * len(chunks),
                [guide_name] * len(chunks),
                [cfg] * len(chunks),
                chunks,
                [args.max_events] * len(chunks),
            )
        )
    return merge_batch_stats(parts)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_run(args) -> dict:
    stats = _collect_stats(args, stream=0)
    est = estimate_from_batch(stats)
    results = {
        "mean_fe": est.mean_fe,
        "std_error": est.std_error,
        "n_total": est.n_total,
        "n_accepted": est.n_accepted,
        "acceptance_rate": est.acceptance_rate,
        "adjusted_fe": est.adjusted_fe,
        "total_events": est.total_events,
    }
    if args.report_hypothesis_histogram:
        results["hypothesis_histogram"] = _weighted_histogram(stats)
    return results


def _weighted_histogram(stats: BatchStats) -> dict:
    total = float(stats.weight_evidence.sum())
    if total <= 0.0:
        return {}
    hist: dict[str, float] = {}
    for h, w in zip(stats.hypothesis, stats.weight_evidence):
        if w > 0.0:
            key = _format_float(float(h))
            hist[key] = hist.get(key, 0.0) + float(w)
    return {k: hist[k] / total for k in sorted(hist, key=float)}


def _cmd_oracle(args) -> dict:
    cfg = _guide_config(args)
    entry, model = build_model(args.model, cfg)
    pe = enumerate_paths(model, max_paths=args.max_paths, max_events=args.max_events)
    evidence = exact_evidence(pe)
    results: dict = {"paths": len(pe.entries), "evidence": evidence}
    if evidence > 0.0:
        results["conditional_h"] = exact_conditional_expectation(pe)
    else:
        results["conditional_h"] = None
    if args.model == "monkey":
        results["dp_evidence"] = monkey_evidence_dp(
            args.alphabet, args.length, args.pattern
        )
    if args.guide is not None:
        guide = build_guide(entry, args.guide, cfg)
        report = exact_free_energy(pe, guide)
        profile = exact_guided_profile(pe, guide)
        results["guide"] = {
            "free_energy": report.free_energy,
            "kl": report.kl,
            "acceptance_rate": profile.acceptance_rate,
            "adjusted_fe": profile.adjusted_fe,
            "mean_events_per_run": profile.mean_events_per_run,
        }
    return results


def _bound_dict(b) -> dict:
    return {
        "bound": b.bound,
        "confidence": b.confidence,
        "n": b.n,
        "sample_mean": b.sample_mean,
        "sample_se": b.sample_se,
    }


def _cmd_bound(args, notes: list) -> dict:
    den_stats = _collect_stats(args, stream=2 if args.hypothesis else 0)
    results = {"evidence_bound": _bound_dict(lower_confidence_bound(den_stats.weight_evidence, args.delta))}
    if args.hypothesis:
        num_stats = _collect_stats(args, stream=1, guide_name=args.guide_num or args.guide)
        est = hypothesis_estimate_from_stats(num_stats, den_stats, args.delta)
        notes.append("ratio_of_bounds is an estimate of the conditional expectation, not a bound")
        results["hypothesis"] = {
            "numerator_bound": _bound_dict(est.numerator_bound),
            "denominator_bound": _bound_dict(est.denominator_bound),
            "ratio_of_bounds": est.ratio_of_bounds,
            "self_normalized": est.self_normalized,
            "self_normalized_se": est.self_normalized_se,
        }
    return results


def _cmd_optimize(args) -> dict:
    cfg = _guide_config(args)
    entry, model = build_model(args.model, cfg)
    if entry.family is None:
        raise UsageError(f"model {entry.name!r} has no tabular guide family to optimize")
    family = entry.family(ceiling=args.ceiling)
    report = optimize_guide(
        model,
        family,
        UtilityConfig(k=args.k),
        budget=args.budget,
        seed=args.seed,
        n=args.eval_n,
        sigma=args.sigma,
        accept_margin=args.margin,
        max_events=args.max_events,
    )
    if args.save_params:
        with open(args.save_params, "w") as fh:
            fh.write(dumps({k: list(v) for k, v in sorted(report.best_params.items())}) + "\n")
    return {
        "best_utility": report.best_utility,
        "evaluations": report.evaluations,
        "utility_trace": [[i, u] for i, u in report.utility_trace],
        "best_params": {k: list(v) for k, v in sorted(report.best_params.items())},
        "cell_mean_fe": report.cell_mean_fe,
    }


def _cmd_trace(args) -> dict:
    cfg = _guide_config(args)
    entry, model = build_model(args.model, cfg)
    guide = build_guide(entry, args.guide, cfg)
    t = run_trace(model, guide, args.seed, max_events=args.max_events)
    events = []
    for ev in t.per_event_fe:
        item = {"kind": ev.kind, "index": ev.index, "label": ev.label, "fe": ev.fe}
        if ev.kind == "choose":
            rec = t.choices[ev.index]
            item["chosen"] = rec.chosen
            item["prior_mass"] = math.exp(rec.log_prior)
            item["guide_mass"] = math.exp(rec.log_guide)
        events.append(item)
    extras = [
        {
            "index": x.index,
            "chosen": x.chosen,
            "guide_mass": math.exp(x.log_guide),
            "conditional_log_mass": x.log_model_conditional,
        }
        for x in t.extras
    ]
    return {
        "status": t.status.value,
        "crash_reason": t.crash_reason,
        "hypothesis": t.hypothesis,
        "log_evidence": t.log_evidence,
        "log_prior": t.log_prior_total,
        "log_guide": t.log_guide_total,
        "one_run_fe": t.fe_total if t.status is RunStatus.COMPLETED else None,
        "events": events,
        "extras": extras,
    }


# ---------------------------------------------------------------------------
# argument parsing and entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidedppl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_guide=True, with_n=True):
        p.add_argument("--model", required=True)
        if with_guide:
            p.add_argument("--guide", default="prior")
        if with_n:
            p.add_argument("--n", type=int, default=1000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--ceiling", type=float, default=None)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--depth-cap", dest="depth_cap", type=int, default=3)
        p.add_argument("--alphabet", type=int, default=2)
        p.add_argument("--length", type=int, default=12)
        p.add_argument("--pattern", default="aba")
        p.add_argument("--params", default=None, help="guide parameter file (JSON)")
        p.add_argument("--max-events", dest="max_events", type=int, default=100_000)
        p.add_argument("--output", default=None)

    p_run = sub.add_parser("run", help="sample guided traces; report the free-energy estimate")
    common(p_run)
    p_run.add_argument("--report-hypothesis-histogram", action="store_true",
                       dest="report_hypothesis_histogram")

    p_oracle = sub.add_parser("oracle", help="exact quantities by path enumeration")
    common(p_oracle, with_guide=False, with_n=False)
    p_oracle.add_argument("--guide", default=None)
    p_oracle.add_argument("--max-paths", dest="max_paths", type=int, default=1_000_000)

    p_bound = sub.add_parser("bound", help="lower confidence bounds on evidence / hypothesis sums")
    common(p_bound)
    p_bound.add_argument("--delta", type=float, default=0.05)
    p_bound.add_argument("--hypothesis", action="store_true")
    p_bound.add_argument("--guide-num", dest="guide_num", default=None)

    p_opt = sub.add_parser("optimize", help="search the model's tabular guide family")
    common(p_opt, with_guide=False, with_n=False)
    p_opt.add_argument("--budget", type=int, default=500)
    p_opt.add_argument("--k", type=float, default=0.0)
    p_opt.add_argument("--eval-n", dest="eval_n", type=int, default=300)
    p_opt.add_argument("--sigma", type=float, default=1.0)
    p_opt.add_argument("--margin", type=float, default=0.0,
                       help="required utility improvement for a step to be accepted")
    p_opt.add_argument("--save-params", dest="save_params", default=None)

    p_trace = sub.add_parser("trace", help="dump one trace with per-event fe contributions")
    common(p_trace, with_n=False)

    return parser


_CONFIG_KEYS = (
    "model", "guide", "guide_num", "n", "delta", "seed", "ceiling", "k", "workers",
    "budget", "eval_n", "sigma", "margin", "depth_cap", "alphabet", "length",
    "pattern", "params", "max_events", "max_paths", "hypothesis",
    "report_hypothesis_histogram", "save_params", "output",
)


def _config_echo(args) -> dict:
    return {k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    notes: list[str] = []
    doc = {"command": args.command, "config": _config_echo(args)}
    code = 0
    try:
        if args.command == "run":
            doc["results"] = _cmd_run(args)
        elif args.command == "oracle":
            doc["results"] = _cmd_oracle(args)
        elif args.command == "bound":
            doc["results"] = _cmd_bound(args, notes)
        elif args.command == "optimize":
            doc["results"] = _cmd_optimize(args)
        elif args.command == "trace":
            doc["results"] = _cmd_trace(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except _HANDLED_ERRORS as exc:
        doc["error"] = {"type": type(exc).__name__, "message": str(exc)}
        partial = getattr(exc, "partial", None)
        if partial is not None:
            doc["error"]["partial"] = {
                "numerator_bound": _bound_dict(partial.numerator_bound),
                "denominator_bound": _bound_dict(partial.denominator_bound),
                "self_normalized": partial.self_normalized,
                "self_normalized_se": partial.self_normalized_se,
            }
        code = 1
    doc["stderr_notes"] = notes
    text = dumps(doc) + "\n"
    sys.stdout.write(text)
    if getattr(args, "output", None):
        with open(args.output, "w") as fh:
            fh.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
