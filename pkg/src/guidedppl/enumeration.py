"""Exact enumeration of finite discrete models.

Replay-based: the model is re-executed repeatedly with a forced prefix of
choices, branching over each prior's support at the first unforced site.
This needs nothing from the host language beyond the determinism contract
the runtime already imposes, and yields ground-truth evidence
probabilities, conditional expectations, free energies, and KL
divergences at desk scale.  Guides that insert extra choices are outside
exact treatment and are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from .dists import Dist, Value, NEG_INF
from .runtime import ChoiceSite, Guide, ModelContext

DEFAULT_MAX_PATHS = 1_000_000
DEFAULT_MAX_EVENTS = 10_000


class EnumerationCapError(RuntimeError):
    """The model exceeded the path or per-run event budget."""


class ConditioningOnNullError(ZeroDivisionError):
    """Conditional expectation requested but P(evidence) = 0."""


class ExtraChoicesUnsupportedError(RuntimeError):
    """Exact guide evaluation cannot handle guide-inserted extra choices."""


@dataclass(frozen=True, slots=True)
class PathEntry:
    choices: tuple[Value, ...]
    log_prior: float
    log_evidence: float
    hypothesis: float
    n_events: int  # choose + evidence calls on this path


@dataclass(slots=True)
class PathEnumeration:
    """Every terminating execution path of a model, with caps used."""

    model: Callable[[ModelContext], None]
    entries: tuple[PathEntry, ...]
    max_paths: int
    max_events: int

    def prior_mass(self) -> float:
        return math.fsum(math.exp(e.log_prior) for e in self.entries)


class _Branch(Exception):
    def __init__(self, prior: Dist):
        self.prior = prior


class _EventCap(Exception):
    pass


class _ForcedRun:
    """Model context that replays a forced choice prefix and stops at the
    first unforced site (raising _Branch with that site's prior)."""

    def __init__(self, forced: tuple[Value, ...], max_events: int):
        self.forced = forced
        self.pos = 0
        self.log_prior = 0.0
        self.log_evidence = 0.0
        self.hypothesis = 1.0
        self.n_events = 0
        self.max_events = max_events

    def _bump(self):
        self.n_events += 1
        if self.n_events > self.max_events:
            raise _EventCap()

    def choose(self, prior: Dist, label: Optional[str] = None) -> Value:
        self._bump()
        if self.pos >= len(self.forced):
            raise _Branch(prior)
        v = self.forced[self.pos]
        self.pos += 1
        lp = prior.log_prob(v)
        if lp == NEG_INF:
            raise RuntimeError(
                f"model is not deterministic: forced value {v!r} left the prior support"
            )
        self.log_prior += lp
        return v

    def evidence(self, p) -> None:
        self._bump()
        if isinstance(p, bool):
            p = 1.0 if p else 0.0
        p = float(p)
        if math.isnan(p) or math.isinf(p) or p < 0.0:
            raise ValueError(f"evidence({p}) is not a finite nonnegative number")
        self.log_evidence += NEG_INF if p == 0.0 else math.log(p)

    def set_hypothesis(self, v) -> None:
        if isinstance(v, bool):
            v = 1.0 if v else 0.0
        self.hypothesis = float(v)


def _sort_key(choices: tuple[Value, ...]):
    return tuple((type(v).__name__, v) for v in choices)


def enumerate_paths(
    model: Callable[[ModelContext], None],
    max_paths: int = DEFAULT_MAX_PATHS,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> PathEnumeration:
    """Depth-first replay enumeration of every terminating path."""
    entries: list[PathEntry] = []
    stack: list[tuple[Value, ...]] = [()]
    while stack:
        prefix = stack.pop()
        run = _ForcedRun(prefix, max_events)
        try:
            model(run)  # type: ignore[arg-type]  # duck-typed ModelContext
        except _Branch as b:
            # Reverse push so support order is explored first.
            for v in reversed(b.prior.values):
                stack.append(prefix + (v,))
            continue
        except _EventCap:
            raise EnumerationCapError(
                f"a path exceeded {max_events} events; model too large for exact treatment"
            ) from None
        if run.pos != len(prefix):
            raise RuntimeError("model is not deterministic: fewer choices on replay")
        entries.append(
            PathEntry(prefix, run.log_prior, run.log_evidence, run.hypothesis, run.n_events)
        )
        if len(entries) > max_paths:
            raise EnumerationCapError(
                f"more than {max_paths} paths; model too large for exact treatment"
            )
    entries.sort(key=lambda e: _sort_key(e.choices))
    return PathEnumeration(model, tuple(entries), max_paths, max_events)


def exact_evidence(pe: PathEnumeration) -> float:
    """P(e) = sum over paths of P(x) P(e|x)."""
    return math.fsum(math.exp(e.log_prior + e.log_evidence) for e in pe.entries)


def exact_conditional_expectation(pe: PathEnumeration) -> float:
    """E(h | e) = sum P(x) P(e|x) h(x) / sum P(x) P(e|x)."""
    den = exact_evidence(pe)
    if den == 0.0:
        raise ConditioningOnNullError("evidence has probability zero")
    num = math.fsum(math.exp(e.log_prior + e.log_evidence) * e.hypothesis for e in pe.entries)
    return num / den


class _GuideReplay:
    """Replay one full path while querying the guide at each site,
    tracking log G(x), the per-event running free energy, the ceiling
    trigger, and leakage of guide mass onto prior-impossible values."""

    def __init__(self, guide: Guide, forced: tuple[Value, ...]):
        self.guide = guide
        self.forced = forced
        self.pos = 0
        self.history: list[Value] = []
        self.log_guide = 0.0
        self.fe = 0.0
        self.events = 0
        self.rejected = False
        self.events_observed: Optional[int] = None
        self.leaks = False  # guide mass on a prior-impossible value at a reachable site
        # (prefix, guide mass leaked there, events executed when it leaks);
        # shared prefixes repeat across paths and are deduplicated by callers.
        self.leak_events: list[tuple[tuple[Value, ...], float, int]] = []

    def _event(self, contribution: float):
        self.events += 1
        if self.rejected or self.log_guide == NEG_INF:
            return
        self.fe += contribution
        ceiling = self.guide.ceiling
        if ceiling is not None and self.fe > ceiling:
            self.rejected = True
            self.events_observed = self.events

    def choose(self, prior: Dist, label: Optional[str] = None) -> Value:
        v = self.forced[self.pos]
        self.pos += 1
        if self.log_guide == NEG_INF:
            # G never reaches this site; its behavior here is irrelevant
            # (and the guide need not even be defined for the prefix).
            self.history.append(v)
            self.events += 1
            return v
        site = ChoiceSite(self.pos - 1, label, prior, tuple(self.history), ())
        g = self.guide.propose(site)
        if g is None:
            g = prior
        if not self.rejected:
            leaked = math.fsum(gm for gv, gm in g if prior.prob(gv) == 0.0)
            if leaked > 0.0:
                self.leaks = True
                self.leak_events.append(
                    (tuple(self.history), math.exp(self.log_guide) * leaked, self.events + 1)
                )
        lg = g.log_prob(v)
        lp = prior.log_prob(v)
        self.history.append(v)
        if lg == NEG_INF:
            self.log_guide = NEG_INF
            self.events += 1
            return v
        self.log_guide += lg
        self._event(lg - lp)
        return v

    def evidence(self, p) -> None:
        if isinstance(p, bool):
            p = 1.0 if p else 0.0
        p = float(p)
        self._event(math.inf if p == 0.0 else -math.log(p))

    def set_hypothesis(self, v) -> None:
        pass


class _NoExtraGuideContext:
    def extra_choice(self, guide_dist, conditional):
        raise ExtraChoicesUnsupportedError(
            "exact evaluation does not support guides with extra choices"
        )


def _replay_guide(pe: PathEnumeration, guide: Guide, entry: PathEntry) -> _GuideReplay:
    replay = _GuideReplay(guide, entry.choices)
    guide.begin(_NoExtraGuideContext())  # type: ignore[arg-type]
    pe.model(replay)  # type: ignore[arg-type]
    if replay.events_observed is None:
        replay.events_observed = replay.events
    return replay


@dataclass(frozen=True, slots=True)
class ExactGuideReport:
    free_energy: float  # nats; +inf when G reaches zero-prior or zero-evidence paths
    kl: float  # D(G_x || P_x|e) = free_energy + log P(e)


def exact_free_energy(pe: PathEnumeration, guide: Guide) -> ExactGuideReport:
    """Exact F(G) = sum over G-reachable paths of G(x) (log(G(x)/P(x)) - log P(e|x)).

    Without rejection this is +inf whenever the guide gives positive mass
    to a prior-impossible value or to a path with zero evidence.
    """
    total = 0.0
    leak = False
    for entry in pe.entries:
        replay = _replay_guide(pe, guide, entry)
        if replay.leaks:
            leak = True
        lg = replay.log_guide
        if lg == NEG_INF:
            continue  # G never samples this path
        g = math.exp(lg)
        if entry.log_evidence == NEG_INF:
            total = math.inf
        else:
            total += g * (lg - entry.log_prior - entry.log_evidence)
        if total == math.inf:
            break
    fe = math.inf if leak else total
    evidence = exact_evidence(pe)
    if not math.isfinite(fe) or evidence == 0.0:
        kl = math.inf
    else:
        kl = fe + math.log(evidence)
    return ExactGuideReport(fe, kl)


@dataclass(frozen=True, slots=True)
class GuidedSamplingProfile:
    """Exact sampling behavior of a guide, rejection included."""

    acceptance_rate: float  # A(G): G-mass of runs that are never rejected
    adjusted_fe: float  # E[fe | accepted] - log A(G)
    mean_events_per_run: float  # expected choose+evidence events, truncation included
    free_energy: float  # unrejected F(G), as exact_free_energy
    kl: float


def exact_guided_profile(pe: PathEnumeration, guide: Guide) -> GuidedSamplingProfile:
    """Exact acceptance rate, rejection-adjusted free energy, and run cost.

    A path counts as rejected when its running free-energy sum ever
    exceeds the guide's ceiling (matching the runtime's event-order
    trigger); with no ceiling nothing is rejected and `adjusted_fe`
    equals the plain free energy.

    Guide mass leaked onto prior-impossible values gets +inf free energy
    at the leaking choice, so a ceiling rejects those runs right there and
    their cost is still exact.  Without a ceiling a leaky guide's
    `adjusted_fe` is +inf and its run cost is a lower bound (the model's
    behavior past a prior-impossible value is not enumerable).
    """
    acc_mass = 0.0
    acc_fe = 0.0
    mean_events = 0.0
    total = 0.0
    leak = False
    leak_seen: dict[tuple[Value, ...], tuple[float, int]] = {}
    for entry in pe.entries:
        replay = _replay_guide(pe, guide, entry)
        if replay.leaks:
            leak = True
        for prefix, mass, at_event in replay.leak_events:
            leak_seen.setdefault(prefix, (mass, at_event))
        lg = replay.log_guide
        if lg == NEG_INF:
            continue
        g = math.exp(lg)
        fe = replay.fe  # full-path fe when accepted; partial sum otherwise
        mean_events += g * replay.events_observed
        if not replay.rejected:
            acc_mass += g
            acc_fe += g * fe
            if fe == math.inf:
                acc_fe = math.inf
        if entry.log_evidence == NEG_INF:
            total = math.inf
        elif total != math.inf:
            total += g * (lg - entry.log_prior - entry.log_evidence)
    leak_mass = math.fsum(m for m, _ in leak_seen.values())
    mean_events += math.fsum(m * ev for m, ev in leak_seen.values())
    free_energy = math.inf if leak else total
    evidence = exact_evidence(pe)
    kl = math.inf if (not math.isfinite(free_energy) or evidence == 0.0) else free_energy + math.log(evidence)
    if guide.ceiling is None:
        # Nothing is ever rejected: leaked runs complete with +inf fe.
        acceptance = acc_mass + leak_mass
        adjusted = math.inf if leak else (acc_fe / acc_mass - math.log(acc_mass) if acc_mass else math.inf)
    else:
        acceptance = acc_mass
        adjusted = acc_fe / acc_mass - math.log(acc_mass) if acc_mass else math.inf
    return GuidedSamplingProfile(acceptance, adjusted, mean_events, free_energy, kl)
