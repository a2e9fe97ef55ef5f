"""Counterfactual generators for toy token models.

Four ways to answer "what might the output have been under prompt x*,
having observed (x, y)":

* simple: rerun the model at x*; the factual pair is ignored. This is the
  resampling semantics that the compiled causal model provably satisfies.
* gumbel: record (or reconstruct in hindsight) per-position max-perturbation
  noise that explains y, then reuse it at x*. Replaying the factual prompt
  reproduces y exactly; flipped prompts are biased toward staying close.
* its: same reuse pattern with inverse-transform noise, one uniform per
  position consumed in the fixed vocabulary order.
* stable: the exact distribution of the closeness-biased semantics, built
  position by position. A token is excluded at a position when the observed
  token gained at least as much relative probability as it did.

Noise is indexed by position and reused across contexts, so counterfactual
prompts must have the factual prompt's length. All samplers are pure
functions of (model, inputs, params, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

from .dist import DistTable
from .errors import EnumerationCapError, InputError, ModelError, StableDistUndefinedError
from .nondet import DEFAULT_ENUM_CAP
from .seeding import make_rng
from .tokenlm import SamplingParams, TokenSeq, ToyLM, next_pairs, sample_output, seq_dist

_UNIFORM_FLOOR = 1e-300
_UNIFORM_CEIL = 1.0 - 1e-16


@dataclass(frozen=True)
class CfQuery:
    """Factual prompt and output plus the counterfactual prompt."""

    x: TokenSeq
    y: TokenSeq
    x_star: TokenSeq

    def __post_init__(self) -> None:
        if not self.y.extends(self.x):
            raise InputError("factual output must extend the factual prompt")


@dataclass(frozen=True)
class NoiseRecord:
    """Per-position exogenous noise: one Gumbel vector or one uniform each.

    ``kind`` is "gumbel" (entries are length-|V| tuples) or "uniform"
    (entries are floats in [0, 1)). One entry per position 1..k, prompt
    positions included for uniformity even though nothing consumes them.
    """

    kind: str
    entries: tuple

    def __post_init__(self) -> None:
        if self.kind not in ("gumbel", "uniform"):
            raise InputError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "entries", tuple(
            tuple(e) if self.kind == "gumbel" else float(e) for e in self.entries
        ))


@dataclass(frozen=True)
class FactualTrace:
    """A factual run: prompt, output, recorded noise, and the params used.

    Invariant (enforced by the constructors in this module): replaying the
    noise on the factual prompt regenerates the output exactly.
    """

    x: TokenSeq
    y: TokenSeq
    noise: NoiseRecord
    params: SamplingParams


@dataclass(frozen=True)
class PositionCheck:
    position: int
    factual_token: str
    chosen_token: str
    excluded: tuple[str, ...]
    violation: bool


@dataclass(frozen=True)
class StabilityReport:
    """Per-position exclusion sets and violation flags for one candidate output."""

    positions: tuple[PositionCheck, ...]
    violations: int
    checked: int

    def to_dict(self) -> dict:
        return {
            "violations": self.violations,
            "checked": self.checked,
            "positions": [
                {
                    "position": c.position,
                    "factual_token": c.factual_token,
                    "chosen_token": c.chosen_token,
                    "excluded": list(c.excluded),
                    "violation": c.violation,
                }
                for c in self.positions
            ],
        }


# --- simple ------------------------------------------------------------------


def simple_cf_sample(lm: ToyLM, q: CfQuery, params: SamplingParams, seed: int) -> TokenSeq:
    """One draw from the resampling semantics: run the model again at x*."""
    return sample_output(lm, q.x_star, params, seed)


def simple_cf_dist(
    lm: ToyLM, q: CfQuery, params: SamplingParams, cap: int = DEFAULT_ENUM_CAP
) -> DistTable:
    """Exact resampling distribution: the sequence law at the new prompt."""
    return seq_dist(lm, q.x_star, params, cap)


# --- shared helpers -----------------------------------------------------------


def _require_prompt(lm: ToyLM, x: TokenSeq) -> int:
    l = x.effective_len
    if l >= lm.k:
        raise InputError(f"prompt length {l} must be below k={lm.k}")
    return l


def _require_aligned(lm: ToyLM, x: TokenSeq, x_star: TokenSeq) -> int:
    l = _require_prompt(lm, x)
    if x_star.effective_len != l:
        raise InputError(
            f"length mismatch: counterfactual prompt has {x_star.effective_len} tokens, "
            f"factual prompt has {l}"
        )
    return l


def _std_gumbel(u: float) -> float:
    u = min(max(u, _UNIFORM_FLOOR), _UNIFORM_CEIL)
    return -math.log(-math.log(u))


def _gumbel_argmax(
    pairs: Sequence[tuple[str, float]], gumbels: Sequence[float]
) -> tuple[int, str]:
    best_i, best_score = -1, -math.inf
    for i, (t, p) in enumerate(pairs):
        if p <= 0.0:
            continue
        score = math.log(p) + gumbels[i]
        if score > best_score:
            best_i, best_score = i, score
    if best_i < 0:
        raise ModelError("cannot take an argmax over an all-zero distribution")
    return best_i, pairs[best_i][0]


def _factual_contexts(lm: ToyLM, y: TokenSeq) -> list[tuple[str, ...]]:
    """Padded-output prefixes: contexts y[:0], y[:1], ..., y[:k-1]."""
    tokens = lm.vocab.strings(y.padded(lm.k))
    return [tokens[:i] for i in range(lm.k)]


# --- gumbel ------------------------------------------------------------------


def gumbel_factual_run(
    lm: ToyLM,
    x: TokenSeq,
    params: SamplingParams,
    seed: int,
    allow_truncation: bool = False,
) -> tuple[TokenSeq, FactualTrace]:
    """Sample an output by per-position max-perturbation noise and record it.

    Truncation parameters void the closeness guarantee of the reused noise,
    so they are rejected unless explicitly allowed for diagnostics.
    """
    if params.truncates and not allow_truncation:
        raise InputError("top_k/top_p break noise-reuse stability; pass allow_truncation=True")
    rng = make_rng(seed)
    l = _require_prompt(lm, x)
    entries: list[tuple[float, ...]] = []
    ctx = lm.vocab.strings(x.stripped())
    for pos in range(1, lm.k + 1):
        g = tuple(_std_gumbel(rng.random()) for _ in range(lm.vocab.size))
        entries.append(g)
        if pos <= l:
            continue
        # once EMPTY lands in the context, the point-mass row keeps it EMPTY
        _, tok = _gumbel_argmax(next_pairs(lm, ctx, params), g)
        ctx = ctx + (tok,)
    y = lm.vocab.seq(_truncate_at_empty(lm, ctx)).padded(lm.k)
    trace = FactualTrace(x.stripped(), y, NoiseRecord("gumbel", tuple(entries)), params)
    return y, trace


def gumbel_posterior_noise(
    lm: ToyLM,
    x: TokenSeq,
    y: TokenSeq,
    params: SamplingParams,
    seed: int,
    allow_truncation: bool = False,
) -> FactualTrace:
    """Hindsight noise for an externally observed output.

    Per position, samples the Gumbel vector conditioned on the observed
    token winning the perturbed argmax: the winner's perturbed value is the
    overall max, every other positive-probability token is truncated below
    it, and zero-probability tokens are unconstrained.
    """
    if params.truncates and not allow_truncation:
        raise InputError("top_k/top_p break noise-reuse stability; pass allow_truncation=True")
    rng = make_rng(seed)
    l = _require_prompt(lm, x)
    yp = y.padded(lm.k)
    if not yp.extends(x):
        raise InputError("observed output must extend the prompt")
    tokens = lm.vocab.strings(yp)
    contexts = _factual_contexts(lm, yp)
    entries: list[tuple[float, ...]] = []
    for pos in range(1, lm.k + 1):
        if pos <= l:
            entries.append(tuple(_std_gumbel(rng.random()) for _ in range(lm.vocab.size)))
            continue
        pairs = next_pairs(lm, contexts[pos - 1], params)
        observed = tokens[pos - 1]
        obs_i = lm.vocab.index(observed)
        p_obs = pairs[obs_i][1]
        if p_obs <= 0.0:
            raise ModelError(
                f"observed output has zero probability at position {pos} (token {observed!r})"
            )
        z = sum(p for _, p in pairs)
        top = _std_gumbel(rng.random()) + math.log(z)
        noise = [0.0] * len(pairs)
        for i, (_, p) in enumerate(pairs):
            if i == obs_i:
                noise[i] = top - math.log(p_obs)
            elif p <= 0.0:
                noise[i] = _std_gumbel(rng.random())
            else:
                u = min(max(rng.random(), _UNIFORM_FLOOR), _UNIFORM_CEIL)
                # Gumbel(log p) truncated below `top`, then shifted back to noise
                perturbed = math.log(p) - math.log(math.exp(math.log(p) - top) - math.log(u))
                if perturbed >= top:
                    perturbed = top - 1e-12
                noise[i] = perturbed - math.log(p)
        entries.append(tuple(noise))
    return FactualTrace(x.stripped(), yp, NoiseRecord("gumbel", tuple(entries)), params)


def gumbel_cf_sample(
    lm: ToyLM,
    trace: FactualTrace,
    x_star: TokenSeq,
    params: SamplingParams | None = None,
) -> TokenSeq:
    """Reuse the recorded noise at the counterfactual prompt.

    Noise is indexed by position, not by context: position i's Gumbel vector
    perturbs the next-token law at whatever counterfactual context has been
    built by then. With params omitted, the factual run's params apply.
    """
    if trace.noise.kind != "gumbel":
        raise InputError("trace does not carry gumbel noise")
    params = trace.params if params is None else params
    l = _require_aligned(lm, trace.x, x_star)
    ctx = lm.vocab.strings(x_star.stripped())
    for pos in range(l + 1, lm.k + 1):
        g = trace.noise.entries[pos - 1]
        _, tok = _gumbel_argmax(next_pairs(lm, ctx, params), g)
        ctx = ctx + (tok,)
    return lm.vocab.seq(_truncate_at_empty(lm, ctx)).padded(lm.k)


def _truncate_at_empty(lm: ToyLM, ctx: tuple[str, ...]) -> tuple[str, ...]:
    out: list[str] = []
    for t in ctx:
        if t == lm.vocab.empty:
            break
        out.append(t)
    return tuple(out)


# --- inverse transform --------------------------------------------------------


def _its_token(pairs: Sequence[tuple[str, float]], u: float) -> str:
    acc = 0.0
    last_positive = None
    for t, p in pairs:
        if p <= 0.0:
            continue
        acc += p
        last_positive = t
        if acc > u:
            return t
    if last_positive is None:
        raise ModelError("cannot sample from an all-zero distribution")
    return last_positive


def its_factual_run(
    lm: ToyLM, x: TokenSeq, params: SamplingParams, seed: int
) -> tuple[TokenSeq, FactualTrace]:
    """Sample an output with one uniform per position and record the uniforms."""
    rng = make_rng(seed)
    l = _require_prompt(lm, x)
    ctx = lm.vocab.strings(x.stripped())
    entries: list[float] = []
    for pos in range(1, lm.k + 1):
        u = rng.random()
        entries.append(u)
        if pos <= l:
            continue
        tok = _its_token(next_pairs(lm, ctx, params), u)
        ctx = ctx + (tok,)
    y = lm.vocab.seq(_truncate_at_empty(lm, ctx)).padded(lm.k)
    trace = FactualTrace(x.stripped(), y, NoiseRecord("uniform", tuple(entries)), params)
    return y, trace


def its_posterior_noise(
    lm: ToyLM, x: TokenSeq, y: TokenSeq, params: SamplingParams, seed: int
) -> FactualTrace:
    """Hindsight uniforms for an observed output.

    The uniform at each position is conditioned into the cumulative window
    of the observed token (vocabulary order), which is exactly its posterior.
    """
    rng = make_rng(seed)
    l = _require_prompt(lm, x)
    yp = y.padded(lm.k)
    if not yp.extends(x):
        raise InputError("observed output must extend the prompt")
    tokens = lm.vocab.strings(yp)
    contexts = _factual_contexts(lm, yp)
    entries: list[float] = []
    for pos in range(1, lm.k + 1):
        if pos <= l:
            entries.append(rng.random())
            continue
        pairs = next_pairs(lm, contexts[pos - 1], params)
        observed = tokens[pos - 1]
        lo = 0.0
        width = 0.0
        for t, p in pairs:
            if p <= 0.0:
                continue
            if t == observed:
                width = p
                break
            lo += p
        if width <= 0.0:
            raise ModelError(
                f"observed output has zero probability at position {pos} (token {observed!r})"
            )
        u = lo + rng.random() * width
        if u >= lo + width:  # float round-up would spill into the next token
            u = math.nextafter(lo + width, lo)
        entries.append(u)
    return FactualTrace(x.stripped(), yp, NoiseRecord("uniform", tuple(entries)), params)


def its_cf_sample(
    lm: ToyLM,
    trace: FactualTrace,
    x_star: TokenSeq,
    params: SamplingParams | None = None,
) -> TokenSeq:
    """Reuse the recorded uniforms at the counterfactual prompt."""
    if trace.noise.kind != "uniform":
        raise InputError("trace does not carry uniform noise")
    params = trace.params if params is None else params
    l = _require_aligned(lm, trace.x, x_star)
    ctx = lm.vocab.strings(x_star.stripped())
    for pos in range(l + 1, lm.k + 1):
        u = trace.noise.entries[pos - 1]
        tok = _its_token(next_pairs(lm, ctx, params), u)
        ctx = ctx + (tok,)
    return lm.vocab.seq(_truncate_at_empty(lm, ctx)).padded(lm.k)


# --- counterfactually stable distribution -------------------------------------


def _ratio(p_cf: float, p_factual: float) -> float:
    """Relative probability gain with the boundary conventions.

    Zero counterfactual mass maps to 0 (exclusion is harmless there); fresh
    mass on a factually impossible token maps to +inf (never excluded).
    """
    if p_cf <= 0.0:
        return 0.0
    if p_factual <= 0.0:
        return math.inf
    return p_cf / p_factual


def excluded_tokens(
    factual: Sequence[tuple[str, float]],
    cf: Sequence[tuple[str, float]],
    factual_token: str,
) -> frozenset[str]:
    """Tokens barred at one position: those whose relative gain does not beat
    the observed token's."""
    probs_f = dict(factual)
    probs_c = dict(cf)
    r_obs = _ratio(probs_c.get(factual_token, 0.0), probs_f.get(factual_token, 0.0))
    out = set()
    for t, pc in probs_c.items():
        if t == factual_token:
            continue
        if r_obs >= _ratio(pc, probs_f.get(t, 0.0)):
            out.add(t)
    return frozenset(out)


def stable_step_dist(
    factual: Sequence[tuple[str, float]],
    cf: Sequence[tuple[str, float]],
    factual_token: str,
) -> DistTable:
    """One position of the closeness-biased semantics: restrict the
    counterfactual law to the non-excluded tokens and renormalize."""
    barred = excluded_tokens(factual, cf, factual_token)
    kept = {t: p for t, p in cf if p > 0.0 and t not in barred}
    mass = sum(kept.values())
    if mass <= 0.0:
        raise StableDistUndefinedError(
            f"no probability mass left after excluding {sorted(barred)!r}"
        )
    return DistTable({t: p / mass for t, p in kept.items()})


def stable_cf_dist(
    lm: ToyLM,
    q: CfQuery,
    params: SamplingParams,
    cap: int = DEFAULT_ENUM_CAP,
) -> DistTable:
    """Exact closeness-biased counterfactual distribution over padded outputs.

    Chains ``stable_step_dist`` over positions: the factual side of each
    ratio is pinned to the observed output's prefix, while the
    counterfactual prefix is built recursively along each branch. The
    output always extends x*; with x* = x it collapses to a point mass on y.
    """
    l = _require_aligned(lm, q.x, q.x_star)
    yp = q.y.padded(lm.k)
    y_tokens = lm.vocab.strings(yp)
    factual_ctxs = _factual_contexts(lm, yp)
    factual_pairs = [next_pairs(lm, c, params) for c in factual_ctxs]
    for pos in range(l + 1, lm.k + 1):
        if dict(factual_pairs[pos - 1]).get(y_tokens[pos - 1], 0.0) <= 0.0:
            raise ModelError(
                f"factual output has zero probability at position {pos} under these params"
            )

    entries: dict[TokenSeq, float] = {}
    if lm.vocab.size ** (lm.k - l) > cap:
        raise EnumerationCapError(f"instance too large: enumeration cap {cap} exceeded")

    def recurse(ctx: tuple[str, ...], pos: int, prob: float) -> None:
        if pos > lm.k or (ctx and ctx[-1] == lm.vocab.empty):
            seq = lm.vocab.seq(_truncate_at_empty(lm, ctx)).padded(lm.k)
            entries[seq] = entries.get(seq, 0.0) + prob
            return
        cf_pairs = next_pairs(lm, _truncate_at_empty(lm, ctx), params)
        step = stable_step_dist(factual_pairs[pos - 1], cf_pairs, y_tokens[pos - 1])
        for t, p in step.items():
            if p > 0.0:
                recurse(ctx + (t,), pos + 1, prob * p)

    recurse(lm.vocab.strings(q.x_star.stripped()), l + 1, 1.0)
    return DistTable(entries)


def stability_check(
    lm: ToyLM,
    q: CfQuery,
    y_star: TokenSeq,
    params: SamplingParams,
) -> StabilityReport:
    """Flag, per generated position, whether the candidate output picked a
    token the closeness-biased semantics would have excluded."""
    l = _require_aligned(lm, q.x, q.x_star)
    yp = q.y.padded(lm.k)
    ysp = y_star.padded(lm.k)
    if not ysp.extends(q.x_star):
        raise InputError("candidate output must extend the counterfactual prompt")
    y_tokens = lm.vocab.strings(yp)
    ys_tokens = lm.vocab.strings(ysp)
    factual_ctxs = _factual_contexts(lm, yp)
    cf_ctxs = _factual_contexts(lm, ysp)
    checks: list[PositionCheck] = []
    violations = 0
    for pos in range(l + 1, lm.k + 1):
        f_pairs = next_pairs(lm, factual_ctxs[pos - 1], params)
        c_pairs = next_pairs(lm, cf_ctxs[pos - 1], params)
        barred = excluded_tokens(f_pairs, c_pairs, y_tokens[pos - 1])
        chosen = ys_tokens[pos - 1]
        bad = chosen in barred
        if bad:
            violations += 1
        checks.append(
            PositionCheck(pos, y_tokens[pos - 1], chosen, tuple(sorted(barred)), bad)
        )
    return StabilityReport(tuple(checks), violations, len(checks))


# --- trace files ---------------------------------------------------------------
#
# {"x": ["a"], "y": ["a", "b"], "kind": "gumbel", "noise": [[...], ...],
#  "params": {"temperature": 1.0, "top_k": null, "top_p": null}}
#
# Token lists are unpadded strings; gumbel noise is one list of |V| floats
# per position, uniform noise one float per position. JSON float text is the
# shortest round-trip form, so traces reload bit-exactly.


def trace_to_json(lm: ToyLM, trace: FactualTrace) -> str:
    payload = {
        "x": list(lm.vocab.strings(trace.x.stripped())),
        "y": list(lm.vocab.strings(trace.y.stripped())),
        "kind": trace.noise.kind,
        "noise": [list(e) if trace.noise.kind == "gumbel" else e for e in trace.noise.entries],
        "params": {
            "temperature": trace.params.temperature,
            "top_k": trace.params.top_k,
            "top_p": trace.params.top_p,
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def trace_from_json(lm: ToyLM, text: str) -> FactualTrace:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"bad trace JSON: {e}") from e
    try:
        x = lm.vocab.seq(payload["x"])
        y = lm.vocab.seq(payload["y"]).padded(lm.k)
        kind = payload["kind"]
        noise = NoiseRecord(kind, tuple(payload["noise"]))
        if len(noise.entries) != lm.k:
            raise InputError(f"trace has {len(noise.entries)} noise entries, expected {lm.k}")
        if kind == "gumbel" and any(len(e) != lm.vocab.size for e in noise.entries):
            raise InputError("gumbel noise vectors must match the vocabulary size")
        pp = payload["params"]
        params = SamplingParams(pp["temperature"], pp["top_k"], pp["top_p"])
    except (KeyError, TypeError) as e:
        raise InputError(f"bad trace JSON structure: {e!r}") from e
    return FactualTrace(x, y, noise, params)
