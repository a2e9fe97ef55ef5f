"""Toy autoregressive token models with exact sequence distributions.

A model is a finite vocabulary (index 0 reserved for the EMPTY end marker),
a maximum length ``k``, and a next-token conditional family given either as
a full context table or as a bigram table with a unigram fallback. User
parameters reshape every next-token distribution in a fixed order:
temperature, then top-k, then top-p. Once EMPTY has been generated it
absorbs: all later positions are EMPTY under any parameters.

Sequences are handled internally in padded length-``k`` form. A model can
be compiled into a causal model whose variables are the prompt, one
variable per position, and the concatenated output; the compiled joint
reproduces the chain product exactly.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .dist import DistTable
from .errors import EnumerationCapError, InputError, ModelError
from .nondet import DEFAULT_ENUM_CAP, CausalGraph, Cpt, NondetModel, VarSpec
from .seeding import make_rng

EMPTY = "</e>"


@dataclass(frozen=True)
class Vocab:
    """Ordered token inventory; index 0 is the EMPTY marker."""

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise InputError("vocabulary must be nonempty")
        if len(set(self.tokens)) != len(self.tokens):
            raise InputError("vocabulary tokens must be distinct")

    @property
    def empty(self) -> str:
        return self.tokens[0]

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def real_tokens(self) -> tuple[str, ...]:
        return self.tokens[1:]

    def index(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise InputError(f"unknown token {token!r}") from None

    def seq(self, tokens: Iterable[str]) -> "TokenSeq":
        return TokenSeq(tuple(self.index(t) for t in tokens))

    def strings(self, seq: "TokenSeq") -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in seq.ids)


@dataclass(frozen=True)
class TokenSeq:
    """A token-id sequence in padded or unpadded form.

    Once the EMPTY id (0) appears, every later position must be EMPTY; the
    effective length is the position of the first EMPTY.
    """

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(self.ids))
        seen_empty = False
        for i in self.ids:
            if i < 0:
                raise InputError("token ids must be nonnegative")
            if seen_empty and i != 0:
                raise InputError("non-EMPTY token after EMPTY: sequence not in padded form")
            if i == 0:
                seen_empty = True

    @property
    def effective_len(self) -> int:
        for pos, i in enumerate(self.ids):
            if i == 0:
                return pos
        return len(self.ids)

    def stripped(self) -> "TokenSeq":
        return TokenSeq(self.ids[: self.effective_len])

    def padded(self, k: int) -> "TokenSeq":
        body = self.ids[: self.effective_len]
        if len(body) > k:
            raise InputError(f"sequence of length {len(body)} cannot pad to {k}")
        return TokenSeq(body + (0,) * (k - len(body)))

    def extends(self, prefix: "TokenSeq") -> bool:
        mine = self.stripped().ids
        theirs = prefix.stripped().ids
        return mine[: len(theirs)] == theirs

    @property
    def has_empty(self) -> bool:
        return 0 in self.ids

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class SamplingParams:
    """User-side reshaping knobs: temperature, top-k, top-p.

    Temperature 0 means exact argmax mode (lowest-index tie-break), handled
    as its own branch rather than a small-temperature limit.
    """

    temperature: float = 1.0
    top_k: int | None = None
    top_p: float | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0.0:
            raise InputError("temperature must be nonnegative")
        if self.top_k is not None and self.top_k < 1:
            raise InputError("top_k must be a positive integer")
        if self.top_p is not None and not (0.0 < self.top_p <= 1.0):
            raise InputError("top_p must lie in (0, 1]")

    @property
    def truncates(self) -> bool:
        return self.top_k is not None or self.top_p is not None


@dataclass(frozen=True)
class ToyLM:
    """Next-token conditional family over a fixed vocabulary.

    ``kind`` is "table" (context tuple -> distribution, total over every
    reachable EMPTY-free context of length < k) or "bigram" (last token ->
    distribution, with ``unigram`` covering the empty context).
    """

    vocab: Vocab
    k: int
    kind: str
    table: Mapping[tuple[str, ...], DistTable] | None = None
    bigram: Mapping[str, DistTable] | None = None
    unigram: DistTable | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InputError("k must be at least 1")
        if self.kind not in ("table", "bigram"):
            raise InputError(f"unknown model kind {self.kind!r}")
        if self.kind == "table" and self.table is None:
            raise ModelError("table model without a table")
        if self.kind == "bigram" and (self.bigram is None or self.unigram is None):
            raise ModelError("bigram model needs bigram rows and a unigram fallback")
        if self.table is not None:
            object.__setattr__(self, "table", dict(self.table))
        if self.bigram is not None:
            object.__setattr__(self, "bigram", dict(self.bigram))

    def base_dist(self, context: tuple[str, ...]) -> DistTable:
        """Unshaped next-token distribution; EMPTY contexts absorb."""
        if self.vocab.empty in context:
            return DistTable.point(self.vocab.empty)
        if self.kind == "table":
            row = self.table.get(context)
            if row is None:
                raise ModelError(f"no distribution for context {context!r}")
            return row
        if context:
            row = self.bigram.get(context[-1])
            if row is None:
                raise ModelError(f"no bigram row for token {context[-1]!r}")
            return row
        return self.unigram

    def seq_from_tokens(self, tokens: Iterable[str]) -> TokenSeq:
        return self.vocab.seq(tokens)


def _reshape_pairs(
    base: DistTable, order: Sequence[str], params: SamplingParams
) -> list[tuple[str, float]]:
    """Apply temperature, top-k, top-p in that order; each stage renormalizes.

    Returns (token, probability) pairs in vocabulary order, zeros included.
    """
    probs = [base.prob(t) for t in order]

    if params.temperature == 0.0:
        best = max(range(len(order)), key=lambda i: (probs[i], -i))
        return [(t, 1.0 if i == best else 0.0) for i, t in enumerate(order)]
    if params.temperature != 1.0:
        # p^(1/T) renormalized, in log space so tiny temperatures do not underflow
        inv = 1.0 / params.temperature
        logs = [math.log(p) if p > 0.0 else -math.inf for p in probs]
        top = max(logs)
        probs = [math.exp((lg - top) * inv) if lg > -math.inf else 0.0 for lg in logs]
        z = sum(probs)
        probs = [p / z for p in probs]

    if params.top_k is not None:
        ranked = sorted(range(len(order)), key=lambda i: (-probs[i], i))
        keep = set(ranked[: params.top_k])
        probs = [p if i in keep else 0.0 for i, p in enumerate(probs)]
        z = sum(probs)
        if z <= 0.0:
            raise ModelError("top-k removed all probability mass")
        probs = [p / z for p in probs]

    if params.top_p is not None:
        ranked = sorted(range(len(order)), key=lambda i: (-probs[i], i))
        keep: set[int] = set()
        acc = 0.0
        for i in ranked:
            if probs[i] <= 0.0:
                break
            keep.add(i)
            acc += probs[i]
            if acc >= params.top_p:
                break
        probs = [p if i in keep else 0.0 for i, p in enumerate(probs)]
        z = sum(probs)
        if z <= 0.0:
            raise ModelError("top-p removed all probability mass")
        probs = [p / z for p in probs]

    return list(zip(order, probs))


def next_pairs(
    lm: ToyLM, context: tuple[str, ...], params: SamplingParams
) -> list[tuple[str, float]]:
    """Reshaped next-token probabilities in vocabulary order (fast path)."""
    base = lm.base_dist(context)
    if lm.vocab.empty in context:
        return [(t, 1.0 if t == lm.vocab.empty else 0.0) for t in lm.vocab.tokens]
    return _reshape_pairs(base, lm.vocab.tokens, params)


def next_dist(lm: ToyLM, context: TokenSeq, params: SamplingParams) -> DistTable:
    """Distribution of the next token after ``context`` under ``params``.

    The context is taken literally: an EMPTY anywhere in it triggers the
    absorbing rule (strip prompts before querying if that is not intended).
    """
    if len(context.ids) >= lm.k:
        raise InputError(f"context length {len(context.ids)} >= k={lm.k}")
    ctx = lm.vocab.strings(context)
    return DistTable({t: p for t, p in next_pairs(lm, ctx, params)})


def _draw(pairs: Sequence[tuple[str, float]], u: float) -> str:
    """First token (vocabulary order) whose cumulative probability exceeds u."""
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
        raise ModelError("cannot draw from an all-zero distribution")
    return last_positive


def seq_dist(
    lm: ToyLM, x: TokenSeq, params: SamplingParams, cap: int = DEFAULT_ENUM_CAP
) -> DistTable:
    """Exact distribution over padded length-k outputs extending prompt ``x``."""
    prompt = lm.vocab.strings(x.stripped())
    if len(prompt) > lm.k:
        raise InputError(f"prompt longer than k={lm.k}")
    if lm.vocab.size ** (lm.k - len(prompt)) > cap:
        raise EnumerationCapError(f"instance too large: enumeration cap {cap} exceeded")
    entries: dict[TokenSeq, float] = {}

    def recurse(ctx: tuple[str, ...], prob: float) -> None:
        if len(ctx) == lm.k:
            entries[lm.vocab.seq(ctx).padded(lm.k)] = prob
            return
        if ctx and ctx[-1] == lm.vocab.empty:
            entries[lm.vocab.seq(ctx[:-1]).padded(lm.k)] = prob
            return
        for t, p in next_pairs(lm, ctx, params):
            if p > 0.0:
                recurse(ctx + (t,), prob * p)

    recurse(prompt, 1.0)
    return DistTable(entries)


def sample_output(lm: ToyLM, x: TokenSeq, params: SamplingParams, seed: int) -> TokenSeq:
    """One autoregressive draw; a pure function of (model, prompt, params, seed)."""
    rng = make_rng(seed)
    ctx = lm.vocab.strings(x.stripped())
    if len(ctx) > lm.k:
        raise InputError(f"prompt longer than k={lm.k}")
    while len(ctx) < lm.k:
        t = _draw(next_pairs(lm, ctx, params), rng.random())
        if t == lm.vocab.empty:
            break
        ctx = ctx + (t,)
    return lm.vocab.seq(ctx).padded(lm.k)


def zero_temp_fn(lm: ToyLM, x: TokenSeq) -> TokenSeq:
    """Greedy completion: argmax at every step, lowest vocabulary index on ties."""
    greedy = SamplingParams(temperature=0.0)
    ctx = lm.vocab.strings(x.stripped())
    if len(ctx) > lm.k:
        raise InputError(f"prompt longer than k={lm.k}")
    while len(ctx) < lm.k:
        pairs = next_pairs(lm, ctx, greedy)
        t = max(pairs, key=lambda tp: tp[1])[0]
        if t == lm.vocab.empty:
            break
        ctx = ctx + (t,)
    return lm.vocab.seq(ctx).padded(lm.k)


def compile_to_nondet(
    lm: ToyLM,
    prompt_len: int,
    params: SamplingParams,
    cap: int = DEFAULT_ENUM_CAP,
) -> NondetModel:
    """Unroll the model into a causal model for prompts of length ``prompt_len``.

    Variables: the prompt X (root; one value per EMPTY-free length-l
    sequence), positions T1..Tk, and the concatenation Y. T1..Tl copy the
    prompt, each later Ti draws from the reshaped next-token family given
    T1..Ti-1, and Y deterministically concatenates all positions.
    """
    l = prompt_len
    if not (0 <= l < lm.k):
        raise InputError(f"prompt length {l} must satisfy 0 <= l < k={lm.k}")
    n_prompts = len(lm.vocab.real_tokens) ** l
    n_rows = sum(lm.vocab.size ** (i - 1) for i in range(l + 1, lm.k + 1))
    n_rows += lm.vocab.size**lm.k
    if n_prompts > cap or n_rows > cap:
        raise EnumerationCapError(f"instance too large: enumeration cap {cap} exceeded")

    prompts = tuple(
        lm.vocab.seq(combo)
        for combo in itertools.product(lm.vocab.real_tokens, repeat=l)
    )
    t_names = tuple(f"T{i}" for i in range(1, lm.k + 1))
    vars_: list[VarSpec] = [VarSpec("X", prompts)]
    vars_ += [VarSpec(name, lm.vocab.tokens) for name in t_names]
    y_domain = tuple(TokenSeq(ids) for ids in _valid_padded_id_tuples(lm.vocab.size, lm.k))
    vars_ += [VarSpec("Y", y_domain)]

    edges: set[tuple[str, str]] = set()
    cpts: dict[str, Cpt] = {}
    for i, name in enumerate(t_names, start=1):
        if i <= l:
            edges.add(("X", name))
            rows = {
                (prompt,): DistTable.point(lm.vocab.tokens[prompt.ids[i - 1]])
                for prompt in prompts
            }
            cpts[name] = Cpt(name, ("X",), rows)
        else:
            parent_order = t_names[: i - 1]
            for p in parent_order:
                edges.add((p, name))
            rows = {}
            for combo in itertools.product(lm.vocab.tokens, repeat=i - 1):
                rows[combo] = DistTable(dict(next_pairs(lm, combo, params)))
            cpts[name] = Cpt(name, parent_order, rows)
    for p in t_names:
        edges.add((p, "Y"))
    y_rows: dict[tuple, DistTable] = {}
    for combo in itertools.product(lm.vocab.tokens, repeat=lm.k):
        y_rows[combo] = DistTable.point(_concat_padded(lm, combo))
    cpts["Y"] = Cpt("Y", t_names, y_rows)

    graph = CausalGraph.of([v.name for v in vars_], edges)
    return NondetModel(tuple(vars_), graph, cpts)


def _valid_padded_id_tuples(vocab_size: int, k: int) -> list[tuple[int, ...]]:
    """All padded-form id tuples of length k: an EMPTY-free body, then zeros."""
    out: list[tuple[int, ...]] = []
    for body_len in range(k + 1):
        for body in itertools.product(range(1, vocab_size), repeat=body_len):
            out.append(body + (0,) * (k - body_len))
    return out


def _concat_padded(lm: ToyLM, combo: tuple[str, ...]) -> TokenSeq:
    """Decode a raw position tuple: text ends at the first EMPTY."""
    ids: list[int] = []
    for t in combo:
        i = lm.vocab.index(t)
        if i == 0:
            break
        ids.append(i)
    return TokenSeq(tuple(ids)).padded(lm.k)


# --- JSON interchange -------------------------------------------------------
#
# {"vocab": ["</e>", "a", "b"], "k": 3, "type": "table",
#  "probs": {"": [...], "a": [...], "a b": [...]}}
#
# Table keys space-join the context tokens ("" for the empty context); each
# row lists probabilities in vocabulary order. Bigram models use
# {"probs": {"a": [...]}, "unigram": [...]} keyed by the last token.


def lm_to_json(lm: ToyLM) -> str:
    payload: dict = {"vocab": list(lm.vocab.tokens), "k": lm.k, "type": lm.kind}
    if lm.kind == "table":
        payload["probs"] = {
            " ".join(ctx): [row.prob(t) for t in lm.vocab.tokens]
            for ctx, row in sorted(lm.table.items())
        }
    else:
        payload["probs"] = {
            tok: [row.prob(t) for t in lm.vocab.tokens]
            for tok, row in sorted(lm.bigram.items())
        }
        payload["unigram"] = [lm.unigram.prob(t) for t in lm.vocab.tokens]
    return json.dumps(payload, indent=2, sort_keys=True)


def lm_from_json(text: str) -> ToyLM:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelError(f"bad model JSON: {e}") from e
    try:
        tokens = tuple(payload["vocab"])
        if not tokens or tokens[0] != EMPTY:
            raise ModelError(f"vocabulary must reserve index 0 for {EMPTY!r}")
        vocab = Vocab(tokens)
        k = int(payload["k"])
        kind = payload["type"]
        if kind == "table":
            table: dict[tuple[str, ...], DistTable] = {}
            for key, probs in payload["probs"].items():
                ctx = tuple(key.split()) if key else ()
                table[ctx] = _row_from_probs(vocab, key, probs)
            return ToyLM(vocab, k, "table", table=table)
        if kind == "bigram":
            bigram = {
                tok: _row_from_probs(vocab, tok, probs)
                for tok, probs in payload["probs"].items()
            }
            unigram = _row_from_probs(vocab, "<unigram>", payload["unigram"])
            return ToyLM(vocab, k, "bigram", bigram=bigram, unigram=unigram)
        raise ModelError(f"unknown model type {kind!r}")
    except (KeyError, TypeError) as e:
        raise ModelError(f"bad model JSON structure: {e!r}") from e


def _row_from_probs(vocab: Vocab, where: str, probs: list) -> DistTable:
    if len(probs) != vocab.size:
        raise ModelError(f"row {where!r} has {len(probs)} entries, expected {vocab.size}")
    total = sum(probs)
    if abs(total - 1.0) > 1e-9:
        raise ModelError(f"row {where!r} not normalized (sum={total!r})")
    if any(p < 0 for p in probs):
        raise ModelError(f"row {where!r} has a negative probability")
    return DistTable(dict(zip(vocab.tokens, probs)))
