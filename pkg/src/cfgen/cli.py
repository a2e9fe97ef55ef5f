"""Command-line surface.

Subcommands: validate, counterfactual, verify, bounds, compare. All output
is deterministic given the flags and seed (sorted JSON keys, derived
per-sample seeds, no wall-clock anywhere), so identical invocations produce
byte-identical files. Seeds are mandatory in sample mode; ambient state
never silently influences results.

Exit codes: 0 ok, 1 verification failure, 2 bad configuration or usage,
3 bad model or impossible evidence, 4 enumeration cap exceeded,
5 semantics undefined. The environment variable CFGEN_ENUM_CAP overrides
the default world cap.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .detscm import BinaryCfQuery, counterfactual_bounds_binary, simple_binary_answer
from .dist import DistTable, tvd
from .errors import (
    CfgenError,
    EnumerationCapError,
    InputError,
    ModelError,
    StableDistUndefinedError,
)
from .fixtures import asymmetric_lm, lm3_model, topk_violation_lm
from .generators import (
    CfQuery,
    FactualTrace,
    gumbel_cf_sample,
    gumbel_posterior_noise,
    its_cf_sample,
    its_posterior_noise,
    simple_cf_dist,
    simple_cf_sample,
    stable_cf_dist,
    trace_from_json,
)
from .nondet import DEFAULT_ENUM_CAP, model_from_json, validate_model
from .oracle import (
    VerificationReport,
    random_table_lm,
    sweep_det_nondet_equivalence,
    verify_canonical_binary,
    verify_compiled_simple_semantics,
    verify_gumbel_stability,
    verify_zero_temperature,
)
from .seeding import derive_seed, make_rng
from .tokenlm import SamplingParams, TokenSeq, ToyLM, lm_from_json

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_MODEL = 3
EXIT_CAP = 4
EXIT_UNDEFINED = 5

METHODS = ("simple", "gumbel", "its", "stable")
SUITES = ("thm1", "thm2", "corollary", "example1", "stability", "all")


@dataclass(frozen=True)
class RunConfig:
    """Validated options for the counterfactual command."""

    model_path: str
    prompt: str
    cf_prompt: str
    method: str
    exact: bool
    samples: int | None
    seed: int | None
    factual_output: str | None
    trace_path: str | None
    params: SamplingParams
    fmt: str

    def validate(self) -> None:
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}")
        if self.exact and self.samples is not None:
            raise InputError("exact mode does not take --samples")
        if not self.exact:
            if self.samples is None or self.samples < 1:
                raise InputError("sample mode needs --samples >= 1")
            if self.seed is None:
                raise InputError("sample mode needs an explicit --seed")
        if self.method in ("gumbel", "its"):
            if self.exact:
                raise InputError(f"{self.method} has no exact mode; use --samples")
            if self.factual_output is None and self.trace_path is None:
                raise InputError(f"{self.method} needs --factual-output or --trace")
            if self.trace_path is not None and self.samples != 1:
                raise InputError("a stored trace is one deterministic replay; use --samples 1")
        if self.method == "stable" and self.factual_output is None:
            raise InputError("stable needs --factual-output")
        if self.fmt not in ("json", "tsv"):
            raise InputError(f"unknown format {self.fmt!r}")


def _enum_cap() -> int:
    raw = os.environ.get("CFGEN_ENUM_CAP")
    if raw is None:
        return DEFAULT_ENUM_CAP
    try:
        cap = int(raw)
    except ValueError:
        raise InputError(f"CFGEN_ENUM_CAP must be an integer, got {raw!r}") from None
    if cap < 1:
        raise InputError("CFGEN_ENUM_CAP must be positive")
    return cap


def _load_lm(path: str) -> ToyLM:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"model file not found: {path}")
    return lm_from_json(p.read_text())


def _parse_seq(lm: ToyLM, text: str, what: str) -> TokenSeq:
    tokens = text.split()
    if not tokens:
        raise InputError(f"{what} must contain at least one token")
    seq = lm.vocab.seq(tokens)
    if seq.has_empty:
        raise InputError(f"{what} must not contain the EMPTY token")
    return seq


def _parse_output(lm: ToyLM, text: str) -> TokenSeq:
    tokens = text.split()
    return lm.vocab.seq(tokens).padded(lm.k)


def _render_seq(lm: ToyLM, seq: TokenSeq) -> str:
    return " ".join(lm.vocab.strings(seq.stripped()))


def _dist_payload(lm: ToyLM, d: DistTable) -> dict[str, float]:
    return {
        _render_seq(lm, seq): p
        for seq, p in sorted(d.entries.items(), key=lambda kv: kv[0].ids)
    }


def _emit(payload: dict, fmt: str, out: str | None) -> None:
    if fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        lines = []
        table = payload.get("dist") or payload.get("empirical") or {}
        for key, p in table.items():
            lines.append(f"{key}\t{p!r}")
        for draw in payload.get("draws", []):
            lines.append(f"draw\t{draw}")
        text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- subcommands ---------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    p = Path(args.model)
    if not p.is_file():
        raise InputError(f"model file not found: {args.model}")
    report = validate_model(model_from_json(p.read_text()))
    _emit(report.to_dict(), "json", args.out)
    return EXIT_OK if report.ok else EXIT_MODEL


def _sample_table(lm: ToyLM, draws: list[TokenSeq]) -> dict[str, float]:
    counts: dict[str, int] = {}
    for s in draws:
        key = _render_seq(lm, s)
        counts[key] = counts.get(key, 0) + 1
    n = len(draws)
    return {k: c / n for k, c in sorted(counts.items())}


def _draw_from_table(d: DistTable, u: float) -> TokenSeq:
    acc = 0.0
    last = None
    for seq, p in sorted(d.entries.items(), key=lambda kv: kv[0].ids):
        if p <= 0.0:
            continue
        acc += p
        last = seq
        if acc > u:
            return seq
    if last is None:
        raise ModelError("cannot draw from an empty table")
    return last


def cmd_counterfactual(args: argparse.Namespace) -> int:
    cfg = RunConfig(
        model_path=args.model,
        prompt=args.prompt,
        cf_prompt=args.cf_prompt,
        method=args.method,
        exact=args.exact,
        samples=args.samples,
        seed=args.seed,
        factual_output=args.factual_output,
        trace_path=args.trace,
        params=SamplingParams(args.temperature, args.top_k, args.top_p),
        fmt=args.format,
    )
    cfg.validate()
    cap = _enum_cap()
    lm = _load_lm(cfg.model_path)
    x = _parse_seq(lm, cfg.prompt, "--prompt")
    x_star = _parse_seq(lm, cfg.cf_prompt, "--cf-prompt")
    y = _parse_output(lm, cfg.factual_output) if cfg.factual_output else None

    payload: dict = {
        "method": cfg.method,
        "mode": "exact" if cfg.exact else "sample",
        "prompt": cfg.prompt,
        "cf_prompt": cfg.cf_prompt,
        "factual_output": cfg.factual_output,
        "params": {
            "temperature": cfg.params.temperature,
            "top_k": cfg.params.top_k,
            "top_p": cfg.params.top_p,
        },
        "seed": cfg.seed,
    }

    if cfg.exact:
        if cfg.method == "simple":
            dist = simple_cf_dist(lm, CfQuery(x, x, x_star), cfg.params, cap)
        else:
            dist = stable_cf_dist(lm, CfQuery(x, y, x_star), cfg.params, cap)
        payload["dist"] = _dist_payload(lm, dist)
        _emit(payload, cfg.fmt, args.out)
        return EXIT_OK

    draws: list[TokenSeq] = []
    n = cfg.samples
    if cfg.method == "simple":
        q = CfQuery(x, x, x_star)
        draws = [simple_cf_sample(lm, q, cfg.params, derive_seed(cfg.seed, i)) for i in range(n)]
    elif cfg.method == "stable":
        dist = stable_cf_dist(lm, CfQuery(x, y, x_star), cfg.params, cap)
        rng = make_rng(cfg.seed)
        draws = [_draw_from_table(dist, rng.random()) for _ in range(n)]
    else:
        trace: FactualTrace | None = None
        if cfg.trace_path is not None:
            tp = Path(cfg.trace_path)
            if not tp.is_file():
                raise InputError(f"trace file not found: {cfg.trace_path}")
            trace = trace_from_json(lm, tp.read_text())
            if trace.x != x.stripped():
                raise InputError("--prompt does not match the trace's factual prompt")
        for i in range(n):
            seed_i = derive_seed(cfg.seed, i)
            if cfg.method == "gumbel":
                t = trace or gumbel_posterior_noise(lm, x, y, cfg.params, seed_i)
                draws.append(gumbel_cf_sample(lm, t, x_star, cfg.params))
            else:
                t = trace or its_posterior_noise(lm, x, y, cfg.params, seed_i)
                draws.append(its_cf_sample(lm, t, x_star, cfg.params))
    payload["draws"] = [_render_seq(lm, s) for s in draws]
    payload["empirical"] = _sample_table(lm, draws)
    _emit(payload, cfg.fmt, args.out)
    return EXIT_OK


def cmd_bounds(args: argparse.Namespace) -> int:
    query = BinaryCfQuery.parse(args.query)
    result = counterfactual_bounds_binary(args.p, args.q, query)
    answer = simple_binary_answer(args.p, args.q, query)
    payload = result.to_dict()
    payload["query"] = args.query
    payload["resampling_answer"] = answer
    payload["resampling_answer_within_bounds"] = bool(result.lo <= answer <= result.hi)
    payload["positivity"] = {
        "arg_lo": "boundary (non-positive)" if 0.0 in result.arg_lo else "positive",
        "arg_hi": "boundary (non-positive)" if 0.0 in result.arg_hi else "positive",
    }
    _emit(payload, "json", args.out)
    return EXIT_OK


def _verify_reports(suite: str, seed: int) -> list[VerificationReport]:
    reports: list[VerificationReport] = []
    lm3 = lm3_model()
    if suite in ("thm1", "all"):
        reports.append(sweep_det_nondet_equivalence(50, seed=derive_seed(seed, 1)))
    if suite in ("thm2", "all"):
        reports.append(verify_compiled_simple_semantics(lm3, SamplingParams(), 1))
        reports.append(verify_compiled_simple_semantics(lm3, SamplingParams(), 2))
        for i, temp in enumerate((0.5, 1.0, 2.0)):
            lm = random_table_lm(make_rng(derive_seed(seed, 10 + i)), 3, 3)
            reports.append(
                verify_compiled_simple_semantics(lm, SamplingParams(temperature=temp), 1)
            )
    if suite in ("corollary", "all"):
        reports.append(verify_zero_temperature(lm3, 1))
        lm = random_table_lm(make_rng(derive_seed(seed, 20)), 3, 3)
        reports.append(verify_zero_temperature(lm, 1))
    if suite in ("example1", "all"):
        reports.append(verify_canonical_binary())
    if suite in ("stability", "all"):
        asym = asymmetric_lm()
        reports.append(
            verify_gumbel_stability(
                asym,
                asym.vocab.seq(["p"]),
                asym.vocab.seq(["q"]),
                n_traces=10_000,
                seed=derive_seed(seed, 30),
            )
        )
        topk = topk_violation_lm()
        reports.append(
            verify_gumbel_stability(
                topk,
                topk.vocab.seq(["p"]),
                topk.vocab.seq(["q"]),
                n_traces=2_000,
                seed=derive_seed(seed, 31),
                cf_params=SamplingParams(top_k=1),
            )
        )
    return reports


def cmd_verify(args: argparse.Namespace) -> int:
    reports = _verify_reports(args.suite, args.seed)
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in reports]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY_FAILED


def cmd_compare(args: argparse.Namespace) -> int:
    if args.seed is None:
        raise InputError("compare needs an explicit --seed")
    cap = _enum_cap()
    lm = _load_lm(args.model)
    params = SamplingParams(args.temperature, args.top_k, args.top_p)
    x = _parse_seq(lm, args.prompt, "--prompt")
    x_star = _parse_seq(lm, args.cf_prompt, "--cf-prompt")
    if args.factual_output is None:
        raise InputError("compare needs --factual-output")
    y = _parse_output(lm, args.factual_output)
    q = CfQuery(x, y, x_star)
    n = args.samples

    tables: dict[str, DistTable] = {}
    exactness: dict[str, str] = {}
    tables["simple"] = simple_cf_dist(lm, q, params, cap)
    exactness["simple"] = "exact"
    tables["stable"] = stable_cf_dist(lm, q, params, cap)
    exactness["stable"] = "exact"

    gumbel_draws = []
    its_draws = []
    for i in range(n):
        seed_i = derive_seed(args.seed, i)
        t = gumbel_posterior_noise(lm, x, y, params, seed_i)
        gumbel_draws.append(gumbel_cf_sample(lm, t, x_star, params))
        t2 = its_posterior_noise(lm, x, y, params, derive_seed(args.seed, n + i))
        its_draws.append(its_cf_sample(lm, t2, x_star, params))
    tables["gumbel"] = DistTable.from_counts(
        {s: gumbel_draws.count(s) for s in set(gumbel_draws)}
    )
    exactness["gumbel"] = f"empirical (n={n})"
    tables["its"] = DistTable.from_counts({s: its_draws.count(s) for s in set(its_draws)})
    exactness["its"] = f"empirical (n={n})"

    names = ("simple", "gumbel", "its", "stable")
    pairwise = {
        f"{a}|{b}": tvd(tables[a], tables[b])
        for i, a in enumerate(names)
        for b in names[i:]
    }
    payload = {
        "prompt": args.prompt,
        "cf_prompt": args.cf_prompt,
        "factual_output": args.factual_output,
        "n": n,
        "seed": args.seed,
        "estimator": exactness,
        "tvd": pairwise,
        "dists": {name: _dist_payload(lm, t) for name, t in tables.items()},
    }
    _emit(payload, "json", args.out)
    return EXIT_OK


# --- wiring ----------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfgen",
        description="Exact counterfactual generation for toy autoregressive token models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a causal-model file")
    p_val.add_argument("--model", required=True)
    p_val.add_argument("--out")

    p_cf = sub.add_parser("counterfactual", help="generate counterfactual outputs")
    p_cf.add_argument("--model", required=True)
    p_cf.add_argument("--prompt", required=True)
    p_cf.add_argument("--cf-prompt", required=True)
    p_cf.add_argument("--method", required=True, choices=METHODS)
    p_cf.add_argument("--exact", action="store_true")
    p_cf.add_argument("--samples", type=int)
    p_cf.add_argument("--seed", type=int)
    p_cf.add_argument("--factual-output")
    p_cf.add_argument("--trace")
    p_cf.add_argument("--temperature", type=float, default=1.0)
    p_cf.add_argument("--top-k", type=int)
    p_cf.add_argument("--top-p", type=float)
    p_cf.add_argument("--format", choices=("json", "tsv"), default="json")
    p_cf.add_argument("--out")

    p_ver = sub.add_parser("verify", help="run the claim-verification suites")
    p_ver.add_argument("--suite", required=True, choices=SUITES)
    p_ver.add_argument("--seed", type=int, default=20240501)
    p_ver.add_argument("--out")

    p_b = sub.add_parser("bounds", help="identification bounds for the binary model")
    p_b.add_argument("--p", type=float, required=True)
    p_b.add_argument("--q", type=float, required=True)
    p_b.add_argument("--query", required=True, help='e.g. "Y*=0|Y=1,X=1,X*=0"')
    p_b.add_argument("--out")

    p_cmp = sub.add_parser("compare", help="pairwise distances between the methods")
    p_cmp.add_argument("--model", required=True)
    p_cmp.add_argument("--prompt", required=True)
    p_cmp.add_argument("--cf-prompt", required=True)
    p_cmp.add_argument("--factual-output")
    p_cmp.add_argument("--samples", type=int, default=10_000)
    p_cmp.add_argument("--seed", type=int)
    p_cmp.add_argument("--temperature", type=float, default=1.0)
    p_cmp.add_argument("--top-k", type=int)
    p_cmp.add_argument("--top-p", type=float)
    p_cmp.add_argument("--out")

    return parser


_DISPATCH = {
    "validate": cmd_validate,
    "counterfactual": cmd_counterfactual,
    "verify": cmd_verify,
    "bounds": cmd_bounds,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _DISPATCH[args.command](args)
    except InputError as e:
        print(f"error (config): {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as e:
        print(f"error (model): {e}", file=sys.stderr)
        return EXIT_MODEL
    except EnumerationCapError as e:
        print(f"error (cap): {e}", file=sys.stderr)
        return EXIT_CAP
    except StableDistUndefinedError as e:
        print(f"error (undefined): {e}", file=sys.stderr)
        return EXIT_UNDEFINED
    except CfgenError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
