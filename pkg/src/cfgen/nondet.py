"""Nondeterministic causal models over finite domains.

A model is an acyclic directed graph plus one conditional probability table
per non-root variable; root variables carry no marginal and every query
conditions on a total root assignment. Probabilities are read as genuine
chance, not ignorance of a hidden mechanism.

Counterfactual queries clamp the roots to an alternative assignment while
keeping what the actual world revealed: a mechanism whose parents retain
their actual values must reproduce its actual output, and every other
mechanism falls back to its prior table. Two independent evaluators are
provided: ``counterfactual_dist`` routes through an explicitly updated
model, ``counterfactual_dist_cases`` evaluates a closed-form case analysis
world by world. The two must agree to 1e-12 everywhere; tests sweep this.

All values are immutable after construction and all operations are pure,
so models can be shared freely across threads.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Hashable, Iterable, Iterator, Mapping

from .dist import DistTable
from .errors import EnumerationCapError, InputError, ModelError

DEFAULT_ENUM_CAP = 10_000_000

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class VarSpec:
    """A named variable with a fixed, totally ordered finite domain.

    The domain order is load-bearing: it breaks argmax ties and fixes the
    inverse-transform ordering downstream.
    """

    name: str
    domain: tuple[Hashable, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "domain", tuple(self.domain))

    def index(self, value: Hashable) -> int:
        try:
            return self.domain.index(value)
        except ValueError:
            raise InputError(f"value {value!r} not in domain of {self.name}") from None


@dataclass(frozen=True)
class CausalGraph:
    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", frozenset(self.nodes))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))

    @classmethod
    def of(cls, nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> "CausalGraph":
        return cls(frozenset(nodes), frozenset(edges))

    def parents(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(a for a, b in self.edges if b == node))

    def children(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(b for a, b in self.edges if a == node))

    @property
    def roots(self) -> frozenset[str]:
        with_parents = {b for _, b in self.edges}
        return frozenset(self.nodes - with_parents)

    def topological_order(self) -> tuple[str, ...]:
        """Kahn's algorithm with name-sorted tie-breaking; raises on cycles."""
        indeg = {n: 0 for n in self.nodes}
        for _, b in self.edges:
            indeg[b] += 1
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self.children(n):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort()
        if len(order) != len(self.nodes):
            raise ModelError("graph contains a cycle")
        return tuple(order)

    @property
    def is_acyclic(self) -> bool:
        try:
            self.topological_order()
            return True
        except ModelError:
            return False


@dataclass(frozen=True)
class Cpt:
    """Conditional probability table for one child variable.

    ``rows`` maps a tuple of parent values (in ``parent_order``) to a
    distribution over the child's domain. Point-mass rows are permitted;
    they mark deterministic mechanisms.
    """

    child: str
    parent_order: tuple[str, ...]
    rows: Mapping[tuple[Hashable, ...], DistTable]

    def __post_init__(self) -> None:
        object.__setattr__(self, "parent_order", tuple(self.parent_order))
        object.__setattr__(self, "rows", dict(self.rows))

    def row(self, parent_values: tuple[Hashable, ...]) -> DistTable:
        try:
            return self.rows[parent_values]
        except KeyError:
            raise ModelError(
                f"no row for parents {self.parent_order!r} = {parent_values!r} of {self.child}"
            ) from None


@dataclass(frozen=True)
class World:
    """An assignment of values to variables, canonically ordered and hashable."""

    items: tuple[tuple[str, Hashable], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(sorted(self.items, key=lambda kv: kv[0])))

    @classmethod
    def of(cls, assignment: Mapping[str, Hashable]) -> "World":
        return cls(tuple(assignment.items()))

    def __getitem__(self, name: str) -> Hashable:
        for k, v in self.items:
            if k == name:
                return v
        raise KeyError(name)

    def get(self, name: str, default: Hashable = None) -> Hashable:
        for k, v in self.items:
            if k == name:
                return v
        return default

    @property
    def names(self) -> frozenset[str]:
        return frozenset(k for k, _ in self.items)

    def as_dict(self) -> dict[str, Hashable]:
        return dict(self.items)

    def restrict(self, names: Iterable[str]) -> "World":
        keep = set(names)
        return World(tuple((k, v) for k, v in self.items if k in keep))

    def extends(self, sub: "World") -> bool:
        mine = self.as_dict()
        return all(k in mine and mine[k] == v for k, v in sub.items)

    def values_at(self, names: Iterable[str]) -> tuple[Hashable, ...]:
        mine = self.as_dict()
        return tuple(mine[n] for n in names)


@dataclass(frozen=True)
class NondetModel:
    """Finite nondeterministic causal model: variables, DAG, one CPT per non-root."""

    vars: tuple[VarSpec, ...]
    graph: CausalGraph
    cpts: Mapping[str, Cpt]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vars", tuple(self.vars))
        object.__setattr__(self, "cpts", dict(self.cpts))

    def var(self, name: str) -> VarSpec:
        for v in self.vars:
            if v.name == name:
                return v
        raise ModelError(f"unknown variable {name!r}")

    def domain(self, name: str) -> tuple[Hashable, ...]:
        return self.var(name).domain

    @property
    def var_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.vars)

    @property
    def roots(self) -> tuple[str, ...]:
        root_set = self.graph.roots
        return tuple(v.name for v in self.vars if v.name in root_set)

    @property
    def non_roots(self) -> tuple[str, ...]:
        root_set = self.graph.roots
        return tuple(v.name for v in self.vars if v.name not in root_set)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    problems: tuple[str, ...]
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"ok": self.ok, "problems": list(self.problems), "notes": list(self.notes)}


@dataclass(frozen=True)
class SimpleSemanticsReport:
    """Outcome of the exhaustive simple-semantics check on one model."""

    passed: bool
    checked: int
    max_deviation: float
    counterexample: dict | None

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checked": self.checked,
            "max_deviation": self.max_deviation,
            "counterexample": self.counterexample,
        }


def validate_model(m: NondetModel) -> ValidationReport:
    """Report-style structural check: acyclicity, domains, CPT completeness.

    Never raises; each violation is listed with its location so malformed
    models can be inspected.
    """
    problems: list[str] = []
    notes: list[str] = []

    names = [v.name for v in m.vars]
    if len(set(names)) != len(names):
        problems.append("duplicate variable names")
    if set(names) != set(m.graph.nodes):
        problems.append("graph nodes do not match variable names")

    for v in m.vars:
        if len(v.domain) < 1:
            problems.append(f"{v.name}: empty domain")
        if len(set(v.domain)) != len(v.domain):
            problems.append(f"{v.name}: duplicate domain values")

    if not m.graph.is_acyclic:
        problems.append("cycle in graph")
        return ValidationReport(False, tuple(problems), tuple(notes))

    roots = set(m.graph.roots)
    for v in m.vars:
        if v.name in roots:
            if v.name in m.cpts:
                problems.append(f"{v.name}: root variable must not carry a table")
            if not m.graph.children(v.name):
                notes.append(f"{v.name}: childless root (copied through by counterfactuals)")
            continue
        cpt = m.cpts.get(v.name)
        if cpt is None:
            problems.append(f"{v.name}: missing table")
            continue
        if cpt.child != v.name:
            problems.append(f"{v.name}: table child mismatch ({cpt.child})")
        if set(cpt.parent_order) != set(m.graph.parents(v.name)):
            problems.append(f"{v.name}: table parents do not match graph parents")
            continue
        try:
            parent_domains = [m.domain(p) for p in cpt.parent_order]
        except ModelError:
            problems.append(f"{v.name}: table parent not a model variable")
            continue
        expected = set(itertools.product(*parent_domains))
        got = set(cpt.rows)
        if got != expected:
            problems.append(
                f"{v.name}: rows cover {len(got)} of {len(expected)} parent combinations"
            )
        child_domain = set(v.domain)
        deterministic = 0
        for key, row in cpt.rows.items():
            if not set(row.entries) <= child_domain:
                problems.append(f"{v.name}: row {key!r} has outcomes outside the domain")
            if abs(row.total - 1.0) > ROW_SUM_TOL:
                problems.append(f"{v.name}: row {key!r} not normalized (sum={row.total!r})")
            elif row.is_point_mass:
                deterministic += 1
        if deterministic:
            notes.append(f"{v.name}: {deterministic} of {len(cpt.rows)} rows deterministic")
    for extra in set(m.cpts) - set(names):
        problems.append(f"{extra}: table for unknown variable")

    return ValidationReport(not problems, tuple(problems), tuple(notes))


def _require_total(m: NondetModel, v: World) -> None:
    if v.names != frozenset(m.var_names):
        missing = frozenset(m.var_names) - v.names
        extra = v.names - frozenset(m.var_names)
        raise InputError(f"world not total (missing {sorted(missing)}, extra {sorted(extra)})")


def _require_roots(m: NondetModel, r: World) -> None:
    if r.names != frozenset(m.roots):
        raise InputError(f"expected an assignment to exactly the roots {m.roots!r}")
    for name in m.roots:
        m.var(name).index(r[name])


def joint_prob(m: NondetModel, v: World, r: World) -> float:
    """Probability of the total world ``v`` conditional on its root values ``r``.

    The product of one table entry per non-root variable; roots contribute
    no factor because they carry no marginal.
    """
    _require_total(m, v)
    _require_roots(m, r)
    if not v.extends(r):
        raise InputError("world is inconsistent with the given root assignment")
    p = 1.0
    for name in m.non_roots:
        cpt = m.cpts.get(name)
        if cpt is None:
            raise ModelError(f"{name}: missing table")
        row = cpt.row(v.values_at(cpt.parent_order))
        p *= row.prob(v[name])
        if p == 0.0:
            return 0.0
    return p


def evidence_update(m: NondetModel, v: World) -> NondetModel:
    """Fold the observed world into the tables.

    For each non-root variable, the row at its actual parent values becomes
    a point mass on its actual value; every other row is left untouched.
    Idempotent, and an error when ``v`` has zero probability.
    """
    _require_total(m, v)
    r = v.restrict(m.roots)
    if joint_prob(m, v, r) <= 0.0:
        raise ModelError("impossible evidence: observed world has zero probability")
    new_cpts: dict[str, Cpt] = {}
    for name, cpt in m.cpts.items():
        actual_pa = v.values_at(cpt.parent_order)
        rows = dict(cpt.rows)
        rows[actual_pa] = DistTable.point(v[name])
        new_cpts[name] = Cpt(cpt.child, cpt.parent_order, rows)
    return NondetModel(m.vars, m.graph, new_cpts)


def _positive_worlds(
    m: NondetModel, clamp: World, cap: int
) -> Iterator[tuple[World, float]]:
    """Yield every positive-probability total world extending ``clamp``.

    Forward enumeration in topological order, branching only on values with
    positive table probability. Raises ``EnumerationCapError`` once more
    than ``cap`` partial assignments have been expanded.
    """
    order = m.graph.topological_order()
    roots = set(m.roots)
    assignment: dict[str, Hashable] = {}
    visited = 0

    def recurse(i: int, prob: float) -> Iterator[tuple[World, float]]:
        nonlocal visited
        if i == len(order):
            yield World.of(assignment), prob
            return
        name = order[i]
        visited += 1
        if visited > cap:
            raise EnumerationCapError(f"instance too large: enumeration cap {cap} exceeded")
        if name in roots:
            assignment[name] = clamp[name]
            yield from recurse(i + 1, prob)
            del assignment[name]
            return
        cpt = m.cpts.get(name)
        if cpt is None:
            raise ModelError(f"{name}: missing table")
        row = cpt.row(tuple(assignment[p] for p in cpt.parent_order))
        for value, p in row.items():
            if p <= 0.0:
                continue
            assignment[name] = value
            yield from recurse(i + 1, prob * p)
            del assignment[name]

    yield from recurse(0, 1.0)


def counterfactual_dist(
    m: NondetModel, v: World, r_star: World, cap: int = DEFAULT_ENUM_CAP
) -> DistTable:
    """Exact counterfactual distribution over total worlds, given evidence ``v``
    and the alternative root assignment ``r_star``.

    Computed by evidence-updating the model and enumerating the updated
    joint with roots clamped to ``r_star``. Support only contains worlds
    extending ``r_star``.
    """
    _require_roots(m, r_star)
    updated = evidence_update(m, v)
    entries = {w: p for w, p in _positive_worlds(updated, r_star, cap)}
    return DistTable(entries)


def counterfactual_case_prob(m: NondetModel, v: World, r_star: World, v_star: World) -> float:
    """Single-world counterfactual probability via the four-case closed form.

    Cases, in order: the clamped roots must hold in the candidate world; a
    non-root whose parents all keep their actual values must keep its actual
    value; if no non-root sees changed parents the candidate gets the whole
    mass; otherwise the prior table entries of the changed-parent variables
    multiply.
    """
    _require_total(m, v)
    _require_total(m, v_star)
    if not v_star.extends(r_star):
        return 0.0
    changed: list[str] = []
    for name in m.non_roots:
        cpt = m.cpts[name]
        pa_actual = v.values_at(cpt.parent_order)
        pa_star = v_star.values_at(cpt.parent_order)
        if pa_star == pa_actual:
            if v_star[name] != v[name]:
                return 0.0
        else:
            changed.append(name)
    if not changed:
        return 1.0
    p = 1.0
    for name in changed:
        cpt = m.cpts[name]
        p *= cpt.row(v_star.values_at(cpt.parent_order)).prob(v_star[name])
        if p == 0.0:
            return 0.0
    return p


def counterfactual_dist_cases(
    m: NondetModel, v: World, r_star: World, cap: int = DEFAULT_ENUM_CAP
) -> DistTable:
    """Same distribution as ``counterfactual_dist``, by the per-world case form.

    Deliberately takes the slow route (full product space over non-root
    domains, no model rewriting) so the two evaluators stay independent.
    """
    _require_total(m, v)
    _require_roots(m, r_star)
    r = v.restrict(m.roots)
    if joint_prob(m, v, r) <= 0.0:
        raise ModelError("impossible evidence: observed world has zero probability")
    non_roots = m.non_roots
    size = 1
    for name in non_roots:
        size *= len(m.domain(name))
        if size > cap:
            raise EnumerationCapError(f"instance too large: enumeration cap {cap} exceeded")
    base = r_star.as_dict()
    entries: dict[World, float] = {}
    for combo in itertools.product(*(m.domain(name) for name in non_roots)):
        candidate = dict(base)
        candidate.update(zip(non_roots, combo))
        w = World.of(candidate)
        p = counterfactual_case_prob(m, v, r_star, w)
        if p > 0.0:
            entries[w] = p
    return DistTable(entries)


def _root_assignments(m: NondetModel) -> Iterator[World]:
    domains = [m.domain(name) for name in m.roots]
    for combo in itertools.product(*domains):
        yield World.of(dict(zip(m.roots, combo)))


def check_simple_semantics(
    m: NondetModel, cap: int = DEFAULT_ENUM_CAP, tol: float = 1e-12
) -> SimpleSemanticsReport:
    """Exhaustively test whether counterfactuals collapse to resampling.

    For every positive-probability total world ``v`` and every root
    assignment differing from the actual one, compares the counterfactual
    distribution against the plain conditional distribution at the
    alternative roots. Returns the first counterexample when they differ.
    """
    max_dev = 0.0
    checked = 0
    priors: dict[World, DistTable] = {}
    for r in _root_assignments(m):
        priors[r] = DistTable(dict(_positive_worlds(m, r, cap)))
    for r in _root_assignments(m):
        for v, _ in priors[r].items():
            for r_star in _root_assignments(m):
                if r_star == r:
                    continue
                cf = counterfactual_dist(m, v, r_star, cap)
                prior = priors[r_star]
                outcomes = set(cf.entries) | set(prior.entries)
                checked += 1
                for w in outcomes:
                    dev = abs(cf.prob(w) - prior.prob(w))
                    max_dev = max(max_dev, dev)
                    if dev > tol:
                        return SimpleSemanticsReport(
                            False,
                            checked,
                            max_dev,
                            {
                                "v": v.as_dict(),
                                "r_star": r_star.as_dict(),
                                "v_star": w.as_dict(),
                                "counterfactual": cf.prob(w),
                                "resampled": prior.prob(w),
                            },
                        )
    return SimpleSemanticsReport(True, checked, max_dev, None)


# --- JSON interchange -------------------------------------------------------
#
# {"vars": [{"name": "X", "domain": ["0", "1"]}],
#  "edges": [["X", "Y"]],
#  "cpts": {"Y": {"parents": ["X"], "rows": {"0": [0.3, 0.7]}}}}
#
# Row keys comma-join the parent values in the declared parent order; row
# values list probabilities in the child's domain order.


def model_to_json(m: NondetModel) -> str:
    payload = {
        "vars": [{"name": v.name, "domain": list(v.domain)} for v in m.vars],
        "edges": sorted([a, b] for a, b in m.graph.edges),
        "cpts": {
            name: {
                "parents": list(cpt.parent_order),
                "rows": {
                    ",".join(str(x) for x in key): [
                        row.prob(val) for val in m.domain(name)
                    ]
                    for key, row in sorted(cpt.rows.items(), key=lambda kv: repr(kv[0]))
                },
            }
            for name, cpt in sorted(m.cpts.items())
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def model_from_json(text: str) -> NondetModel:
    """Parse the interchange format; rejects rows whose sum is off by > 1e-9."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelError(f"bad model JSON: {e}") from e
    try:
        vars_ = tuple(VarSpec(v["name"], tuple(v["domain"])) for v in payload["vars"])
        graph = CausalGraph.of(
            [v.name for v in vars_], [(a, b) for a, b in payload["edges"]]
        )
        domains = {v.name: v.domain for v in vars_}
        cpts: dict[str, Cpt] = {}
        for child, block in payload.get("cpts", {}).items():
            parents = tuple(block["parents"])
            rows: dict[tuple, DistTable] = {}
            for key, probs in block["rows"].items():
                values = tuple(key.split(",")) if key else ()
                if len(values) != len(parents):
                    raise ModelError(f"{child}: row key {key!r} does not match parents")
                if child not in domains:
                    raise ModelError(f"table for unknown variable {child!r}")
                if len(probs) != len(domains[child]):
                    raise ModelError(f"{child}: row {key!r} has wrong arity")
                total = sum(probs)
                if abs(total - 1.0) > ROW_SUM_TOL:
                    raise ModelError(f"{child}: row {key!r} not normalized (sum={total!r})")
                rows[values] = DistTable(dict(zip(domains[child], probs)))
            cpts[child] = Cpt(child, parents, rows)
    except (KeyError, TypeError) as e:
        raise ModelError(f"bad model JSON structure: {e!r}") from e
    return NondetModel(vars_, graph, cpts)
