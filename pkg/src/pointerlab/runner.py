"""Scenario execution and report building.

``run`` turns a parsed Scenario into a Report holding plain data: query
results with probabilities quantized to 12 significant digits.  Both the
human-readable table and the structured JSON document render from the same
Report values, so every printed number agrees between the two formats.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import ExecutionError, PointerLabError
from .hilbert import SubsystemLayout, make_state
from .measurement import Basis, OutcomeDistribution
from .decomposition import Decomposition, rewrite, triortho_verdict
from .experiment import (
    CertaintyVerdict,
    CoupleStep,
    EnvironmentModel,
    GroupStep,
    PremeasureStep,
    Proposition,
    ProtocolTranscript,
    VectorTerms,
    certainty,
    consistency_audit,
    decoherence_compare,
)
from . import scenario as sc

DEFAULT_ZERO_TOL = 1e-12


def _q(x: float, zero_tol: float) -> float:
    """Quantize to 12 significant digits; clamp |x| below zero_tol to 0."""
    x = float(x)
    if abs(x) < zero_tol:
        return 0.0
    return float(f"{x:.12g}")


def _pair(c: complex, zero_tol: float) -> list[float]:
    return [_q(c.real, zero_tol), _q(c.imag, zero_tol)]


def _matrix_rows(m: np.ndarray, zero_tol: float) -> list[list[list[float]]]:
    return [[_pair(complex(v), zero_tol) for v in row] for row in m]


@dataclass(frozen=True)
class Report:
    """Per-query results plus a provenance block echoing the scenario hash."""

    scenario_hash: str
    action_count: int
    query_count: int
    results: tuple[dict[str, Any], ...]

    def to_structured(self) -> dict[str, Any]:
        return {
            "provenance": {
                "scenario_sha256": self.scenario_hash,
                "actions": self.action_count,
                "queries": self.query_count,
            },
            "results": list(self.results),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_structured(), indent=2)

    def to_table(self) -> str:
        lines: list[str] = []
        lines.append(f"scenario sha256: {self.scenario_hash}")
        lines.append(f"actions: {self.action_count}   queries: {self.query_count}")
        for i, res in enumerate(self.results, start=1):
            lines.append("")
            lines.append(f"-- query {i}: {res['kind']} --")
            lines.extend(_table_lines(res))
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return repr(x)


def _fmt_pair(p: Sequence[float]) -> str:
    if p[1] == 0.0:
        return _fmt(p[0])
    sign = "+" if p[1] >= 0 else "-"
    return f"{_fmt(p[0])}{sign}{_fmt(abs(p[1]))}i"


def _dist_lines(dist: list[dict[str, Any]], indent: str = "  ") -> list[str]:
    width = max((len(", ".join(d["outcome"])) for d in dist), default=8)
    width = max(width, len("outcome"))
    lines = [f"{indent}{'outcome'.ljust(width)}  probability"]
    for d in dist:
        lines.append(f"{indent}{', '.join(d['outcome']).ljust(width)}  {_fmt(d['probability'])}")
    return lines


def _table_lines(res: dict[str, Any]) -> list[str]:
    kind = res["kind"]
    if kind == "born":
        return _dist_lines(res["distribution"])
    if kind == "certainty":
        lines = [
            f"  observer={res['observer']} outcome={res['outcome']} prop=\"{res['prop']}\"",
            f"  semantics={res['semantics']}  verdict: {res['verdict']}",
            "  conditional:",
        ]
        lines.extend(_dist_lines(res["conditional"], "    "))
        for ev in res["evidence"]:
            lines.append(f"  model {ev['model']}:")
            lines.extend(_dist_lines(ev["distribution"], "    "))
        return lines
    if kind == "rewrite":
        width = max((len(", ".join(t["labels"])) for t in res["terms"]), default=9)
        width = max(width, len("component"))
        lines = [f"  {'component'.ljust(width)}  coefficient"]
        for t in res["terms"]:
            lines.append(f"  {', '.join(t['labels']).ljust(width)}  {_fmt_pair(t['coefficient'])}")
        return lines
    if kind == "triortho":
        lines = [f"  verdict: {res['verdict']}"]
        for name in ("canonical", "witness"):
            dec = res.get(name)
            if not dec:
                continue
            lines.append(f"  {name}:")
            for t in dec["terms"]:
                factors = "  x  ".join(
                    "[" + ", ".join(_fmt_pair(a) for a in f) + "]" for f in t["factors"]
                )
                lines.append(f"    {_fmt_pair(t['coefficient'])}  *  {factors}")
        return lines
    if kind == "decoherence_compare":
        lines = [
            f"  pointer mixtures differ on the full registers: "
            f"max |difference| = {_fmt(res['full_max_difference'])}",
            f"  restrictions (spin traced out) equal: {res['restriction_equal']} "
            f"(max |difference| = {_fmt(res['restriction_max_difference'])})",
            f"  branch weights: coarse ({', '.join(_fmt(w) for w in res['branch_weights']['coarse'])}), "
            f"fine ({', '.join(_fmt(w) for w in res['branch_weights']['fine'])})",
            "  apparatus marginal (coarse):",
        ]
        lines.extend(_dist_lines(res["apparatus_marginal"]["coarse"], "    "))
        lines.append("  apparatus marginal (fine):")
        lines.extend(_dist_lines(res["apparatus_marginal"]["fine"], "    "))
        return lines
    if kind == "consistency_audit":
        pre = res["premeasurement"]
        dec = res["decoherent"]
        lines = ["  premeasurement semantics:"]
        for st in pre["statements"]:
            lines.append(f"    {st['name']}: {st['verdict']} "
                         f"(p = {_fmt(st['probability'])})")
        claimed = pre["claimed_probability"]
        lines.append(f"    chain derivable: {pre['chain_derivable']}; "
                     f"claimed p(okbar,ok) = "
                     f"{_fmt(claimed) if claimed is not None else 'underivable'}")
        lines.append(f"    computed p(okbar,ok) = {_fmt(pre['computed_probability'])}")
        lines.append(f"    contradiction: {pre['contradiction']}")
        lines.append(f"  decoherent semantics (models: {', '.join(dec['models'])}):")
        lines.append(f"    statement-1 verdict: {dec['statement_1_verdict']}")
        lines.append(f"    contradiction: {dec['contradiction']}")
        return lines
    return [f"  {res}"]


# --------------------------------------------------------------------------
# Scenario execution
# --------------------------------------------------------------------------


class _DerivedRegistry:
    def __init__(self, layout_decls, derived_decls):
        self.labels = {d.name: d.labels for d in layout_decls}
        self.derived: dict[tuple[str, str], tuple[tuple[str, complex], ...]] = {}
        self.derived_order: dict[str, list[str]] = {}
        for d in derived_decls:
            self.add(d)

    def add(self, d: sc.DerivedDecl) -> None:
        self.derived[(d.subsystem, d.label)] = d.terms
        self.derived_order.setdefault(d.subsystem, []).append(d.label)

    def register_group(self, name: str, labels: tuple[str, ...]) -> None:
        self.labels[name] = labels

    def expand(self, sub: str, label: str) -> tuple[tuple[str, complex], ...]:
        if label in self.labels.get(sub, ()):
            return ((label, 1.0 + 0.0j),)
        terms = self.derived.get((sub, label))
        if terms is None:
            raise ExecutionError(f"unknown label {label!r} on subsystem {sub!r}")
        return terms

    def vector_terms(self, targets: Sequence[str], terms: Sequence[sc.StateTerm]
                     ) -> VectorTerms:
        """Expand derived labels in a multi-register expression."""
        import itertools

        acc: dict[tuple[str, ...], complex] = {}
        for term in terms:
            expansions = [self.expand(t, lab) for t, lab in zip(targets, term.labels)]
            for combo in itertools.product(*expansions):
                labels = tuple(lab for lab, _ in combo)
                coeff = term.coefficient
                for _, c in combo:
                    coeff *= c
                acc[labels] = acc.get(labels, 0.0 + 0.0j) + coeff
        return tuple(acc.items())

    def basis_item_terms(self, sub: str, item: sc.BasisItem) -> tuple[str, VectorTerms]:
        if isinstance(item, str):
            expanded = tuple(((lab,), c) for lab, c in self.expand(sub, item))
            return item, expanded
        labels = self.labels[sub]
        terms = tuple(
            ((labels[i],), c) for i, c in enumerate(item) if c != 0
        )
        return "", terms


def _build_basis(layout: SubsystemLayout, name: str, labels: Sequence[str],
                 registry: _DerivedRegistry) -> Basis:
    sub = layout.sublayout([name])
    vectors = []
    for lab in labels:
        terms = registry.expand(name, lab)
        vectors.append(make_state(sub, [((l,), c) for l, c in terms]))
    return Basis(tuple(labels), tuple(vectors))


def run(scenario: sc.Scenario, source_text: str | None = None,
        zero_tol: float = DEFAULT_ZERO_TOL, triortho_restarts: int = 1000) -> Report:
    """Execute a scenario: apply its actions in order, answer its queries.

    Deterministic: identical input yields byte-identical structured output.
    Module errors propagate as ExecutionError annotated with the failing
    action or query index.
    """
    text = source_text if source_text is not None else sc.serialize_scenario(scenario)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()

    layout = SubsystemLayout.of(*((d.name, d.labels) for d in scenario.subsystems))
    registry = _DerivedRegistry(scenario.subsystems, scenario.derived)

    names = [d.name for d in scenario.subsystems]
    state_terms = registry.vector_terms(names, scenario.state_terms)
    initial = make_state(layout, state_terms)

    named_steps = []
    action_index = 0
    apparatus_actions: dict[str, sc.PremeasureAction] = {}
    for step in scenario.steps:
        if isinstance(step, sc.DerivedDecl):
            registry.add(step)
            continue
        action_index += 1
        if isinstance(step, sc.PremeasureAction):
            apparatus_actions[step.apparatus] = step
            labels = []
            vec_terms = []
            for k, item in enumerate(step.basis):
                lab, terms = registry.basis_item_terms(step.target, item)
                labels.append(lab or f"b{k}")
                vec_terms.append(terms)
            named_steps.append((
                f"after-{step.apparatus}",
                PremeasureStep(step.target, tuple(labels), tuple(vec_terms),
                               step.apparatus, step.ready, step.outcomes),
            ))
        elif isinstance(step, sc.GroupAction):
            from .hilbert import Subsystem, _merged_labels

            parts = [Subsystem(p, tuple(registry.labels[p])) for p in step.parts]
            registry.register_group(step.new_name,
                                    _merged_labels(parts, dict(step.label_map)))
            named_steps.append((
                f"group-{step.new_name}",
                GroupStep(step.parts, step.new_name, step.label_map),
            ))
        elif isinstance(step, sc.CoupleAction):
            branch_terms = tuple(
                registry.vector_terms(step.targets, b) for b in step.branches
            )
            named_steps.append((
                f"couple-{step.environment}",
                CoupleStep(step.environment, step.targets, branch_terms),
            ))

    # Apply actions one by one so failures carry the action index.
    from .experiment import Stage, apply_step

    stages = [Stage("initial", initial)]
    steps: list = [None]
    state = initial
    for i, (nm, stp) in enumerate(named_steps, start=1):
        try:
            state = apply_step(state, stp)
        except PointerLabError as inner:
            raise ExecutionError(f"action {i} ({nm}): {inner}") from inner
        stages.append(Stage(nm, state))
        steps.append(stp)
    transcript = ProtocolTranscript(tuple(stages), tuple(steps))

    # Register grouped-subsystem labels so queries can expand derived labels.
    for st in transcript.stages:
        for sub in st.state.layout.subsystems:
            registry.labels.setdefault(sub.name, sub.labels)

    models = {
        m.name: EnvironmentModel(
            m.name, m.targets,
            tuple(registry.vector_terms(m.targets, b) for b in m.branches),
        )
        for m in scenario.models
    }

    results = []
    for qi, query in enumerate(scenario.queries, start=1):
        try:
            results.append(
                _run_query(query, transcript, registry, apparatus_actions, models,
                           zero_tol, triortho_restarts)
            )
        except PointerLabError as exc:
            raise ExecutionError(f"query {qi} ({type(query).__name__}): {exc}") from exc

    return Report(digest, len(scenario.actions), len(scenario.queries), tuple(results))


def _dist_payload(dist: OutcomeDistribution, zero_tol: float) -> list[dict[str, Any]]:
    return [
        {"outcome": list(labels), "probability": _q(p, zero_tol)}
        for labels, p in dist.entries
    ]


def _verdict_payload(v: CertaintyVerdict, zero_tol: float) -> dict[str, Any]:
    return {
        "verdict": v.kind,
        "conditional": _dist_payload(v.conditional, zero_tol),
        "evidence": [
            {"model": name, "distribution": _dist_payload(d, zero_tol)}
            for name, d in v.evidence
        ],
    }


def _decomposition_payload(dec: Decomposition, zero_tol: float) -> dict[str, Any]:
    return {
        "parts": [list(p) for p in dec.parts],
        "terms": [
            {
                "coefficient": _pair(t.coefficient, zero_tol),
                "factors": [
                    [_pair(complex(a), zero_tol) for a in f.amplitudes]
                    for f in t.factors
                ],
            }
            for t in dec.terms
        ],
    }


def _prop_for(query: sc.CertaintyQuery, transcript: ProtocolTranscript,
              registry: _DerivedRegistry,
              apparatus_actions: dict[str, sc.PremeasureAction]) -> Proposition:
    subject = query.prop_subject
    if subject in apparatus_actions:
        action = apparatus_actions[subject]
        target = action.target
        labels = [
            registry.basis_item_terms(target, item)[0] or f"b{k}"
            for k, item in enumerate(action.basis)
        ]
        layout = _layout_with(transcript, target)
        sub = layout.sublayout([target])
        vectors = []
        for item in action.basis:
            _, terms = registry.basis_item_terms(target, item)
            vectors.append(make_state(sub, [(ls, c) for ls, c in terms]))
        basis = Basis(tuple(labels), tuple(vectors))
        return Proposition(target, basis, query.prop_predicate, query.prop_quantifier)
    layout = _layout_with(transcript, subject)
    comp_labels = layout.subsystem(subject).labels
    if query.prop_predicate in comp_labels:
        basis = Basis.computational(layout, subject)
    else:
        derived = registry.derived_order.get(subject, [])
        if query.prop_predicate not in derived:
            raise ExecutionError(
                f"predicate {query.prop_predicate!r} is neither a basis nor a "
                f"derived label of {subject!r}"
            )
        basis = _build_basis(layout, subject, derived, registry)
    return Proposition(subject, basis, query.prop_predicate, query.prop_quantifier)


def _layout_with(transcript: ProtocolTranscript, name: str) -> SubsystemLayout:
    for st in transcript.stages:
        if name in st.state.layout.names:
            return st.state.layout
    raise ExecutionError(f"no stage has a subsystem named {name!r}")


def _run_query(query, transcript: ProtocolTranscript, registry: _DerivedRegistry,
               apparatus_actions, models, zero_tol: float,
               triortho_restarts: int) -> dict[str, Any]:
    from .measurement import born

    final = transcript.final_state
    if isinstance(query, sc.BornQuery):
        targets = []
        for name, labels in query.targets:
            if labels is None:
                targets.append((name, None))
            else:
                targets.append((name, _build_basis(final.layout, name, labels, registry)))
        dist = born(final, targets)
        return {
            "kind": "born",
            "targets": [
                {"subsystem": n, "basis": list(l) if l else "computational"}
                for n, l in query.targets
            ],
            "distribution": _dist_payload(dist, zero_tol),
        }
    if isinstance(query, sc.CertaintyQuery):
        prop = _prop_for(query, transcript, registry, apparatus_actions)
        model_list = [models[m] for m in query.models]
        verdict = certainty(transcript, query.observer, query.outcome, prop,
                            semantics=query.semantics, models=model_list or None)
        payload = {
            "kind": "certainty",
            "observer": query.observer,
            "outcome": query.outcome,
            "prop": f"{query.prop_subject} {query.prop_quantifier} {query.prop_predicate}",
            "semantics": query.semantics,
        }
        payload.update(_verdict_payload(verdict, zero_tol))
        return payload
    if isinstance(query, sc.RewriteQuery):
        bases = {
            name: _build_basis(final.layout, name, labels, registry)
            for name, labels in query.bases
        }
        dec = rewrite(final, bases)
        return {
            "kind": "rewrite",
            "terms": [
                {"labels": list(t.labels or ()), "coefficient": _pair(t.coefficient, zero_tol)}
                for t in dec.terms
            ],
        }
    if isinstance(query, sc.TriorthoQuery):
        verdict = triortho_verdict(final, query.parts, restarts=triortho_restarts)
        payload: dict[str, Any] = {"kind": "triortho", "verdict": verdict.kind}
        payload["canonical"] = (
            _decomposition_payload(verdict.canonical, zero_tol) if verdict.canonical else None
        )
        payload["witness"] = (
            _decomposition_payload(verdict.witness, zero_tol) if verdict.witness else None
        )
        return payload
    if isinstance(query, sc.AuditQuery):
        audit = consistency_audit()
        return {
            "kind": "consistency_audit",
            "premeasurement": {
                "statements": [
                    {
                        "name": name,
                        "verdict": v.kind,
                        "probability": _q(
                            max(p for _, p in v.conditional.entries), zero_tol
                        ),
                    }
                    for name, v in audit.statements_premeasurement
                ],
                "chain_derivable": audit.chain_derivable,
                "claimed_probability": 0.0 if audit.chain_derivable else None,
                "computed_probability": _q(audit.computed_probability, zero_tol),
                "contradiction": audit.contradiction_premeasurement,
            },
            "decoherent": {
                "models": list(audit.decoherent_models),
                "statement_1_verdict": audit.statement_1_decoherent.kind,
                "contradiction": audit.contradiction_decoherent,
            },
        }
    if isinstance(query, sc.CompareQuery):
        cmp = decoherence_compare()
        return {
            "kind": "decoherence_compare",
            "full_max_difference": _q(cmp.full_max_difference, zero_tol),
            "restriction_equal": cmp.reduced_equal,
            "restriction_max_difference": _q(cmp.reduced_max_difference, zero_tol),
            "branch_weights": {
                "coarse": [_q(w, zero_tol) for w in cmp.branch_weights_coarse],
                "fine": [_q(w, zero_tol) for w in cmp.branch_weights_fine],
            },
            "apparatus_marginal": {
                "coarse": _dist_payload(cmp.apparatus_marginal_coarse, zero_tol),
                "fine": _dist_payload(cmp.apparatus_marginal_fine, zero_tol),
            },
            "matrices": {
                "pointer_coarse": _matrix_rows(cmp.rho_coarse.matrix, zero_tol),
                "pointer_fine": _matrix_rows(cmp.rho_fine.matrix, zero_tol),
                "reduced_coarse": _matrix_rows(cmp.reduced_coarse.matrix, zero_tol),
                "reduced_fine": _matrix_rows(cmp.reduced_fine.matrix, zero_tol),
            },
        }
    raise ExecutionError(f"unhandled query {query!r}")
