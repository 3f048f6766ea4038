"""Line-oriented scenario files: parsing, validation, serialization.

A scenario declares a layout, an initial state, an ordered list of actions
(premeasure / group / couple), optional environment models, and queries.
The format is purpose-built so diagnostics can talk physics: undeclared
subsystems, bad ket arity, and non-orthonormal bases (with the offending
Gram entry) are all caught at parse time with line/column positions.

Grammar sketch::

    # comments and blank lines are ignored
    layout:
      subsystem R {head, tail}
      derived S right = sqrt(1/2)|up> + sqrt(1/2)|down>
    state: sqrt(1/3)|head,down,F0> + sqrt(2/3)|tail,right,F0>
    actions:
      premeasure target=R apparatus=Fbar basis={head,tail} outcomes={F1,F2} ready=F0
      group parts=(R,Fbar) as Lbar map={(head,F1):h, (tail,F2):t}
      couple env=E targets=(R,S) branches={|head,down>, |tail,right>}
    models:
      model two-branch targets=(R,S) branches={|head,down>, |tail,right>}
    queries:
      born targets=(Lbar:{failbar,okbar}, L:{fail,ok})
      certainty observer=Fbar outcome=F2 prop="L will_obtain fail" semantics=premeasurement
      consistency_audit

Coefficients accept ``sqrt(p/q)`` sugar, plain decimals, and pure-imaginary
``0.5i``; a complex with both parts needs parentheses: ``(0.5+0.5i)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ScenarioParseError

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
_LABEL_RE = re.compile(r"^[A-Za-z0-9_+\-/.]+$")

SECTION_ORDER = ("layout", "state", "actions", "models", "queries")


# --------------------------------------------------------------------------
# Declarations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SubsystemDecl:
    name: str
    labels: tuple[str, ...]


@dataclass(frozen=True)
class DerivedDecl:
    """A named unit vector over one subsystem, written in its computational
    labels; usable wherever a label is."""

    subsystem: str
    label: str
    terms: tuple[tuple[str, complex], ...]


@dataclass(frozen=True)
class StateTerm:
    coefficient: complex
    labels: tuple[str, ...]


BasisItem = Union[str, tuple[complex, ...]]


@dataclass(frozen=True)
class PremeasureAction:
    target: str
    apparatus: str
    basis: tuple[BasisItem, ...]
    outcomes: tuple[str, ...]
    ready: str


@dataclass(frozen=True)
class GroupAction:
    parts: tuple[str, ...]
    new_name: str
    label_map: tuple[tuple[tuple[str, ...], str], ...]


@dataclass(frozen=True)
class CoupleAction:
    environment: str
    targets: tuple[str, ...]
    branches: tuple[tuple[StateTerm, ...], ...]


@dataclass(frozen=True)
class ModelDecl:
    name: str
    targets: tuple[str, ...]
    branches: tuple[tuple[StateTerm, ...], ...]


@dataclass(frozen=True)
class BornQuery:
    targets: tuple[tuple[str, tuple[str, ...] | None], ...]


@dataclass(frozen=True)
class CertaintyQuery:
    observer: str
    outcome: str
    prop_subject: str
    prop_quantifier: str
    prop_predicate: str
    semantics: str
    models: tuple[str, ...] = ()


@dataclass(frozen=True)
class RewriteQuery:
    bases: tuple[tuple[str, tuple[str, ...]], ...]


@dataclass(frozen=True)
class TriorthoQuery:
    parts: tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]


@dataclass(frozen=True)
class AuditQuery:
    pass


@dataclass(frozen=True)
class CompareQuery:
    pass


Action = Union[PremeasureAction, GroupAction, CoupleAction]
Step = Union[Action, DerivedDecl]
Query = Union[BornQuery, CertaintyQuery, RewriteQuery, TriorthoQuery, AuditQuery, CompareQuery]


@dataclass(frozen=True)
class Scenario:
    subsystems: tuple[SubsystemDecl, ...]
    derived: tuple[DerivedDecl, ...]
    state_terms: tuple[StateTerm, ...]
    steps: tuple[Step, ...]
    models: tuple[ModelDecl, ...]
    queries: tuple[Query, ...]

    @property
    def actions(self) -> tuple[Action, ...]:
        return tuple(s for s in self.steps if not isinstance(s, DerivedDecl))

    def all_derived(self) -> tuple[DerivedDecl, ...]:
        return self.derived + tuple(s for s in self.steps if isinstance(s, DerivedDecl))


# --------------------------------------------------------------------------
# Lexing helpers
# --------------------------------------------------------------------------


def _tokens(text: str) -> list[tuple[str, int]]:
    """Split on top-level whitespace; (), {}, "..." and |...> bind."""
    toks = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        start = i
        depth = 0
        in_ket = in_str = False
        while i < n:
            ch = text[i]
            if in_str:
                in_str = ch != '"'
            elif in_ket:
                in_ket = ch != ">"
            elif ch == '"':
                in_str = True
            elif ch == "|":
                in_ket = True
            elif ch in "({[":
                depth += 1
            elif ch in ")}]":
                depth -= 1
            elif ch.isspace() and depth == 0:
                break
            i += 1
        toks.append((text[start:i], start))
    return toks


def _split_commas(text: str, base: int) -> list[tuple[str, int]]:
    items: list[tuple[str, int]] = []
    start = 0
    depth = 0
    in_ket = in_str = False
    for i, ch in enumerate(text):
        if in_str:
            in_str = ch != '"'
        elif in_ket:
            in_ket = ch != ">"
        elif ch == '"':
            in_str = True
        elif ch == "|":
            in_ket = True
        elif ch in "({[":
            depth += 1
        elif ch in ")}]":
            depth -= 1
        elif ch == "," and depth == 0:
            items.append((text[start:i], start))
            start = i + 1
    items.append((text[start:], start))
    out = []
    for raw, off in items:
        stripped = raw.strip()
        out.append((stripped, base + off + (len(raw) - len(raw.lstrip()))))
    return out


def _unwrap(text: str, open_ch: str, close_ch: str, line: int, col: int,
            what: str) -> tuple[str, int]:
    if not (text.startswith(open_ch) and text.endswith(close_ch)):
        raise ScenarioParseError(
            f"{what} must be wrapped in {open_ch}...{close_ch}, got {text!r}",
            line, col, f"write {what} as {open_ch}...{close_ch}",
        )
    return text[1:-1], col + 1


_SQRT_RE = re.compile(r"^sqrt\(\s*(\d+)\s*/\s*(\d+)\s*\)$")
_NUM_RE = re.compile(r"^[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?$")
_COMPLEX_RE = re.compile(
    r"^\(\s*([+-]?[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*"
    r"([+-])\s*([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)i\s*\)$"
)


def parse_coefficient(text: str, line: int, col: int) -> complex:
    """Parse one coefficient literal: sqrt(p/q), decimal, imaginary (0.5i or
    i), or parenthesized complex (a+bi); optional leading sign."""
    raw = text.strip()
    if raw == "":
        return 1.0 + 0.0j
    sign = 1.0
    if raw[0] in "+-":
        sign = -1.0 if raw[0] == "-" else 1.0
        raw = raw[1:].strip()
    m = _SQRT_RE.match(raw)
    if m:
        p, q = int(m.group(1)), int(m.group(2))
        if q == 0:
            raise ScenarioParseError("sqrt with zero denominator", line, col,
                                     "use a nonzero denominator")
        return complex(sign * math.sqrt(p / q))
    if raw == "i":
        return complex(0.0, sign)
    if raw.endswith("i") and _NUM_RE.match(raw[:-1] or "x") and raw[:-1]:
        return complex(0.0, sign * float(raw[:-1]))
    if _NUM_RE.match(raw):
        return complex(sign * float(raw))
    m = _COMPLEX_RE.match(raw)
    if m:
        re_part = float(m.group(1))
        im_part = float(m.group(3)) * (-1.0 if m.group(2) == "-" else 1.0)
        return sign * complex(re_part, im_part)
    raise ScenarioParseError(
        f"malformed coefficient {text.strip()!r}", line, col,
        "use sqrt(p/q), a decimal, 0.5i, or (a+bi)",
    )


def _parse_ket(text: str, line: int, col: int) -> tuple[str, ...]:
    if not (text.startswith("|") and text.endswith(">")):
        raise ScenarioParseError(f"malformed ket {text!r}", line, col,
                                 "write kets as |label,label,...>")
    inner = text[1:-1]
    labels = tuple(part.strip() for part in inner.split(","))
    for lab in labels:
        if not _LABEL_RE.match(lab):
            raise ScenarioParseError(f"malformed label {lab!r} in ket", line, col,
                                     "labels use letters, digits, + - / . _")
    return labels


def parse_expression(text: str, line: int, col: int) -> tuple[StateTerm, ...]:
    """Parse ``coeff|ket> + coeff|ket> - ...`` into state terms."""
    terms: list[StateTerm] = []
    i, n = 0, len(text)
    start = 0
    depth = 0
    in_ket = False
    boundaries: list[int] = []
    while i < n:
        ch = text[i]
        if in_ket:
            in_ket = ch != ">"
        elif ch == "|":
            in_ket = True
        elif ch in "({[":
            depth += 1
        elif ch in ")}]":
            depth -= 1
        elif ch in "+-" and depth == 0 and i > 0:
            prev = text[:i].rstrip()
            if prev and prev[-1] not in "eE(+-" and not prev.endswith(","):
                boundaries.append(i)
        i += 1
    boundaries.append(n)
    pieces = []
    for b in boundaries:
        pieces.append((text[start:b], start))
        start = b
    for piece, off in pieces:
        chunk = piece.strip()
        if not chunk:
            continue
        bar = chunk.find("|")
        if bar < 0 or not chunk.endswith(">"):
            raise ScenarioParseError(
                f"expected coefficient|ket> term, got {chunk!r}", line, col + off,
                "each term looks like sqrt(1/3)|head,down>",
            )
        coeff = parse_coefficient(chunk[:bar], line, col + off)
        labels = _parse_ket(chunk[bar:], line, col + off + bar)
        terms.append(StateTerm(coeff, labels))
    if not terms:
        raise ScenarioParseError("empty state expression", line, col,
                                 "give at least one coefficient|ket> term")
    return tuple(terms)


# --------------------------------------------------------------------------
# Schema: layout tracking with numeric validation
# --------------------------------------------------------------------------


class _Schema:
    """Evolving name/label environment used for parse-time validation."""

    def __init__(self):
        self.order: list[str] = []
        self.labels: dict[str, tuple[str, ...]] = {}
        self.derived: dict[tuple[str, str], tuple[tuple[str, complex], ...]] = {}

    def add(self, name: str, labels: tuple[str, ...], line: int, col: int,
            position: int | None = None) -> None:
        if name in self.labels:
            raise ScenarioParseError(f"subsystem {name!r} already declared", line, col,
                                     "pick a fresh name")
        if position is None:
            self.order.append(name)
        else:
            self.order.insert(position, name)
        self.labels[name] = labels

    def require(self, name: str, line: int, col: int) -> tuple[str, ...]:
        if name not in self.labels:
            raise ScenarioParseError(f"subsystem {name!r} was never declared", line, col,
                                     "declare it in the layout section")
        return self.labels[name]

    def dim(self, name: str) -> int:
        return len(self.labels[name])

    def vector_for(self, name: str, item: BasisItem, line: int, col: int) -> np.ndarray:
        labels = self.labels[name]
        if isinstance(item, tuple):
            if len(item) != len(labels):
                raise ScenarioParseError(
                    f"vector literal has {len(item)} entries, subsystem {name!r} "
                    f"has dimension {len(labels)}", line, col,
                    "give one amplitude per basis label",
                )
            return np.asarray(item, dtype=np.complex128)
        vec = np.zeros(len(labels), dtype=np.complex128)
        if item in labels:
            vec[labels.index(item)] = 1.0
            return vec
        terms = self.derived.get((name, item))
        if terms is None:
            raise ScenarioParseError(
                f"{item!r} is neither a basis label nor a derived label of {name!r}",
                line, col, f"declare it with: derived {name} {item} = ...",
            )
        for lab, coeff in terms:
            vec[labels.index(lab)] += coeff
        return vec

    def expand_label(self, name: str, label: str, line: int, col: int
                     ) -> tuple[tuple[str, complex], ...]:
        labels = self.labels[name]
        if label in labels:
            return ((label, 1.0 + 0.0j),)
        terms = self.derived.get((name, label))
        if terms is None:
            raise ScenarioParseError(
                f"{label!r} is neither a basis label nor a derived label of {name!r}",
                line, col, f"declare it with: derived {name} {label} = ...",
            )
        return terms

    def check_orthonormal(self, name: str, items: Sequence[BasisItem],
                          line: int, col: int) -> None:
        vecs = [self.vector_for(name, it, line, col) for it in items]
        mat = np.stack(vecs)
        gram = mat.conj() @ mat.T
        dev = np.abs(gram - np.eye(len(vecs)))
        i, j = np.unravel_index(int(np.argmax(dev)), dev.shape)
        if dev[i, j] > 1e-9:
            raise ScenarioParseError(
                f"basis over {name!r} is not orthonormal: Gram[{i},{j}] = "
                f"{_fmt_complex_plain(complex(gram[i, j]))}",
                line, col, "make the vectors orthonormal",
            )

    def group(self, parts: Sequence[str], new_name: str,
              label_map: dict[tuple[str, ...], str], line: int, col: int) -> None:
        from .hilbert import Subsystem, _merged_labels
        from .errors import NonInjectiveLabelMapError, UnknownLabelError

        subs = [Subsystem(p, self.labels[p]) for p in parts]
        try:
            merged = _merged_labels(subs, label_map)
        except (NonInjectiveLabelMapError, UnknownLabelError) as exc:
            raise ScenarioParseError(str(exc), line, col,
                                     "map distinct label tuples to distinct names") from None
        # The merged register takes the first part's slot once the other
        # parts are gone, mirroring the runtime layout exactly.
        others = set(parts) - {parts[0]}
        position = [n for n in self.order if n not in others].index(parts[0])
        for p in parts:
            self.order.remove(p)
            del self.labels[p]
        self.order.insert(position, new_name)
        self.labels[new_name] = merged

    def canonical_target_order(self, targets: Sequence[str]) -> tuple[str, ...]:
        return tuple(sorted(targets, key=self.order.index))

    def snapshot(self) -> dict[str, tuple[str, ...]]:
        return dict(self.labels)


# --------------------------------------------------------------------------
# Directive parsers
# --------------------------------------------------------------------------


def _field_map(tokens: list[tuple[str, int]], line: int,
               allowed: Iterable[str]) -> dict[str, tuple[str, int]]:
    allowed = set(allowed)
    out: dict[str, tuple[str, int]] = {}
    for tok, off in tokens:
        if "=" not in tok:
            raise ScenarioParseError(f"expected key=value, got {tok!r}", line, off + 1,
                                     f"allowed keys: {sorted(allowed)}")
        key, value = tok.split("=", 1)
        if key not in allowed:
            raise ScenarioParseError(f"unknown field {key!r}", line, off + 1,
                                     f"allowed keys: {sorted(allowed)}")
        if key in out:
            raise ScenarioParseError(f"duplicate field {key!r}", line, off + 1,
                                     "give each field once")
        out[key] = (value, off + len(key) + 2)
    return out


def _need(fields: dict[str, tuple[str, int]], key: str, line: int, directive: str
          ) -> tuple[str, int]:
    if key not in fields:
        raise ScenarioParseError(f"{directive} is missing {key}=...", line, 1,
                                 f"add {key}=...")
    return fields[key]


def _parse_name_list(text: str, line: int, col: int) -> tuple[tuple[str, int], ...]:
    inner, base = _unwrap(text, "(", ")", line, col, "name list")
    out = []
    for item, off in _split_commas(inner, base):
        if item:
            out.append((item, off))
    if not out:
        raise ScenarioParseError("empty name list", line, col, "list at least one name")
    return tuple(out)


def _parse_basis_items(text: str, line: int, col: int) -> tuple[tuple[BasisItem, int], ...]:
    inner, base = _unwrap(text, "{", "}", line, col, "basis set")
    items: list[tuple[BasisItem, int]] = []
    for raw, off in _split_commas(inner, base):
        if not raw:
            continue
        if raw.startswith("("):
            vec_inner, vbase = _unwrap(raw, "(", ")", line, off, "vector literal")
            comps = tuple(
                parse_coefficient(c, line, coff)
                for c, coff in _split_commas(vec_inner, vbase)
            )
            items.append((comps, off))
        else:
            if not _LABEL_RE.match(raw):
                raise ScenarioParseError(f"malformed label {raw!r}", line, off,
                                         "labels use letters, digits, + - / . _")
            items.append((raw, off))
    if not items:
        raise ScenarioParseError("empty basis set", line, col, "list basis elements")
    return tuple(items)


def _parse_branches(text: str, line: int, col: int) -> tuple[tuple[tuple[StateTerm, ...], int], ...]:
    inner, base = _unwrap(text, "{", "}", line, col, "branch set")
    out = []
    for raw, off in _split_commas(inner, base):
        if raw:
            out.append((parse_expression(raw, line, off), off))
    if not out:
        raise ScenarioParseError("empty branch set", line, col, "list branch vectors")
    return tuple(out)


def _fmt_float_plain(x: float) -> str:
    return repr(float(x))


def _fmt_complex_plain(c: complex) -> str:
    if c.imag == 0:
        return _fmt_float_plain(c.real)
    if c.real == 0:
        return f"{_fmt_float_plain(c.imag)}i"
    sign = "+" if c.imag >= 0 else "-"
    return f"({_fmt_float_plain(c.real)}{sign}{_fmt_float_plain(abs(c.imag))}i)"


# --------------------------------------------------------------------------
# The parser
# --------------------------------------------------------------------------


def parse_scenario(text: str) -> Scenario:
    """Parse and validate scenario text; raises ScenarioParseError with
    line/column and a fix hint on the first problem found."""
    schema = _Schema()
    subsystems: list[SubsystemDecl] = []
    derived_layout: list[DerivedDecl] = []
    state_terms: tuple[StateTerm, ...] | None = None
    steps: list[Step] = []
    models: list[ModelDecl] = []
    queries: list[Query] = []
    model_names: set[str] = set()
    apparatus_actions: dict[str, PremeasureAction] = {}
    stage_schemas: list[dict[str, tuple[str, ...]]] = []

    section = None
    seen_sections: list[str] = []

    lines = text.splitlines()
    for line_no, raw_line in enumerate(lines, start=1):
        line = raw_line.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        header = re.match(r"^(\w+):(.*)$", line.strip())
        if header and header.group(1) in SECTION_ORDER:
            section = header.group(1)
            if section in seen_sections:
                raise ScenarioParseError(f"duplicate section {section!r}", line_no, 1,
                                         "each section appears at most once")
            if seen_sections and SECTION_ORDER.index(section) < SECTION_ORDER.index(seen_sections[-1]):
                raise ScenarioParseError(
                    f"section {section!r} out of order", line_no, 1,
                    f"order sections as {', '.join(SECTION_ORDER)}",
                )
            seen_sections.append(section)
            rest = header.group(2).strip()
            if section == "state":
                if not rest:
                    raise ScenarioParseError("state: needs an expression on the same line",
                                             line_no, 1, "write state: coeff|ket> + ...")
                col = raw_line.index("state:") + len("state:") + 1
                state_terms = _parse_state(rest, line_no, col, schema, subsystems)
            elif rest:
                raise ScenarioParseError(f"unexpected text after {section}:", line_no, 1,
                                         "put directives on their own lines")
            continue
        if section is None:
            raise ScenarioParseError("directive before any section header", line_no, 1,
                                     "start with layout:")
        stripped = line.strip()
        col0 = raw_line.index(stripped[0]) + 1 if stripped else 1

        if section == "layout":
            _parse_layout_line(stripped, line_no, col0, schema, subsystems, derived_layout)
        elif section == "state":
            raise ScenarioParseError("state section holds a single expression line",
                                     line_no, col0, "put the expression after state:")
        elif section == "actions":
            step = _parse_action_line(stripped, line_no, col0, schema)
            steps.append(step)
            if isinstance(step, PremeasureAction):
                if step.apparatus in apparatus_actions:
                    raise ScenarioParseError(
                        f"apparatus {step.apparatus!r} used by two premeasure actions",
                        line_no, col0, "use one apparatus per measurement")
                apparatus_actions[step.apparatus] = step
            if not isinstance(step, DerivedDecl):
                stage_schemas.append(schema.snapshot())
        elif section == "models":
            model = _parse_model_line(stripped, line_no, col0, schema, subsystems,
                                      derived_layout)
            if model.name in model_names:
                raise ScenarioParseError(f"model {model.name!r} declared twice",
                                         line_no, col0, "model names must be unique")
            model_names.add(model.name)
            models.append(model)
        elif section == "queries":
            queries.append(
                _parse_query_line(stripped, line_no, col0, schema, apparatus_actions,
                                  model_names, stage_schemas)
            )

    if state_terms is None:
        raise ScenarioParseError("no state: section", len(lines) or 1, 1,
                                 "declare the initial state")
    if not queries:
        raise ScenarioParseError("no queries", len(lines) or 1, 1,
                                 "add a queries: section with at least one query")
    return Scenario(
        subsystems=tuple(subsystems),
        derived=tuple(derived_layout),
        state_terms=state_terms,
        steps=tuple(steps),
        models=tuple(models),
        queries=tuple(queries),
    )


def _parse_derived(stripped: str, line_no: int, col0: int, schema: _Schema) -> DerivedDecl:
    m = re.match(r"^derived\s+(\S+)\s+(\S+)\s*=\s*(.+)$", stripped)
    if not m:
        raise ScenarioParseError("malformed derived declaration", line_no, col0,
                                 "write: derived SUBSYSTEM LABEL = expression")
    sub_name, label, expr = m.group(1), m.group(2), m.group(3)
    labels = schema.require(sub_name, line_no, col0)
    if not _LABEL_RE.match(label):
        raise ScenarioParseError(f"malformed derived label {label!r}", line_no, col0,
                                 "labels use letters, digits, + - / . _")
    if label in labels or (sub_name, label) in schema.derived:
        raise ScenarioParseError(f"label {label!r} already exists on {sub_name!r}",
                                 line_no, col0, "pick a fresh label")
    expr_col = col0 + stripped.index("=") + 1
    terms = parse_expression(expr, line_no, expr_col)
    flat: list[tuple[str, complex]] = []
    vec = np.zeros(len(labels), dtype=np.complex128)
    for term in terms:
        if len(term.labels) != 1:
            raise ScenarioParseError("derived vectors use single-label kets",
                                     line_no, expr_col, "write |up>, not |up,down>")
        lab = term.labels[0]
        if lab not in labels:
            raise ScenarioParseError(
                f"{lab!r} is not a basis label of {sub_name!r}", line_no, expr_col,
                "derived vectors expand over computational labels only")
        vec[labels.index(lab)] += term.coefficient
        flat.append((lab, term.coefficient))
    nrm = float(np.linalg.norm(vec))
    if abs(nrm - 1.0) > 1e-9:
        raise ScenarioParseError(
            f"derived vector {label!r} has norm {nrm:.9g}, expected 1", line_no,
            expr_col, "normalize the coefficients")
    decl = DerivedDecl(sub_name, label, tuple(flat))
    schema.derived[(sub_name, label)] = decl.terms
    return decl


def _parse_layout_line(stripped, line_no, col0, schema, subsystems, derived_layout):
    if stripped.startswith("subsystem"):
        m = re.match(r"^subsystem\s+(\S+)\s*\{(.*)\}$", stripped)
        if not m:
            raise ScenarioParseError("malformed subsystem declaration", line_no, col0,
                                     "write: subsystem NAME {label, label, ...}")
        name = m.group(1)
        if not _NAME_RE.match(name):
            raise ScenarioParseError(f"malformed subsystem name {name!r}", line_no, col0,
                                     "names start with a letter or underscore")
        labels = []
        for lab, off in _split_commas(m.group(2), col0):
            if not lab:
                continue
            if not _LABEL_RE.match(lab):
                raise ScenarioParseError(f"malformed label {lab!r}", line_no, off,
                                         "labels use letters, digits, + - / . _")
            labels.append(lab)
        if not labels:
            raise ScenarioParseError(f"subsystem {name!r} has no labels", line_no, col0,
                                     "list at least one label")
        if len(set(labels)) != len(labels):
            raise ScenarioParseError(f"duplicate label in subsystem {name!r}",
                                     line_no, col0, "labels must be unique")
        schema.add(name, tuple(labels), line_no, col0)
        subsystems.append(SubsystemDecl(name, tuple(labels)))
    elif stripped.startswith("derived"):
        derived_layout.append(_parse_derived(stripped, line_no, col0, schema))
    else:
        raise ScenarioParseError(f"unknown layout directive {stripped.split()[0]!r}",
                                 line_no, col0, "use subsystem or derived")


def _parse_state(expr, line_no, col, schema, subsystems):
    terms = parse_expression(expr, line_no, col)
    n = len(subsystems)
    for term in terms:
        if len(term.labels) != n:
            raise ScenarioParseError(
                f"ket has {len(term.labels)} labels, layout has {n} subsystems",
                line_no, col, "give one label per declared subsystem, in order")
        for decl, lab in zip(subsystems, term.labels):
            schema.expand_label(decl.name, lab, line_no, col)
    return terms


def _parse_action_line(stripped, line_no, col0, schema) -> Step:
    toks = _tokens(stripped)
    head = toks[0][0]
    if head == "derived":
        return _parse_derived(stripped, line_no, col0, schema)
    if head == "premeasure":
        fields = _field_map(toks[1:], line_no,
                            ("target", "apparatus", "basis", "outcomes", "ready"))
        tval, tcol = _need(fields, "target", line_no, "premeasure")
        schema.require(tval, line_no, col0 + tcol)
        aval, acol = _need(fields, "apparatus", line_no, "premeasure")
        app_labels = schema.require(aval, line_no, col0 + acol)
        if aval == tval:
            raise ScenarioParseError("apparatus cannot equal target", line_no, col0 + acol,
                                     "measure one register with another")
        bval, bcol = _need(fields, "basis", line_no, "premeasure")
        items = _parse_basis_items(bval, line_no, col0 + bcol)
        basis = tuple(it for it, _ in items)
        schema.check_orthonormal(tval, basis, line_no, col0 + bcol)
        oval, ocol = _need(fields, "outcomes", line_no, "premeasure")
        outcome_items = _parse_basis_items(oval, line_no, col0 + ocol)
        outcomes = []
        for it, off in outcome_items:
            if not isinstance(it, str) or it not in app_labels:
                raise ScenarioParseError(
                    f"outcome {it!r} is not a label of apparatus {aval!r}",
                    line_no, col0 + off, "outcomes name apparatus levels")
            outcomes.append(it)
        if len(set(outcomes)) != len(outcomes):
            raise ScenarioParseError("duplicate outcome labels", line_no, col0 + ocol,
                                     "outcomes must be distinct")
        if len(outcomes) != len(basis):
            raise ScenarioParseError(
                f"{len(basis)} basis vectors but {len(outcomes)} outcomes",
                line_no, col0 + ocol, "give one outcome per basis vector")
        rval, rcol = _need(fields, "ready", line_no, "premeasure")
        if rval not in app_labels:
            raise ScenarioParseError(f"ready label {rval!r} not on apparatus {aval!r}",
                                     line_no, col0 + rcol, "ready names an apparatus level")
        return PremeasureAction(tval, aval, basis, tuple(outcomes), rval)
    if head == "group":
        m = re.match(r"^group\s+parts=(\S+)\s+as\s+(\S+)\s+map=(.+)$", stripped)
        if not m:
            raise ScenarioParseError("malformed group action", line_no, col0,
                                     "write: group parts=(A,B) as NAME map={(a,b):x, ...}")
        parts = tuple(n for n, _ in _parse_name_list(m.group(1), line_no, col0))
        for p in parts:
            schema.require(p, line_no, col0)
        if len(parts) < 2 or len(set(parts)) != len(parts):
            raise ScenarioParseError("group needs two or more distinct parts",
                                     line_no, col0, "list distinct subsystem names")
        new_name = m.group(2)
        if not _NAME_RE.match(new_name):
            raise ScenarioParseError(f"malformed group name {new_name!r}", line_no, col0,
                                     "names start with a letter or underscore")
        map_text = m.group(3)
        map_col = col0 + stripped.index("map=") + 4
        inner, base = _unwrap(map_text, "{", "}", line_no, map_col, "label map")
        pairs = []
        for raw, off in _split_commas(inner, base):
            if not raw:
                continue
            pm = re.match(r"^\((.*)\)\s*:\s*(\S+)$", raw)
            if not pm:
                raise ScenarioParseError(f"malformed map entry {raw!r}", line_no, off,
                                         "entries look like (a,b):name")
            key = tuple(k for k, _ in _split_commas(pm.group(1), off))
            value = pm.group(2)
            if not _LABEL_RE.match(value):
                raise ScenarioParseError(f"malformed label {value!r}", line_no, off,
                                         "labels use letters, digits, + - / . _")
            pairs.append((key, value))
        schema.group(parts, new_name, dict(pairs), line_no, map_col)
        return GroupAction(parts, new_name, tuple(pairs))
    if head == "couple":
        fields = _field_map(toks[1:], line_no, ("env", "targets", "branches"))
        eval_, ecol = _need(fields, "env", line_no, "couple")
        if eval_ in schema.labels:
            raise ScenarioParseError(f"environment name {eval_!r} already taken",
                                     line_no, col0 + ecol, "pick a fresh name")
        tval, tcol = _need(fields, "targets", line_no, "couple")
        targets = tuple(n for n, _ in _parse_name_list(tval, line_no, col0 + tcol))
        for t in targets:
            schema.require(t, line_no, col0 + tcol)
        bval, bcol = _need(fields, "branches", line_no, "couple")
        branches = _parse_branch_set(bval, line_no, col0 + bcol, schema, targets)
        # Canonicalize to layout order so branch kets always line up with the
        # register order the coupling machinery uses.
        ordered = schema.canonical_target_order(targets)
        branches = _reorder_branch_labels(targets, ordered, branches)
        env_labels = tuple(f"eps{i}" for i in range(len(branches) + 1))
        schema.add(eval_, env_labels, line_no, col0 + ecol)
        return CoupleAction(eval_, ordered, branches)
    raise ScenarioParseError(f"unknown action {head!r}", line_no, col0,
                             "actions are premeasure, group, couple (or derived)")


def _reorder_branch_labels(
    targets: Sequence[str],
    ordered: Sequence[str],
    branches: tuple[tuple[StateTerm, ...], ...],
) -> tuple[tuple[StateTerm, ...], ...]:
    if tuple(targets) == tuple(ordered):
        return branches
    perm = [targets.index(t) for t in ordered]
    return tuple(
        tuple(StateTerm(t.coefficient, tuple(t.labels[p] for p in perm)) for t in b)
        for b in branches
    )


def _parse_branch_set(bval, line_no, col, schema, targets):
    parsed = _parse_branches(bval, line_no, col)
    branches = []
    vecs = []
    dims = [schema.dim(t) for t in targets]
    for terms, off in parsed:
        vec = np.zeros(int(np.prod(dims)), dtype=np.complex128)
        for term in terms:
            if len(term.labels) != len(targets):
                raise ScenarioParseError(
                    f"branch ket has {len(term.labels)} labels, targets are {targets}",
                    line_no, off, "one label per target subsystem")
            expansions = [
                schema.expand_label(t, lab, line_no, off)
                for t, lab in zip(targets, term.labels)
            ]
            import itertools as _it

            for combo in _it.product(*expansions):
                flat = 0
                coeff = term.coefficient
                for (lab, c), t, d in zip(combo, targets, dims):
                    flat = flat * d + schema.labels[t].index(lab)
                    coeff *= c
                vec[flat] += coeff
        nrm = float(np.linalg.norm(vec))
        if abs(nrm - 1.0) > 1e-9:
            raise ScenarioParseError(f"branch vector has norm {nrm:.9g}, expected 1",
                                     line_no, off, "normalize the branch")
        vecs.append(vec)
        branches.append(terms)
    mat = np.stack(vecs)
    gram = mat.conj() @ mat.T
    dev = np.abs(gram - np.eye(len(vecs)))
    i, j = np.unravel_index(int(np.argmax(dev)), dev.shape)
    if dev[i, j] > 1e-9:
        raise ScenarioParseError(
            f"branches not orthonormal: Gram[{i},{j}] = "
            f"{_fmt_complex_plain(complex(gram[i, j]))}",
            line_no, col, "make the branch vectors orthonormal")
    return tuple(branches)


def _parse_model_line(stripped, line_no, col0, schema, subsystems, derived_layout):
    m = re.match(r"^model\s+(\S+)\s+(.*)$", stripped)
    if not m:
        raise ScenarioParseError("malformed model declaration", line_no, col0,
                                 "write: model NAME targets=(...) branches={...}")
    name = m.group(1)
    if not _NAME_RE.match(name):
        raise ScenarioParseError(f"malformed model name {name!r}", line_no, col0,
                                 "names start with a letter or underscore")
    toks = _tokens(m.group(2))
    fields = _field_map(toks, line_no, ("targets", "branches"))
    tval, tcol = _need(fields, "targets", line_no, "model")
    # Models describe couplings at measurement time; validate against the
    # declared (pre-group) layout.
    declared = _Schema()
    for decl in subsystems:
        declared.add(decl.name, decl.labels, line_no, col0)
    for d in derived_layout:
        declared.derived[(d.subsystem, d.label)] = d.terms
    targets = tuple(n for n, _ in _parse_name_list(tval, line_no, col0 + tcol))
    for t in targets:
        declared.require(t, line_no, col0 + tcol)
    bval, bcol = _need(fields, "branches", line_no, "model")
    branches = _parse_branch_set(bval, line_no, col0 + bcol, declared, targets)
    ordered = declared.canonical_target_order(targets)
    return ModelDecl(name, ordered, _reorder_branch_labels(targets, ordered, branches))


def _parse_query_line(stripped, line_no, col0, schema, apparatus_actions,
                      model_names, stage_schemas) -> Query:
    toks = _tokens(stripped)
    head = toks[0][0]
    if head == "born":
        fields = _field_map(toks[1:], line_no, ("targets",))
        tval, tcol = _need(fields, "targets", line_no, "born")
        inner, base = _unwrap(tval, "(", ")", line_no, col0 + tcol, "target list")
        targets = []
        for raw, off in _split_commas(inner, base):
            if not raw:
                continue
            if ":" in raw:
                name, brace = raw.split(":", 1)
                name = name.strip()
                schema.require(name, line_no, col0 + off)
                items = _parse_basis_items(brace.strip(), line_no, col0 + off)
                labels = []
                for it, ioff in items:
                    if not isinstance(it, str):
                        raise ScenarioParseError(
                            "born bases use labels, not vector literals",
                            line_no, col0 + ioff, "declare a derived label instead")
                    labels.append(it)
                schema.check_orthonormal(name, labels, line_no, col0 + off)
                targets.append((name, tuple(labels)))
            else:
                schema.require(raw, line_no, col0 + off)
                targets.append((raw, None))
        if not targets:
            raise ScenarioParseError("born needs at least one target", line_no, col0,
                                     "write targets=(NAME) or targets=(NAME:{a,b})")
        return BornQuery(tuple(targets))
    if head == "certainty":
        fields = _field_map(toks[1:], line_no,
                            ("observer", "outcome", "prop", "semantics", "models"))
        oval, ocol = _need(fields, "observer", line_no, "certainty")
        if oval not in apparatus_actions:
            raise ScenarioParseError(
                f"observer {oval!r} is not the apparatus of any premeasure action",
                line_no, col0 + ocol, "name an apparatus used in the actions section")
        action = apparatus_actions[oval]
        outval, outcol = _need(fields, "outcome", line_no, "certainty")
        valid = set(action.outcomes) | {b for b in action.basis if isinstance(b, str)}
        if outval not in valid:
            raise ScenarioParseError(
                f"outcome {outval!r} is not a record or basis label of {oval!r}",
                line_no, col0 + outcol, f"use one of {sorted(valid)}")
        pval, pcol = _need(fields, "prop", line_no, "certainty")
        if not (pval.startswith('"') and pval.endswith('"')):
            raise ScenarioParseError("prop must be quoted", line_no, col0 + pcol,
                                     'write prop="SUBJECT QUANTIFIER LABEL"')
        parts = pval[1:-1].split()
        if len(parts) != 3:
            raise ScenarioParseError(
                f"prop needs three words, got {pval}", line_no, col0 + pcol,
                'write prop="SUBJECT will_obtain|is_in_state LABEL"')
        subject, quant, predicate = parts
        if quant not in ("will_obtain", "is_in_state"):
            raise ScenarioParseError(f"unknown quantifier {quant!r}", line_no,
                                     col0 + pcol, "use will_obtain or is_in_state")
        known = set(schema.labels) | set(apparatus_actions)
        for snap in stage_schemas:
            known |= set(snap)
        if subject not in known:
            raise ScenarioParseError(f"prop subject {subject!r} is unknown", line_no,
                                     col0 + pcol, "name a subsystem or an apparatus")
        sval, scol = _need(fields, "semantics", line_no, "certainty")
        if sval not in ("premeasurement", "decoherent"):
            raise ScenarioParseError(f"unknown semantics {sval!r}", line_no,
                                     col0 + scol, "use premeasurement or decoherent")
        models: tuple[str, ...] = ()
        if sval == "decoherent":
            if "models" not in fields:
                raise ScenarioParseError(
                    "decoherent semantics needs models=(...)", line_no, col0 + scol,
                    "reference models declared in the models: section")
            mval, mcol = fields["models"]
            models = tuple(n for n, _ in _parse_name_list(mval, line_no, col0 + mcol))
            for mn in models:
                if mn not in model_names:
                    raise ScenarioParseError(f"model {mn!r} was never declared",
                                             line_no, col0 + mcol,
                                             "declare it in the models: section")
        elif "models" in fields:
            raise ScenarioParseError("models= only applies to decoherent semantics",
                                     line_no, col0, "drop models= or switch semantics")
        return CertaintyQuery(oval, outval, subject, quant, predicate, sval, models)
    if head == "rewrite":
        fields = _field_map(toks[1:], line_no, ("bases",))
        bval, bcol = _need(fields, "bases", line_no, "rewrite")
        inner, base = _unwrap(bval, "(", ")", line_no, col0 + bcol, "bases list")
        out = []
        for raw, off in _split_commas(inner, base):
            if not raw:
                continue
            if ":" not in raw:
                raise ScenarioParseError(f"malformed bases entry {raw!r}", line_no,
                                         col0 + off, "entries look like NAME:{a,b}")
            name, brace = raw.split(":", 1)
            name = name.strip()
            labels_avail = schema.require(name, line_no, col0 + off)
            items = _parse_basis_items(brace.strip(), line_no, col0 + off)
            labels = []
            for it, ioff in items:
                if not isinstance(it, str):
                    raise ScenarioParseError("rewrite bases use labels", line_no,
                                             col0 + ioff, "declare derived labels")
                labels.append(it)
            if len(labels) != len(labels_avail):
                raise ScenarioParseError(
                    f"rewrite basis for {name!r} has {len(labels)} vectors, "
                    f"needs {len(labels_avail)}", line_no, col0 + off,
                    "rewrite bases must be complete")
            schema.check_orthonormal(name, labels, line_no, col0 + off)
            out.append((name, tuple(labels)))
        return RewriteQuery(tuple(out))
    if head == "triortho":
        fields = _field_map(toks[1:], line_no, ("parts",))
        pval, pcol = _need(fields, "parts", line_no, "triortho")
        inner, base = _unwrap(pval, "(", ")", line_no, col0 + pcol, "parts list")
        groups = []
        for raw, off in _split_commas(inner, base):
            if not raw:
                continue
            names = tuple(n for n, _ in _parse_name_list(raw, line_no, col0 + off))
            for n in names:
                schema.require(n, line_no, col0 + off)
            groups.append(names)
        if len(groups) != 3:
            raise ScenarioParseError(f"triortho needs three parts, got {len(groups)}",
                                     line_no, col0 + pcol, "write parts=((A),(B),(C))")
        covered = [n for g in groups for n in g]
        if sorted(covered) != sorted(schema.order):
            raise ScenarioParseError("triortho parts must cover the layout exactly",
                                     line_no, col0 + pcol,
                                     f"cover {tuple(schema.order)} once each")
        return TriorthoQuery((groups[0], groups[1], groups[2]))
    if head == "consistency_audit":
        if len(toks) > 1:
            raise ScenarioParseError("consistency_audit takes no fields", line_no,
                                     col0, "write it bare")
        return AuditQuery()
    if head == "decoherence_compare":
        if len(toks) > 1:
            raise ScenarioParseError("decoherence_compare takes no fields", line_no,
                                     col0, "write it bare")
        return CompareQuery()
    raise ScenarioParseError(f"unknown query {head!r}", line_no, col0,
                             "queries: born, certainty, rewrite, triortho, "
                             "consistency_audit, decoherence_compare")


# --------------------------------------------------------------------------
# Serializer
# --------------------------------------------------------------------------


def _fmt_terms(terms: Sequence[StateTerm]) -> str:
    chunks = []
    for i, term in enumerate(terms):
        coeff = _fmt_complex_plain(term.coefficient)
        ket = "|" + ",".join(term.labels) + ">"
        if i == 0:
            chunks.append(f"{coeff}{ket}")
        elif coeff.startswith("-"):
            chunks.append(f"- {coeff[1:]}{ket}")
        else:
            chunks.append(f"+ {coeff}{ket}")
    return " ".join(chunks)


def _fmt_basis_item(item: BasisItem) -> str:
    if isinstance(item, str):
        return item
    return "(" + ",".join(_fmt_complex_plain(c) for c in item) + ")"


def serialize_scenario(s: Scenario) -> str:
    """Canonical text form; parsing it back yields an equal Scenario."""
    out = ["layout:"]
    for decl in s.subsystems:
        out.append(f"  subsystem {decl.name} {{{', '.join(decl.labels)}}}")
    for d in s.derived:
        out.append(f"  derived {d.subsystem} {d.label} = "
                   f"{_fmt_terms([StateTerm(c, (lab,)) for lab, c in d.terms])}")
    out.append(f"state: {_fmt_terms(s.state_terms)}")
    out.append("actions:")
    for step in s.steps:
        if isinstance(step, DerivedDecl):
            out.append(f"  derived {step.subsystem} {step.label} = "
                       f"{_fmt_terms([StateTerm(c, (lab,)) for lab, c in step.terms])}")
        elif isinstance(step, PremeasureAction):
            out.append(
                f"  premeasure target={step.target} apparatus={step.apparatus} "
                f"basis={{{','.join(_fmt_basis_item(b) for b in step.basis)}}} "
                f"outcomes={{{','.join(step.outcomes)}}} ready={step.ready}"
            )
        elif isinstance(step, GroupAction):
            entries = ", ".join(
                f"({','.join(key)}):{value}" for key, value in step.label_map
            )
            out.append(f"  group parts=({','.join(step.parts)}) as {step.new_name} "
                       f"map={{{entries}}}")
        elif isinstance(step, CoupleAction):
            branches = ", ".join(_fmt_terms(b) for b in step.branches)
            out.append(f"  couple env={step.environment} "
                       f"targets=({','.join(step.targets)}) branches={{{branches}}}")
    if s.models:
        out.append("models:")
        for m in s.models:
            branches = ", ".join(_fmt_terms(b) for b in m.branches)
            out.append(f"  model {m.name} targets=({','.join(m.targets)}) "
                       f"branches={{{branches}}}")
    out.append("queries:")
    for q in s.queries:
        if isinstance(q, BornQuery):
            items = []
            for name, labels in q.targets:
                items.append(name if labels is None else f"{name}:{{{','.join(labels)}}}")
            out.append(f"  born targets=({', '.join(items)})")
        elif isinstance(q, CertaintyQuery):
            line = (f"  certainty observer={q.observer} outcome={q.outcome} "
                    f'prop="{q.prop_subject} {q.prop_quantifier} {q.prop_predicate}" '
                    f"semantics={q.semantics}")
            if q.models:
                line += f" models=({','.join(q.models)})"
            out.append(line)
        elif isinstance(q, RewriteQuery):
            items = [f"{name}:{{{','.join(labels)}}}" for name, labels in q.bases]
            out.append(f"  rewrite bases=({', '.join(items)})")
        elif isinstance(q, TriorthoQuery):
            groups = ",".join(f"({','.join(g)})" for g in q.parts)
            out.append(f"  triortho parts=({groups})")
        elif isinstance(q, AuditQuery):
            out.append("  consistency_audit")
        elif isinstance(q, CompareQuery):
            out.append("  decoherence_compare")
    return "\n".join(out) + "\n"
