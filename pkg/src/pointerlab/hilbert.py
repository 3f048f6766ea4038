"""Labeled tensor-product Hilbert space substrate.

States, operators and density matrices live over a :class:`SubsystemLayout`:
an ordered list of named subsystems, each with named basis labels.  The flat
index of an amplitude runs lexicographically over subsystem declaration
order, so a tuple of labels addresses exactly one amplitude and the mapping
round-trips.  Everything is dense complex double precision; dimensions in
this package stay desk-scale, so no sparse path exists.

All values are immutable after construction and every operation is a pure
function, which makes them safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateStateError,
    InvalidPartitionError,
    LayoutConflictError,
    LayoutMismatchError,
    NonInjectiveLabelMapError,
    UnknownLabelError,
    UnknownSubsystemError,
)

# Absolute tolerance for amplitude-level equality checks.
ATOL = 1e-9
# Per-operation norm drift budget.
NORM_DRIFT = 1e-12
# Probabilities below this are treated as exactly zero.
PRUNE_PROB = 1e-12


@dataclass(frozen=True)
class Subsystem:
    """A named register with an ordered set of basis labels."""

    name: str
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise InvalidPartitionError(f"subsystem {self.name!r} has no basis labels")
        if len(set(self.labels)) != len(self.labels):
            raise LayoutConflictError(f"duplicate basis label in subsystem {self.name!r}")

    @property
    def dimension(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabelError(
                f"subsystem {self.name!r} has no basis label {label!r}"
            ) from None


@dataclass(frozen=True)
class SubsystemLayout:
    """Ordered collection of subsystems; the index space of a state vector."""

    subsystems: tuple[Subsystem, ...]

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        names = [s.name for s in self.subsystems]
        if len(set(names)) != len(names):
            raise LayoutConflictError(f"duplicate subsystem names in layout: {names}")
        if not self.subsystems:
            raise InvalidPartitionError("layout needs at least one subsystem")

    @classmethod
    def of(cls, *specs: tuple[str, Sequence[str]]) -> "SubsystemLayout":
        return cls(tuple(Subsystem(name, tuple(labels)) for name, labels in specs))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dimension for s in self.subsystems)

    @property
    def dimension(self) -> int:
        return math.prod(self.dims)

    def axis(self, name: str) -> int:
        for i, s in enumerate(self.subsystems):
            if s.name == name:
                return i
        raise UnknownSubsystemError(f"layout has no subsystem {name!r}")

    def subsystem(self, name: str) -> Subsystem:
        return self.subsystems[self.axis(name)]

    def index(self, labels: Sequence[str]) -> int:
        """Flat index of a full label tuple (lexicographic over declaration order)."""
        if len(labels) != len(self.subsystems):
            raise UnknownLabelError(
                f"expected {len(self.subsystems)} labels {self.names}, got {labels!r}"
            )
        flat = 0
        for sub, label in zip(self.subsystems, labels):
            flat = flat * sub.dimension + sub.index_of(label)
        return flat

    def labels_at(self, flat: int) -> tuple[str, ...]:
        out = []
        for dim in reversed(self.dims):
            flat, k = divmod(flat, dim)
            out.append(k)
        return tuple(
            sub.labels[k] for sub, k in zip(self.subsystems, reversed(out))
        )

    def sublayout(self, names: Sequence[str]) -> "SubsystemLayout":
        """Layout over the given subsystems, in the given order."""
        return SubsystemLayout(tuple(self.subsystem(n) for n in names))


@dataclass(frozen=True, eq=False)
class StateVector:
    """Unit-norm complex amplitudes over a layout.

    ``input_norm`` records the norm of whatever raw coefficients the state
    was built from: callers asserting exact declared coefficients can demand
    it be 1 (no rescaling happened).
    """

    layout: SubsystemLayout
    amplitudes: np.ndarray
    input_norm: float = 1.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (self.layout.dimension,):
            raise LayoutMismatchError(
                f"amplitude vector of length {amps.shape} does not match layout "
                f"dimension {self.layout.dimension}"
            )
        nrm = float(np.linalg.norm(amps))
        if abs(nrm - 1.0) > ATOL:
            raise DegenerateStateError(f"state norm {nrm} not 1 within {ATOL}")
        amps = amps.copy()
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    def amplitude(self, labels: Sequence[str]) -> complex:
        return complex(self.amplitudes[self.layout.index(labels)])

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def tensor_view(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.dims)

    def __repr__(self) -> str:
        return f"StateVector({'x'.join(map(str, self.layout.dims))} over {self.layout.names})"


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Dense matrix between two layouts.

    ``kind`` may be ``"general"``, ``"unitary"`` or ``"isometry"``; the
    latter two are verified entrywise at construction (1e-9).
    """

    layout_in: SubsystemLayout
    layout_out: SubsystemLayout
    matrix: np.ndarray
    kind: str = "general"

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.complex128)
        expected = (self.layout_out.dimension, self.layout_in.dimension)
        if mat.shape != expected:
            raise LayoutMismatchError(f"operator shape {mat.shape}, expected {expected}")
        if self.kind == "unitary":
            if mat.shape[0] != mat.shape[1]:
                raise LayoutMismatchError("unitary operator must be square")
            gram = mat.conj().T @ mat
            if np.max(np.abs(gram - np.eye(mat.shape[1]))) > ATOL:
                raise LayoutConflictError("operator flagged unitary is not unitary")
        elif self.kind == "isometry":
            gram = mat.conj().T @ mat
            if np.max(np.abs(gram - np.eye(mat.shape[1]))) > ATOL:
                raise LayoutConflictError("operator flagged isometry is not an isometry")
        elif self.kind != "general":
            raise ValueError(f"unknown operator kind {self.kind!r}")
        mat = mat.copy()
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Hermitian, unit-trace, positive-semidefinite matrix over a layout."""

    layout: SubsystemLayout
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.complex128)
        d = self.layout.dimension
        if mat.shape != (d, d):
            raise LayoutMismatchError(f"density shape {mat.shape}, expected {(d, d)}")
        if np.max(np.abs(mat - mat.conj().T)) > ATOL:
            raise LayoutConflictError("density operator not Hermitian within 1e-9")
        tr = complex(np.trace(mat))
        if abs(tr - 1.0) > ATOL:
            raise LayoutConflictError(f"density trace {tr} not 1 within 1e-9")
        if float(np.min(np.linalg.eigvalsh(mat))) < -ATOL:
            raise LayoutConflictError("density operator has eigenvalue below -1e-9")
        mat = mat.copy()
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    def diagonal_probability(self, labels: Sequence[str]) -> float:
        i = self.layout.index(labels)
        return float(self.matrix[i, i].real)


def make_state(
    layout: SubsystemLayout,
    terms: Iterable[tuple[Sequence[str], complex]],
) -> StateVector:
    """Build a state from (label tuple, amplitude) terms.

    Amplitudes of repeated tuples are summed, then the vector is normalized.
    The pre-normalization norm is recorded on the result as ``input_norm``.
    """
    amps = np.zeros(layout.dimension, dtype=np.complex128)
    for labels, coeff in terms:
        amps[layout.index(labels)] += coeff
    nrm = float(np.linalg.norm(amps))
    if nrm <= 0.0:
        raise DegenerateStateError("terms sum to the zero vector")
    return StateVector(layout, amps / nrm, input_norm=nrm)


def basis_state(layout: SubsystemLayout, labels: Sequence[str]) -> StateVector:
    return make_state(layout, [(tuple(labels), 1.0)])


def tensor(a: StateVector, b: StateVector) -> StateVector:
    """Tensor product; subsystem names must be disjoint."""
    overlap = set(a.layout.names) & set(b.layout.names)
    if overlap:
        raise LayoutConflictError(f"tensor operands share subsystem names {sorted(overlap)}")
    layout = SubsystemLayout(a.layout.subsystems + b.layout.subsystems)
    return StateVector(layout, np.kron(a.amplitudes, b.amplitudes))


def inner(a: StateVector, b: StateVector) -> complex:
    """Inner product, conjugate-linear in the first argument."""
    if a.layout != b.layout:
        raise LayoutMismatchError("inner product requires identical layouts")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def apply(op: LinearOperator, s: StateVector) -> StateVector:
    if op.layout_in != s.layout:
        raise LayoutMismatchError("operator input layout does not match state layout")
    return StateVector(op.layout_out, op.matrix @ s.amplitudes)


def density(s: StateVector) -> DensityOperator:
    """Pure-state projector |s><s|."""
    return DensityOperator(s.layout, np.outer(s.amplitudes, s.amplitudes.conj()))


def partial_trace(rho: DensityOperator, keep: Iterable[str]) -> DensityOperator:
    """Trace out everything except ``keep``; result preserves layout order."""
    keep = set(keep)
    if not keep:
        raise InvalidPartitionError("partial trace must keep at least one subsystem")
    names = rho.layout.names
    for name in keep:
        if name not in names:
            raise UnknownSubsystemError(f"layout has no subsystem {name!r}")
    kept_axes = [i for i, n in enumerate(names) if n in keep]
    dims = rho.layout.dims
    n = len(dims)
    t = rho.matrix.reshape(dims + dims)
    row_idx = list(range(n))
    col_idx = [i if i not in kept_axes else n + i for i in range(n)]
    out_idx = kept_axes + [n + i for i in kept_axes]
    reduced = np.einsum(t, row_idx + col_idx, out_idx)
    kept_names = [names[i] for i in kept_axes]
    sub = rho.layout.sublayout(kept_names)
    d = sub.dimension
    return DensityOperator(sub, reduced.reshape(d, d))


def embed(layout: SubsystemLayout, blocks: Mapping[str, np.ndarray]) -> LinearOperator:
    """Operator acting as the given square blocks on named subsystems and as
    identity elsewhere."""
    mat = np.array([[1.0 + 0.0j]])
    for sub in layout.subsystems:
        block = blocks.get(sub.name)
        if block is None:
            block = np.eye(sub.dimension, dtype=np.complex128)
        else:
            block = np.asarray(block, dtype=np.complex128)
            if block.shape != (sub.dimension, sub.dimension):
                raise LayoutMismatchError(
                    f"block for {sub.name!r} has shape {block.shape}, "
                    f"expected {(sub.dimension,) * 2}"
                )
        mat = np.kron(mat, block)
    return LinearOperator(layout, layout, mat)


def _merged_labels(
    parts: Sequence[Subsystem],
    label_map: Mapping[tuple[str, ...], str],
) -> tuple[str, ...]:
    import itertools

    for key in label_map:
        if len(key) != len(parts):
            raise UnknownLabelError(f"label_map key {key!r} does not match parts")
        for sub, label in zip(parts, key):
            sub.index_of(label)
    values = list(label_map.values())
    if len(set(values)) != len(values):
        raise NonInjectiveLabelMapError("label_map assigns one name to several label tuples")
    merged = []
    for combo in itertools.product(*(s.labels for s in parts)):
        name = label_map.get(combo, "(" + ",".join(combo) + ")")
        merged.append(name)
    if len(set(merged)) != len(merged):
        raise NonInjectiveLabelMapError("grouped labels collide with auto-generated names")
    return tuple(merged)


def group_layout(
    layout: SubsystemLayout,
    parts: Sequence[str],
    new_name: str,
    label_map: Mapping[tuple[str, ...], str],
) -> SubsystemLayout:
    """Merge ``parts`` into one subsystem placed at the first part's position.

    Combined labels are the lexicographic product of the part labels, renamed
    through ``label_map``; unnamed product labels keep tuple form.
    """
    if len(parts) < 2:
        raise InvalidPartitionError("grouping needs at least two parts")
    part_subs = [layout.subsystem(p) for p in parts]
    merged = Subsystem(new_name, _merged_labels(part_subs, label_map))
    part_set = set(parts)
    out: list[Subsystem] = []
    for sub in layout.subsystems:
        if sub.name == parts[0]:
            out.append(merged)
        elif sub.name in part_set:
            continue
        else:
            out.append(sub)
    return SubsystemLayout(tuple(out))


def group_state(
    state: StateVector,
    parts: Sequence[str],
    new_name: str,
    label_map: Mapping[tuple[str, ...], str],
) -> StateVector:
    """Re-express a state over the grouped layout.

    Pure index re-association: amplitudes are permuted, never recomputed, so
    a group followed by an ungroup is bit-identical.
    """
    layout = state.layout
    new_layout = group_layout(layout, parts, new_name, label_map)
    part_axes = [layout.axis(p) for p in parts]
    part_set = set(part_axes)
    order: list[int] = []
    for i in range(len(layout.subsystems)):
        if i == part_axes[0]:
            order.extend(part_axes)
        elif i in part_set:
            continue
        else:
            order.append(i)
    t = state.tensor_view().transpose(order)
    return StateVector(new_layout, t.reshape(new_layout.dimension),
                       input_norm=state.input_norm)


def ungroup_state(
    state: StateVector,
    name: str,
    parts: Sequence[tuple[str, Sequence[str]]],
    label_map: Mapping[tuple[str, ...], str],
) -> StateVector:
    """Split a grouped subsystem back into its parts (placed consecutively
    at the grouped position)."""
    layout = state.layout
    axis = layout.axis(name)
    part_subs = [Subsystem(n, tuple(labels)) for n, labels in parts]
    expected = _merged_labels(part_subs, label_map)
    if layout.subsystems[axis].labels != expected:
        raise NonInjectiveLabelMapError(
            f"grouped labels of {name!r} do not match the declared parts/label_map"
        )
    subs = (
        layout.subsystems[:axis] + tuple(part_subs) + layout.subsystems[axis + 1:]
    )
    new_layout = SubsystemLayout(subs)
    return StateVector(new_layout, state.amplitudes.copy(), input_norm=state.input_norm)
