"""Concept schemas, concept-value vectors, and combination enumeration.

A schema is an ordered list of discrete concepts; concept 0 is the
classification target.  Concept r takes integer values 1..n_r.  A fully
specified value vector is a "combination" -- one element of the Cartesian
product of all outcome sets.  Value 0 is the MISSING sentinel for
partially labeled images.
"""

import itertools
from collections import Counter
from dataclasses import dataclass

from .errors import FicblError

# Sentinel for an unlabeled concept slot (valid values are 1-based).
MISSING = 0

Combination = tuple[int, ...]


@dataclass(frozen=True)
class ConceptSchema:
    """Ordered concept names and cardinalities; index 0 is the target."""

    names: tuple[str, ...]
    cardinalities: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.cardinalities) or not self.names:
            raise FicblError("schema needs matching, non-empty name/cardinality lists")
        if len(set(self.names)) != len(self.names) or any(not n for n in self.names):
            raise FicblError("concept names must be unique and non-empty")
        if any(n < 2 for n in self.cardinalities):
            raise FicblError("every concept needs at least two outcomes")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def n_combinations(self) -> int:
        total = 1
        for n in self.cardinalities:
            total *= n
        return total

    def index_of(self, name: str) -> int:
        """Resolve a concept by declared name or by the alias c<index>."""
        if name in self.names:
            return self.names.index(name)
        if name.startswith("c") and name[1:].isdigit():
            idx = int(name[1:])
            if 0 <= idx < len(self):
                return idx
        raise FicblError(f"unknown concept {name!r}")

    def validate_vector(self, values, allow_missing: bool = True) -> Combination:
        """Check length and per-concept range; returns the tuple form."""
        vec = tuple(int(v) for v in values)
        if len(vec) != len(self):
            raise FicblError(f"expected {len(self)} concept values, got {len(vec)}")
        for r, v in enumerate(vec):
            if v == MISSING:
                if not allow_missing:
                    raise FicblError(f"concept {self.names[r]} is missing a value")
                continue
            if not 1 <= v <= self.cardinalities[r]:
                raise FicblError(
                    f"value {v} out of range 1..{self.cardinalities[r]} "
                    f"for concept {self.names[r]}"
                )
        return vec


def schema_from_cardinalities(cards, names=None) -> ConceptSchema:
    """Build a schema with default names c0, c1, ... when none are given."""
    cards = tuple(int(c) for c in cards)
    if names is None:
        names = tuple(f"c{i}" for i in range(len(cards)))
    return ConceptSchema(tuple(names), cards)


def enumerate_combinations(schema: ConceptSchema) -> list[Combination]:
    """All combinations in lexicographic order, concept 0 most significant."""
    ranges = [range(1, n + 1) for n in schema.cardinalities]
    return list(itertools.product(*ranges))


def restrict_combinations(schema: ConceptSchema, r: int, v: int) -> list[Combination]:
    """Combinations with concept r pinned to value v, same ordering."""
    if not 0 <= r < len(schema):
        raise FicblError(f"concept index {r} out of range")
    if not 1 <= v <= schema.cardinalities[r]:
        raise FicblError(f"value {v} out of range for concept {schema.names[r]}")
    ranges = [range(1, n + 1) for n in schema.cardinalities]
    ranges[r] = range(v, v + 1)
    return list(itertools.product(*ranges))


def empirical_joint(labels, schema: ConceptSchema) -> dict[Combination, float]:
    """Proportion of images per observed combination.

    Only fully labeled vectors are admissible; combinations that never
    occur are simply absent from the map.
    """
    labels = list(labels)
    if not labels:
        raise FicblError("cannot build an empirical joint from zero labels")
    counts: Counter[Combination] = Counter()
    for vec in labels:
        counts[schema.validate_vector(vec, allow_missing=False)] += 1
    n = len(labels)
    return {z: c / n for z, c in sorted(counts.items())}
