"""Observer-based novelty and realism of a generative model's outputs.

Everything is computed exhaustively over a small finite universe of items.
Counts are kept as integers and rates as ``fractions.Fraction``; a rate whose
denominator is empty is reported as ``None`` rather than raising.
"""

from __future__ import annotations

from collections.abc import Callable, Hashable, Iterable
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .io import atomic_write, read_csv, write_csv

Matcher = Callable[[Hashable, Hashable], float]
Classifier = Callable[[Hashable], int]


@dataclass
class Universe:
    items: tuple  # item ids, unique
    bits: dict = field(default_factory=dict)  # item id -> tuple of 0/1
    classes: dict = field(default_factory=dict)  # item id -> class id

    def __post_init__(self):
        self.items = tuple(self.items)
        if not self.items:
            raise ValueError("universe must hold at least one item")
        if len(set(self.items)) != len(self.items):
            raise ValueError("item ids must be unique")
        self._index = frozenset(self.items)

    def __contains__(self, item) -> bool:
        return item in self._index

    def __len__(self) -> int:
        return len(self.items)


def binary_image_universe(h: int = 3, w: int = 3) -> Universe:
    """All 2**(h*w) binary h-by-w images; item id k has the bits of k (MSB first)."""
    n = h * w
    bits = {k: tuple((k >> (n - 1 - j)) & 1 for j in range(n)) for k in range(2 ** n)}
    return Universe(tuple(range(2 ** n)), bits)


def exact_matcher(a, b) -> float:
    return 1.0 if a == b else 0.0


def hamming_matcher(universe: Universe, radius: int) -> Matcher:
    """Similarity 1 - d/(radius+1) inside the Hamming ball, 0 outside."""

    def match(a, b) -> float:
        d = sum(x != y for x, y in zip(universe.bits[a], universe.bits[b]))
        return max(0.0, 1.0 - d / (radius + 1))

    return match


@dataclass
class Observer:
    id: Hashable
    memory: frozenset
    matcher: Matcher = exact_matcher
    classifiers: dict = field(default_factory=dict)  # class id -> item -> {0, 1}

    def __post_init__(self):
        self.memory = frozenset(self.memory)

    def remembers(self, item) -> "Observer":
        return Observer(self.id, self.memory | {item}, self.matcher, self.classifiers)


@dataclass
class ModelOutputSet:
    """Generated items split into realistic (in the universe) and outside ones."""

    inside: frozenset  # I ∩ I_M
    outside: frozenset  # I^c ∩ I_M
    counts: dict = field(default_factory=dict)  # multiplicity of each generated item

    @classmethod
    def from_items(cls, generated: Iterable, universe: Universe) -> "ModelOutputSet":
        counts: dict = {}
        for g in generated:
            counts[g] = counts.get(g, 0) + 1
        inside = frozenset(g for g in counts if g in universe)
        outside = frozenset(g for g in counts if g not in universe)
        return cls(inside, outside, counts)

    @property
    def all_items(self) -> frozenset:
        return self.inside | self.outside

    @property
    def total_draws(self) -> int:
        return sum(self.counts.values())


def novelty_score(x, observers: list[Observer], universe: Universe | None = None) -> float:
    """sum over observers o and remembered items i of M_o(x, i)."""
    if universe is not None and x not in universe:
        raise KeyError(f"unknown item {x!r}")
    return float(sum(o.matcher(x, i) for o in observers for i in o.memory))


def new_set(universe: Universe, observers: list[Observer]) -> frozenset:
    """Items nobody recognises: novelty score exactly 0."""
    return frozenset(x for x in universe.items if novelty_score(x, observers) == 0)


@dataclass
class NoveltyRates:
    n_universe: int
    n_new: int  # |J_O|
    n_inside: int  # |I ∩ I_M|
    n_novel: int  # |I_N| = |I ∩ I_M ∩ J_O|
    intrinsic: Fraction | None  # N_{I,O}
    completeness: Fraction | None  # C_M
    relative: Fraction | None  # N_M
    absolute: Fraction | None  # N_{M,O} via C_M N_M / N_{I,O}
    absolute_direct: Fraction | None  # |I_N| / |J_O|

    def as_dict(self) -> dict:
        return {
            "N_IO": self.intrinsic,
            "C_M": self.completeness,
            "N_M": self.relative,
            "N_MO": self.absolute,
            "N_MO_direct": self.absolute_direct,
        }


def _ratio(num: int, den: int) -> Fraction | None:
    return Fraction(num, den) if den else None


def novelty_rates(universe: Universe, observers: list[Observer], outputs: ModelOutputSet,
                  new: frozenset | None = None) -> NoveltyRates:
    J = new_set(universe, observers) if new is None else new
    novel = outputs.inside & J
    n_I, n_J, n_in, n_N = len(universe), len(J), len(outputs.inside), len(novel)
    N_IO = _ratio(n_J, n_I)
    C_M = _ratio(n_in, n_I)
    N_M = _ratio(n_N, n_in)
    if N_IO is None or C_M is None or N_M is None or N_IO == 0:
        N_MO = None
    else:
        N_MO = C_M * N_M / N_IO
    direct = _ratio(n_N, n_J)
    if N_MO is not None and N_MO != direct:
        raise ArithmeticError(f"novelty relation violated: {N_MO} != {direct}")
    return NoveltyRates(n_I, n_J, n_in, n_N, N_IO, C_M, N_M, N_MO, direct)


def realism(x, observers: list[Observer], class_id) -> Fraction:
    """Fraction of observers who classify x as a realistic member of the class."""
    if not observers:
        raise ValueError("empty observer population")
    votes = sum(int(o.classifiers[class_id](x)) for o in observers)
    return Fraction(votes, len(observers))


def in_class(x, observers: list[Observer], class_id) -> bool:
    return realism(x, observers, class_id) > 0


def model_realism(outputs: ModelOutputSet, observers: list[Observer], class_id) -> Fraction:
    """Mean realism over the distinct generated items."""
    items = sorted(outputs.all_items, key=repr)
    if not items:
        raise ValueError("model produced no items")
    return sum((realism(x, observers, class_id) for x in items), Fraction(0)) / len(items)


def model_realism_multiclass(outputs: ModelOutputSet, observers: list[Observer], class_ids) -> Fraction:
    """Unweighted mean of the per-class model realism."""
    class_ids = list(class_ids)
    if not class_ids:
        raise ValueError("no classes given")
    total = sum((model_realism(outputs, observers, c) for c in class_ids), Fraction(0))
    return total / len(class_ids)


def bridge_from_sampler(generated, universe: Universe, quantizer: Callable) -> ModelOutputSet:
    """Map continuous samples to universe items (or outside keys) with ``quantizer``."""
    return ModelOutputSet.from_items((quantizer(np.asarray(g)) for g in generated), universe)


def binary_quantizer(universe: Universe, tol: float = 0.5):
    """Round each component to the nearer of {0, 1} (data may be on [-1, 1] scale).

    A sample with any component farther than ``tol`` from both levels, after
    mapping [-1, 1] onto [0, 1], lands outside the universe, keyed by its
    rounded coordinates.
    """
    lookup = {b: k for k, b in universe.bits.items()}

    def quantize(x):
        u = (np.asarray(x, dtype=np.float64).ravel() + 1.0) / 2.0
        r = np.clip(np.rint(u), 0, 1).astype(int)
        if np.any(np.abs(u - r) > tol):
            return ("outside",) + tuple(np.round(u, 1).tolist())
        return lookup.get(tuple(r.tolist()), ("outside",) + tuple(r.tolist()))

    return quantize


# text formats ---------------------------------------------------------------

def load_universe(path) -> Universe:
    """Rows of ``item_id,bits`` with bits as a 0/1 string."""
    rows = read_csv(path)
    bits = {int(r["item_id"]): tuple(int(c) for c in r["bits"].strip()) for r in rows}
    return Universe(tuple(bits), bits)


def load_observers(path, matcher: Matcher = exact_matcher) -> list[Observer]:
    """Lines ``observer_id,item,item,...`` (a header line is skipped if present)."""
    observers = []
    with open(path) as fh:
        for ln in fh:
            parts = [p.strip() for p in ln.strip().split(",") if p.strip()]
            if not parts or parts[0] == "observer_id":
                continue
            observers.append(Observer(parts[0], frozenset(int(p) for p in parts[1:]), matcher))
    return observers


def write_observers(path, observers: list[Observer]) -> None:
    with atomic_write(path) as fh:
        fh.write("observer_id,memory_item_ids...\n")
        for o in observers:
            fh.write(",".join([str(o.id), *map(str, sorted(o.memory))]) + "\n")


def write_universe(path, universe: Universe) -> None:
    write_csv(path, ["item_id", "bits"],
              ((k, "".join(map(str, universe.bits[k]))) for k in universe.items))
