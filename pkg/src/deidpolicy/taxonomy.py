"""Quasi-identifier generalization hierarchies, policies, and policy codes.

A hierarchy assigns each attribute (age, race, sex, ethnicity) an ordered
list of levels, finest first. Every level is a partition of the attribute's
atomic domain, each level is a coarsening of the one before it, and the last
level collapses the attribute to a single suppressed cell coded ``*``. A
generalization policy picks one level per attribute and is named by a
four-character code (age, race, sex, ethnicity symbols in that order).

Hierarchies are data: they are loaded from a YAML document whose schema is
shown by :data:`DEFAULT_HIERARCHY_YAML`, the built-in default.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import InvalidPolicyCodeError, ValidationError

ATTRIBUTES = ("age", "race", "sex", "ethnicity")

SUPPRESSED = "*"

# Built-in hierarchy. Age widths run 1/5/15/30/60 years before suppression
# (each width divides the next, so every level coarsens the one before it);
# race narrows 6 -> 5 (AIAN and NHPI merged) -> 3 -> suppressed; sex and
# ethnicity are either shared or suppressed.
DEFAULT_HIERARCHY_YAML = """\
age:
  kind: integer
  max: 100            # ages at or above the cap are one top-coded atom
  levels:
    - {symbol: "1", width: 1}
    - {symbol: "2", width: 5}
    - {symbol: "3", width: 15}
    - {symbol: "4", width: 30}
    - {symbol: "5", width: 60}
    - {symbol: "*", suppress: true}
race:
  kind: categorical
  atoms:
    - White
    - Black or African American
    - Asian
    - American Indian or Alaska Native
    - Native Hawaiian or Pacific Islander
    - Multiple/Other
  levels:
    - {symbol: A, identity: true}
    - symbol: B
      groups:
        - {label: White, members: [White]}
        - {label: Black or African American, members: [Black or African American]}
        - {label: Asian, members: [Asian]}
        - label: AIAN or PI
          members: [American Indian or Alaska Native, Native Hawaiian or Pacific Islander]
        - {label: Multiple/Other, members: [Multiple/Other]}
    - symbol: C
      groups:
        - {label: White, members: [White]}
        - {label: Black or African American, members: [Black or African American]}
        - label: Other
          members:
            - Asian
            - American Indian or Alaska Native
            - Native Hawaiian or Pacific Islander
            - Multiple/Other
    - {symbol: "*", suppress: true}
sex:
  kind: categorical
  atoms: [Female, Male]
  levels:
    - {symbol: s, identity: true}
    - {symbol: "*", suppress: true}
ethnicity:
  kind: categorical
  atoms: [Hispanic-Latino, Non-Hispanic]
  levels:
    - {symbol: e, identity: true}
    - {symbol: "*", suppress: true}
"""


@dataclass(frozen=True)
class Level:
    """One partition of an attribute's atomic domain.

    ``atom_to_cell[i]`` is the index into ``cells`` for atom ``i``.
    """

    symbol: str
    cells: tuple[str, ...]
    atom_to_cell: tuple[int, ...]

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_atoms(self) -> int:
        return len(self.atom_to_cell)


@dataclass(frozen=True)
class AttributeHierarchy:
    """Ordered levels (finest first, suppressed last) for one attribute."""

    name: str
    atoms: tuple[str, ...]
    levels: tuple[Level, ...]

    def __post_init__(self):
        symbols = [lv.symbol for lv in self.levels]
        if len(set(symbols)) != len(symbols):
            raise ValidationError(f"{self.name}: duplicate level symbols {symbols}")
        for lv in self.levels:
            if lv.n_atoms != len(self.atoms):
                raise ValidationError(
                    f"{self.name}: level {lv.symbol!r} maps {lv.n_atoms} atoms, "
                    f"domain has {len(self.atoms)}"
                )
            used = set(lv.atom_to_cell)
            if used != set(range(lv.n_cells)):
                raise ValidationError(
                    f"{self.name}: level {lv.symbol!r} has unused or out-of-range cells"
                )
        last = self.levels[-1]
        if last.n_cells != 1 or last.symbol != SUPPRESSED:
            raise ValidationError(
                f"{self.name}: last level must be the suppressed single cell '{SUPPRESSED}'"
            )
        # each level must refine the next coarser one: the map atom -> coarse
        # cell has to factor through atom -> fine cell
        for fine, coarse in itertools.pairwise(self.levels):
            seen: dict[int, int] = {}
            for a in range(len(self.atoms)):
                fc, cc = fine.atom_to_cell[a], coarse.atom_to_cell[a]
                if seen.setdefault(fc, cc) != cc:
                    raise ValidationError(
                        f"{self.name}: level {coarse.symbol!r} does not coarsen "
                        f"level {fine.symbol!r} (cell {fine.cells[fc]!r} splits)"
                    )

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level_by_symbol(self, symbol: str) -> int:
        for i, lv in enumerate(self.levels):
            if lv.symbol == symbol:
                return i
        raise KeyError(symbol)

    def atom_index(self, label: str) -> int:
        try:
            return self.atoms.index(label)
        except ValueError:
            raise ValidationError(
                f"unknown {self.name} value {label!r}; accepted: {list(self.atoms)}"
            ) from None


@dataclass(frozen=True)
class HierarchySet:
    """The four attribute hierarchies governing a policy lattice."""

    age: AttributeHierarchy
    race: AttributeHierarchy
    sex: AttributeHierarchy
    ethnicity: AttributeHierarchy

    @property
    def attributes(self) -> tuple[AttributeHierarchy, ...]:
        return (self.age, self.race, self.sex, self.ethnicity)

    @property
    def atom_sizes(self) -> tuple[int, ...]:
        return tuple(len(a.atoms) for a in self.attributes)

    @property
    def n_bins(self) -> int:
        """Number of atomic demographic bins (cartesian product of domains)."""
        n = 1
        for s in self.atom_sizes:
            n *= s
        return n

    @property
    def n_policies(self) -> int:
        n = 1
        for a in self.attributes:
            n *= a.n_levels
        return n

    def bin_index(self, age_atom: int, race_atom: int, sex_atom: int, eth_atom: int) -> int:
        """Canonical index of an atomic bin, age-major in attribute order."""
        na, nr, ns, ne = self.atom_sizes
        if not (0 <= age_atom < na and 0 <= race_atom < nr
                and 0 <= sex_atom < ns and 0 <= eth_atom < ne):
            raise ValidationError("atomic value outside the hierarchy's domains")
        return ((age_atom * nr + race_atom) * ns + sex_atom) * ne + eth_atom

    def policy(self, age: int, race: int, sex: int, ethnicity: int) -> "GeneralizationPolicy":
        idx = (age, race, sex, ethnicity)
        levels = []
        for a, i in zip(self.attributes, idx):
            if not 0 <= i < a.n_levels:
                raise ValidationError(f"{a.name} has no level index {i}")
            levels.append(a.levels[i])
        code = "".join(lv.symbol for lv in levels)
        return GeneralizationPolicy(
            levels=tuple(levels), code=code, indices=idx, hierarchy=self
        )

    def finest_policy(self) -> "GeneralizationPolicy":
        return self.policy(0, 0, 0, 0)


@dataclass(frozen=True)
class GeneralizationPolicy:
    """One generalization level per attribute, named by a 4-character code.

    Policies built from a :class:`HierarchySet` carry their level indices and
    belong to its lattice; custom policies (explicit levels, e.g. the static
    k-anonymous baseline) have ``indices``/``hierarchy`` set to ``None`` and
    are usable everywhere except lattice comparisons.
    """

    levels: tuple[Level, ...]
    code: str
    indices: tuple[int, int, int, int] | None = None
    hierarchy: HierarchySet | None = field(default=None, repr=False, compare=False)

    @property
    def age_level(self) -> int | None:
        return None if self.indices is None else self.indices[0]

    @property
    def race_level(self) -> int | None:
        return None if self.indices is None else self.indices[1]

    @property
    def sex_level(self) -> int | None:
        return None if self.indices is None else self.indices[2]

    @property
    def ethnicity_level(self) -> int | None:
        return None if self.indices is None else self.indices[3]

    @property
    def atom_sizes(self) -> tuple[int, ...]:
        return tuple(lv.n_atoms for lv in self.levels)

    @property
    def n_keys(self) -> int:
        n = 1
        for lv in self.levels:
            n *= lv.n_cells
        return n


# a generalized key is the tuple of cell labels in attribute order
# (age, race, sex, ethnicity); the suppressed cell is "*"
GeneralizedKey = tuple[str, str, str, str]


def parse_policy_code(code: str, hierarchy: HierarchySet) -> GeneralizationPolicy:
    """Resolve a 4-character policy code against a hierarchy."""
    if len(code) != 4:
        raise InvalidPolicyCodeError(
            f"policy code must have 4 characters, got {code!r}"
        )
    indices = []
    for pos, (ch, attr) in enumerate(zip(code, hierarchy.attributes), start=1):
        try:
            indices.append(attr.level_by_symbol(ch))
        except KeyError:
            raise InvalidPolicyCodeError(
                f"invalid policy code {code!r}: unknown {attr.name} symbol {ch!r} "
                f"at position {pos}"
            ) from None
    return hierarchy.policy(*indices)


def enumerate_policies(hierarchy: HierarchySet) -> list[GeneralizationPolicy]:
    """All policies of the lattice, age-major, finest level first."""
    ranges = [range(a.n_levels) for a in hierarchy.attributes]
    return [hierarchy.policy(*idx) for idx in itertools.product(*ranges)]


def generalizes(coarse: GeneralizationPolicy, fine: GeneralizationPolicy) -> bool:
    """True iff ``coarse`` is at least as generalized as ``fine`` on every attribute."""
    if coarse.indices is None or fine.indices is None:
        raise ValidationError("generalizes() requires lattice policies")
    if coarse.hierarchy != fine.hierarchy:
        raise ValidationError("policies belong to different hierarchy sets")
    return all(c >= f for c, f in zip(coarse.indices, fine.indices))


def generalize_bin(atomic, policy: GeneralizationPolicy) -> GeneralizedKey:
    """Map an atomic bin through each attribute's level partition.

    ``atomic`` supplies ``age_year``, ``race``, ``sex``, ``ethnicity`` (see
    :class:`deidpolicy.population.AtomicBin`); the policy's own levels define
    the atomic domains, so custom policies work too.
    """
    age_lv, race_lv, sex_lv, eth_lv = policy.levels
    age = int(atomic.age_year)
    if not 0 <= age < age_lv.n_atoms:
        raise ValidationError(f"age {age} outside atomic domain 0..{age_lv.n_atoms - 1}")
    cells = []
    for lv, atom in (
        (age_lv, age),
        (race_lv, _categorical_atom(policy, 1, atomic.race)),
        (sex_lv, _categorical_atom(policy, 2, atomic.sex)),
        (eth_lv, _categorical_atom(policy, 3, atomic.ethnicity)),
    ):
        cells.append(lv.cells[lv.atom_to_cell[atom]])
    return tuple(cells)


def _categorical_atom(policy: GeneralizationPolicy, attr_pos: int, label: str) -> int:
    if policy.hierarchy is not None:
        return policy.hierarchy.attributes[attr_pos].atom_index(label)
    # custom policy: recover the atom from the finest available information,
    # the level's own cells when it is an identity partition
    lv = policy.levels[attr_pos]
    if lv.n_cells == lv.n_atoms:
        try:
            return lv.cells.index(label)
        except ValueError:
            pass
    raise ValidationError(
        f"unknown {ATTRIBUTES[attr_pos]} value {label!r} for custom policy"
    )


def policy_key_index(policy: GeneralizationPolicy) -> tuple[np.ndarray, int]:
    """Vector mapping canonical atomic-bin index -> generalized-key index.

    Key indices follow the same age-major layout as bins, over the policy's
    cells. Returns ``(key_index, n_keys)`` with ``key_index`` of dtype int32
    and length ``prod(atom_sizes)``.
    """
    maps = [np.asarray(lv.atom_to_cell, dtype=np.int64) for lv in policy.levels]
    sizes = [lv.n_cells for lv in policy.levels]
    a, r, s, e = np.ix_(*maps)
    key = ((a * sizes[1] + r) * sizes[2] + s) * sizes[3] + e
    return key.reshape(-1).astype(np.int32), policy.n_keys


def key_labels(policy: GeneralizationPolicy, key_index: int) -> GeneralizedKey:
    """Cell labels of a generalized-key index produced by :func:`policy_key_index`."""
    sizes = [lv.n_cells for lv in policy.levels]
    cells = []
    rem = key_index
    for size in reversed(sizes):
        rem, c = divmod(rem, size)
        cells.append(c)
    cells.reverse()
    return tuple(lv.cells[c] for lv, c in zip(policy.levels, cells))


def integer_level(symbol: str, n_atoms: int, *, width: int | None = None,
                  breaks: list[int] | None = None, suppress: bool = False) -> Level:
    """Build an age-style level from a range width or explicit break points."""
    top = n_atoms - 1
    if suppress:
        return Level(symbol, (SUPPRESSED,), (0,) * n_atoms)
    if width is not None:
        if width < 1:
            raise ValidationError(f"level {symbol!r}: width must be >= 1")
        breaks = list(range(0, n_atoms, width))
    if not breaks or breaks[0] != 0 or list(breaks) != sorted(set(breaks)) or breaks[-1] > top:
        raise ValidationError(
            f"level {symbol!r}: breaks must be ascending, start at 0, stay within 0..{top}"
        )
    cells = []
    mapping = np.empty(n_atoms, dtype=np.int64)
    for i, lo in enumerate(breaks):
        hi = (breaks[i + 1] - 1) if i + 1 < len(breaks) else top
        if hi >= top:
            label = f"{lo}+"
        elif hi == lo:
            label = f"{lo}"
        else:
            label = f"{lo}-{hi}"
        cells.append(label)
        mapping[lo:hi + 1] = i
    return Level(symbol, tuple(cells), tuple(int(x) for x in mapping))


def _categorical_level(name: str, symbol: str, atoms: tuple[str, ...],
                       spec: dict) -> Level:
    if spec.get("suppress"):
        return Level(symbol, (SUPPRESSED,), (0,) * len(atoms))
    if spec.get("identity"):
        return Level(symbol, atoms, tuple(range(len(atoms))))
    groups = spec.get("groups")
    if not groups:
        raise ValidationError(f"{name}: level {symbol!r} needs groups/identity/suppress")
    cells, mapping = [], {}
    for g in groups:
        label, members = g["label"], g["members"]
        cell = len(cells)
        cells.append(label)
        for m in members:
            if m not in atoms:
                raise ValidationError(f"{name}: level {symbol!r} references unknown atom {m!r}")
            if m in mapping:
                raise ValidationError(f"{name}: level {symbol!r} assigns {m!r} twice")
            mapping[m] = cell
    missing = [a for a in atoms if a not in mapping]
    if missing:
        raise ValidationError(f"{name}: level {symbol!r} leaves atoms unassigned: {missing}")
    return Level(symbol, tuple(cells), tuple(mapping[a] for a in atoms))


def _build_attribute(name: str, spec: dict) -> AttributeHierarchy:
    kind = spec.get("kind")
    if kind == "integer":
        top = int(spec.get("max", 100))
        atoms = tuple(str(v) for v in range(top)) + (f"{top}+",)
        levels = []
        for lv in spec["levels"]:
            levels.append(integer_level(
                str(lv["symbol"]), len(atoms),
                width=lv.get("width"), breaks=lv.get("breaks"),
                suppress=bool(lv.get("suppress", False)),
            ))
        return AttributeHierarchy(name, atoms, tuple(levels))
    if kind == "categorical":
        atoms = tuple(spec["atoms"])
        if len(set(atoms)) != len(atoms):
            raise ValidationError(f"{name}: duplicate atoms")
        levels = tuple(
            _categorical_level(name, str(lv["symbol"]), atoms, lv) for lv in spec["levels"]
        )
        return AttributeHierarchy(name, atoms, levels)
    raise ValidationError(f"{name}: unknown attribute kind {kind!r}")


def load_hierarchy(text_or_path) -> HierarchySet:
    """Load a hierarchy set from YAML text, a mapping, or a file path."""
    if isinstance(text_or_path, dict):
        doc = text_or_path
    else:
        text = str(text_or_path)
        if "\n" not in text and text.endswith((".yml", ".yaml")):
            with open(text, "r", encoding="utf-8") as fh:
                doc = yaml.safe_load(fh)
        else:
            doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ValidationError("hierarchy config must be a mapping of attributes")
    missing = [a for a in ATTRIBUTES if a not in doc]
    if missing:
        raise ValidationError(f"hierarchy config missing attributes: {missing}")
    attrs = {name: _build_attribute(name, doc[name]) for name in ATTRIBUTES}
    return HierarchySet(**attrs)


def default_hierarchy() -> HierarchySet:
    """The built-in hierarchy: 6 age, 4 race, 2 sex, 2 ethnicity levels."""
    return load_hierarchy(DEFAULT_HIERARCHY_YAML)
