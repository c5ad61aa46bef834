"""Synthesis of the three constrained knowledge-graph shards.

Shard 1 stores person facts, shard 2 company facts, shard 3 city facts.
Every head entity carries its full relation set (8/9/5 triples), all
relations are functional (one tail per head), and the shards are linked
only through shared surface strings such as ``City#4``.  Construction
enforces the realism constraints: jobless persons point at the zero-income
value node, mayors hold no job and no company role, and a city's largest
company is located in that city.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "EntityNode",
    "GenerationError",
    "KgConfig",
    "KgParseError",
    "KgSuite",
    "KnowledgeGraph",
    "MergeError",
    "RelationTriple",
    "Violation",
    "generate_kg_suite",
    "load_kg",
    "save_kg",
    "union",
    "validate_constraints",
]

# Relation name -> (head kind, tail kind), in canonical generation order.
G1_SCHEMA = {
    "height": ("PersonName", "height_value"),
    "weight": ("PersonName", "weight_value"),
    "birthday": ("PersonName", "date_value"),
    "gender": ("PersonName", "gender_value"),
    "birthplace": ("PersonName", "CityName"),
    "live_in": ("PersonName", "CityName"),
    "work_in": ("PersonName", "CompanyName"),
    "annual_income": ("PersonName", "annual_income_value"),
}
G2_SCHEMA = {
    "establish_date": ("CompanyName", "date_value"),
    "number_of_employees": ("CompanyName", "number_value"),
    "ceo": ("CompanyName", "PersonName"),
    "founder": ("CompanyName", "PersonName"),
    "main_business": ("CompanyName", "BusinessName"),
    "locate_in": ("CompanyName", "CityName"),
    "has_service_in": ("CompanyName", "CityName"),
    "chairman": ("CompanyName", "PersonName"),
    "market_value": ("CompanyName", "market_value"),
}
G3_SCHEMA = {
    "area": ("CityName", "area_value"),
    "population": ("CityName", "number_value"),
    "mayor": ("CityName", "PersonName"),
    "largest_company": ("CityName", "CompanyName"),
    "contained_by": ("CityName", "StateName"),
}
SCHEMAS = {1: G1_SCHEMA, 2: G2_SCHEMA, 3: G3_SCHEMA}

# Relations whose tails are unique by construction, so the inverse reading
# ("which company is X the CEO of?") is also single-valued.
INVERTIBLE_RELATIONS = ("ceo", "founder", "chairman", "mayor", "largest_company")

ENTITY_KINDS = ("PersonName", "CompanyName", "CityName")
NO_COMPANY = "no_company"
ZERO_INCOME = "$0"


def relation_owner(relation: str) -> int:
    for owner, schema in SCHEMAS.items():
        if relation in schema:
            return owner
    raise KeyError(f"unknown relation {relation!r}")


class GenerationError(ValueError):
    """An infeasible configuration, named by the violated constraint."""


class MergeError(ValueError):
    """Entity id collision while building the union graph."""


class KgParseError(ValueError):
    """A malformed graph file; the message carries the line number."""


@dataclass(frozen=True)
class EntityNode:
    id: int
    kind: str
    surface: str


@dataclass(frozen=True)
class RelationTriple:
    head: int
    relation: str
    tail: int


@dataclass(frozen=True)
class KgConfig:
    """Sizes, value ranges and the live-in/birthplace overlap knob."""

    n_persons: int = 300
    n_companies: int = 200
    n_cities: int = 50
    overlap_ratio: float = 0.99
    jobless_fraction: float = 0.25
    n_states: int = 5
    n_businesses: int = 20
    height_cm: tuple[int, int, int] = (160, 200, 2)
    weight_kg: tuple[int, int, int] = (45, 105, 2)
    birth_years: tuple[int, int] = (1950, 1999)
    income_usd: tuple[int, int, int] = (10_000, 300_000, 10_000)
    establish_years: tuple[int, int] = (1900, 2019)
    employees: tuple[int, int, int] = (10, 10_000, 10)
    market_value_billions: tuple[int, int] = (1, 101)
    area_km2: tuple[int, int] = (100, 499)
    population: tuple[int, int, int] = (1_000, 1_000_000, 1_000)
    seed: int = 0

    def __post_init__(self):
        if min(self.n_persons, self.n_companies, self.n_cities) < 1:
            raise GenerationError("entity counts must be positive")
        if not 0.0 <= self.overlap_ratio <= 1.0:
            raise GenerationError(
                f"overlap_ratio must lie in [0, 1], got {self.overlap_ratio}")
        if not 0.0 <= self.jobless_fraction <= 1.0:
            raise GenerationError(
                f"jobless_fraction must lie in [0, 1], got {self.jobless_fraction}")


class KnowledgeGraph:
    """One shard (or the union): typed entities plus relation triples.

    Entities are sorted by id and triples by (head, relation, tail) at
    construction; that canonical order is what the serializer emits, so a
    load/save round trip is byte identical.
    """

    def __init__(self, owner: int, entities: list[EntityNode],
                 triples: list[RelationTriple]):
        self.owner = owner
        self.entities = sorted(entities, key=lambda e: e.id)
        self.triples = sorted(triples, key=lambda t: (t.head, t.relation, t.tail))
        self.entity_by_id: dict[int, EntityNode] = {}
        # Surfaces are unique within a shard; in the union (owner 0) the same
        # surface legitimately appears once per shard, so no map is kept.
        self.id_by_surface: dict[str, int] = {}
        for e in self.entities:
            if not e.surface:
                raise ValueError(f"entity {e.id} has an empty surface")
            if e.id in self.entity_by_id:
                raise ValueError(f"duplicate entity id {e.id}")
            self.entity_by_id[e.id] = e
            if owner != 0:
                if e.surface in self.id_by_surface:
                    raise ValueError(f"duplicate surface {e.surface!r} in shard {owner}")
                self.id_by_surface[e.surface] = e.id
        schema = self.schema()
        for t in self.triples:
            if t.head not in self.entity_by_id or t.tail not in self.entity_by_id:
                raise ValueError(f"triple {t} references an unknown entity id")
            if t.relation not in schema:
                raise ValueError(
                    f"relation {t.relation!r} is not in shard {owner}'s schema")

    def schema(self) -> dict[str, tuple[str, str]]:
        if self.owner == 0:
            merged: dict[str, tuple[str, str]] = {}
            for s in SCHEMAS.values():
                merged.update(s)
            return merged
        return SCHEMAS[self.owner]

    def surface(self, entity_id: int) -> str:
        return self.entity_by_id[entity_id].surface

    def surfaces_of_kind(self, kind: str) -> list[str]:
        return [e.surface for e in self.entities if e.kind == kind]

    def tail_surface(self, relation: str, head_surface: str) -> str | None:
        head_id = self.id_by_surface.get(head_surface)
        if head_id is None:
            return None
        return self._tail_map().get((head_id, relation))

    def head_surface(self, relation: str, tail_surface: str) -> str | None:
        tail_id = self.id_by_surface.get(tail_surface)
        if tail_id is None:
            return None
        return self._head_map().get((relation, tail_id))

    def _tail_map(self) -> dict[tuple[int, str], str]:
        if not hasattr(self, "_tails"):
            self._tails = {(t.head, t.relation): self.surface(t.tail)
                           for t in self.triples}
        return self._tails

    def _head_map(self) -> dict[tuple[str, int], str]:
        if not hasattr(self, "_heads"):
            self._heads = {(t.relation, t.tail): self.surface(t.head)
                           for t in self.triples
                           if t.relation in INVERTIBLE_RELATIONS}
        return self._heads

    def __repr__(self) -> str:
        return (f"KnowledgeGraph(owner={self.owner}, entities={len(self.entities)}, "
                f"triples={len(self.triples)})")


@dataclass
class KgSuite:
    """The three shards plus the configuration they were generated from."""

    shards: tuple[KnowledgeGraph, KnowledgeGraph, KnowledgeGraph]
    config: KgConfig

    def shard(self, owner: int) -> KnowledgeGraph:
        return self.shards[owner - 1]

    def with_shard(self, owner: int, graph: KnowledgeGraph) -> "KgSuite":
        shards = list(self.shards)
        shards[owner - 1] = graph
        return KgSuite(tuple(shards), self.config)


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str


class _GraphBuilder:
    def __init__(self, owner: int, counter: list[int]):
        self.owner = owner
        self._counter = counter
        self.entities: list[EntityNode] = []
        self.triples: list[RelationTriple] = []
        self._ids: dict[tuple[str, str], int] = {}

    def entity(self, kind: str, surface: str) -> int:
        key = (kind, surface)
        if key not in self._ids:
            self._counter[0] += 1
            node = EntityNode(self._counter[0], kind, surface)
            self.entities.append(node)
            self._ids[key] = node.id
        return self._ids[key]

    def triple(self, head: int, relation: str, tail: int) -> None:
        self.triples.append(RelationTriple(head, relation, tail))

    def build(self) -> KnowledgeGraph:
        return KnowledgeGraph(self.owner, self.entities, self.triples)


def _grid(lo: int, hi: int, step: int) -> np.ndarray:
    return np.arange(lo, hi + 1, step)


def _date_surface(rng: np.random.Generator, years: tuple[int, int]) -> str:
    y = int(rng.integers(years[0], years[1] + 1))
    m = int(rng.integers(1, 13))
    d = int(rng.integers(1, 29))
    return f"{y:04d}-{m:02d}-{d:02d}"


def generate_kg_suite(cfg: KgConfig) -> KgSuite:
    """Generate the three shards deterministically from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    n1, n2, n3 = cfg.n_persons, cfg.n_companies, cfg.n_cities

    persons = [f"Person#{i}" for i in range(1, n1 + 1)]
    companies = [f"Company#{i}" for i in range(1, n2 + 1)]
    cities = [f"City#{i}" for i in range(1, n3 + 1)]
    states = [f"State#{i}" for i in range(1, cfg.n_states + 1)]
    businesses = [f"Business#{i}" for i in range(1, cfg.n_businesses + 1)]

    if cfg.overlap_ratio < 1.0 and n3 < 2:
        raise GenerationError(
            "overlap_ratio < 1 needs at least 2 cities so live_in can differ "
            "from birthplace")
    if n2 < n3:
        raise GenerationError(
            "largest_company constraint needs one company per city: "
            f"n_companies={n2} < n_cities={n3}")

    n_jobless = int(round(cfg.jobless_fraction * n1))
    if n_jobless < n3:
        raise GenerationError(
            "mayor/employee exclusion needs one jobless person per city: "
            f"{n_jobless} jobless < {n3} cities (raise jobless_fraction or "
            "lower n_cities)")
    jobless_idx = np.sort(rng.choice(n1, size=n_jobless, replace=False))
    jobless = set(int(i) for i in jobless_idx)
    mayor_idx = rng.choice(jobless_idx, size=n3, replace=False)
    mayors = set(int(i) for i in mayor_idx)

    non_mayors = np.array([i for i in range(n1) if i not in mayors])
    if len(non_mayors) < n2:
        raise GenerationError(
            "mayor/employee exclusion leaves too few persons for company "
            f"roles: {len(non_mayors)} non-mayors < {n2} companies")

    counter = [0]
    g1 = _GraphBuilder(1, counter)
    g2 = _GraphBuilder(2, counter)
    g3 = _GraphBuilder(3, counter)

    heights = _grid(*cfg.height_cm)
    weights = _grid(*cfg.weight_kg)
    incomes = _grid(*cfg.income_usd)
    employee_counts = _grid(*cfg.employees)
    populations = _grid(*cfg.population)

    # Shard 1: eight facts per person, in schema order.
    for i, person in enumerate(persons):
        p = g1.entity("PersonName", person)
        g1.triple(p, "height", g1.entity(
            "height_value", f"{int(rng.choice(heights))}cm"))
        g1.triple(p, "weight", g1.entity(
            "weight_value", f"{int(rng.choice(weights))}kg"))
        g1.triple(p, "birthday", g1.entity(
            "date_value", _date_surface(rng, cfg.birth_years)))
        g1.triple(p, "gender", g1.entity(
            "gender_value", "male" if rng.random() < 0.5 else "female"))
        birth_city = int(rng.integers(n3))
        g1.triple(p, "birthplace", g1.entity("CityName", cities[birth_city]))
        if rng.random() < cfg.overlap_ratio:
            live_city = birth_city
        else:
            live_city = int(rng.integers(n3 - 1))
            if live_city >= birth_city:
                live_city += 1
        g1.triple(p, "live_in", g1.entity("CityName", cities[live_city]))
        if i in jobless:
            g1.triple(p, "work_in", g1.entity("CompanyName", NO_COMPANY))
            g1.triple(p, "annual_income", g1.entity(
                "annual_income_value", ZERO_INCOME))
        else:
            g1.triple(p, "work_in", g1.entity(
                "CompanyName", companies[int(rng.integers(n2))]))
            g1.triple(p, "annual_income", g1.entity(
                "annual_income_value", f"${int(rng.choice(incomes))}"))

    # Shard 2: nine facts per company.  CEO/founder/chairman are unique per
    # role and never mayors, so the inverse readings stay single-valued.
    roles = {}
    for role in ("ceo", "founder", "chairman"):
        roles[role] = rng.permutation(non_mayors)[:n2]
    company_city = np.concatenate(
        [np.arange(n3), rng.integers(0, n3, size=n2 - n3)])
    company_city = rng.permutation(company_city)
    located: dict[int, list[int]] = {c: [] for c in range(n3)}
    for j, company in enumerate(companies):
        c = g2.entity("CompanyName", company)
        g2.triple(c, "establish_date", g2.entity(
            "date_value", _date_surface(rng, cfg.establish_years)))
        g2.triple(c, "number_of_employees", g2.entity(
            "number_value", str(int(rng.choice(employee_counts)))))
        g2.triple(c, "ceo", g2.entity("PersonName", persons[int(roles["ceo"][j])]))
        g2.triple(c, "founder", g2.entity(
            "PersonName", persons[int(roles["founder"][j])]))
        g2.triple(c, "main_business", g2.entity(
            "BusinessName", businesses[int(rng.integers(cfg.n_businesses))]))
        city = int(company_city[j])
        located[city].append(j)
        g2.triple(c, "locate_in", g2.entity("CityName", cities[city]))
        g2.triple(c, "has_service_in", g2.entity(
            "CityName", cities[int(rng.integers(n3))]))
        g2.triple(c, "chairman", g2.entity(
            "PersonName", persons[int(roles["chairman"][j])]))
        lo, hi = cfg.market_value_billions
        g2.triple(c, "market_value", g2.entity(
            "market_value", f"${int(rng.integers(lo, hi + 1))}B"))

    # Shard 3: five facts per city; the largest company comes from the
    # companies located there.
    for k, city in enumerate(cities):
        c = g3.entity("CityName", city)
        g3.triple(c, "area", g3.entity(
            "area_value", f"{int(rng.integers(cfg.area_km2[0], cfg.area_km2[1] + 1))}km2"))
        g3.triple(c, "population", g3.entity(
            "number_value", str(int(rng.choice(populations)))))
        g3.triple(c, "mayor", g3.entity("PersonName", persons[int(mayor_idx[k])]))
        largest = located[k][int(rng.integers(len(located[k])))]
        g3.triple(c, "largest_company", g3.entity("CompanyName", companies[largest]))
        g3.triple(c, "contained_by", g3.entity(
            "StateName", states[int(rng.integers(cfg.n_states))]))

    return KgSuite((g1.build(), g2.build(), g3.build()), cfg)


# ----------------------------------------------------------------- validation


def _allowed_surfaces(cfg: KgConfig) -> dict[str, set[str] | None]:
    """Per value kind, the set of admissible surfaces (None = checked ad hoc)."""
    return {
        "height_value": {f"{v}cm" for v in _grid(*cfg.height_cm)},
        "weight_value": {f"{v}kg" for v in _grid(*cfg.weight_kg)},
        "gender_value": {"male", "female"},
        "annual_income_value": {ZERO_INCOME} | {f"${v}" for v in _grid(*cfg.income_usd)},
        "number_value": None,
        "market_value": {f"${v}B" for v in range(cfg.market_value_billions[0],
                                                 cfg.market_value_billions[1] + 1)},
        "area_value": {f"{v}km2" for v in range(cfg.area_km2[0], cfg.area_km2[1] + 1)},
        "date_value": None,
    }


def _check_date(surface: str, years: tuple[int, int]) -> bool:
    parts = surface.split("-")
    if len(parts) != 3:
        return False
    try:
        y, m, d = (int(p) for p in parts)
    except ValueError:
        return False
    return years[0] <= y <= years[1] and 1 <= m <= 12 and 1 <= d <= 28


def validate_constraints(suite: KgSuite) -> list[Violation]:
    """Exhaustively re-check every construction constraint; [] iff clean."""
    cfg = suite.config
    out: list[Violation] = []
    allowed = _allowed_surfaces(cfg)

    g1, g2, g3 = suite.shards

    # Functional relations: one tail per (head, relation); also one head per
    # (relation, tail) for the invertible relations.
    for g in suite.shards:
        seen: dict[tuple[int, str], int] = {}
        inv_seen: dict[tuple[str, int], int] = {}
        for t in g.triples:
            key = (t.head, t.relation)
            if key in seen:
                out.append(Violation(
                    "functional",
                    f"shard {g.owner}: {g.surface(t.head)} has multiple "
                    f"{t.relation} tails"))
            seen[key] = t.tail
            if t.relation in INVERTIBLE_RELATIONS:
                ikey = (t.relation, t.tail)
                if ikey in inv_seen:
                    out.append(Violation(
                        "functional",
                        f"shard {g.owner}: {g.surface(t.tail)} is the "
                        f"{t.relation} of multiple heads"))
                inv_seen[ikey] = t.head

    # Every head carries its complete relation set.
    for g, kind in ((g1, "PersonName"), (g2, "CompanyName"), (g3, "CityName")):
        schema_rels = set(g.schema())
        by_head: dict[int, set[str]] = {}
        for t in g.triples:
            by_head.setdefault(t.head, set()).add(t.relation)
        for e in g.entities:
            if e.kind != kind or e.surface == NO_COMPANY:
                continue
            missing = schema_rels - by_head.get(e.id, set())
            if missing:
                out.append(Violation(
                    "completeness",
                    f"shard {g.owner}: {e.surface} lacks {sorted(missing)}"))

    # Income/job consistency, both directions.
    work = {g1.surface(t.head): g1.surface(t.tail)
            for t in g1.triples if t.relation == "work_in"}
    income = {g1.surface(t.head): g1.surface(t.tail)
              for t in g1.triples if t.relation == "annual_income"}
    for person, company in work.items():
        earns = income.get(person)
        if company == NO_COMPANY and earns != ZERO_INCOME:
            out.append(Violation(
                "income_job", f"{person} is jobless but earns {earns}"))
        if company != NO_COMPANY and earns == ZERO_INCOME:
            out.append(Violation(
                "income_job", f"{person} works in {company} but earns nothing"))

    # Mayors hold no job and no company role.
    mayor_surfaces = {g3.surface(t.tail) for t in g3.triples if t.relation == "mayor"}
    employed = {p for p, c in work.items() if c != NO_COMPANY}
    role_holders: dict[str, str] = {}
    for t in g2.triples:
        if t.relation in ("ceo", "founder", "chairman"):
            role_holders.setdefault(g2.surface(t.tail), f"{t.relation} of {g2.surface(t.head)}")
    for person in sorted(mayor_surfaces):
        if person in employed:
            out.append(Violation(
                "mayor_employee",
                f"{person} is a mayor but works in {work[person]}"))
        if person in role_holders:
            out.append(Violation(
                "mayor_employee",
                f"{person} is a mayor but also {role_holders[person]}"))

    # A city's largest company is located in that city.
    locate = {g2.surface(t.head): g2.surface(t.tail)
              for t in g2.triples if t.relation == "locate_in"}
    for t in g3.triples:
        if t.relation != "largest_company":
            continue
        city, company = g3.surface(t.head), g3.surface(t.tail)
        if locate.get(company) != city:
            out.append(Violation(
                "largest_company_location",
                f"{company} is the largest company of {city} but is located "
                f"in {locate.get(company)}"))

    # Value surfaces stay inside their configured ranges.
    for g in suite.shards:
        for e in g.entities:
            if e.kind in ("PersonName", "CompanyName", "CityName", "StateName",
                          "BusinessName"):
                continue
            if e.kind == "date_value":
                years = cfg.birth_years if g.owner == 1 else cfg.establish_years
                if not _check_date(e.surface, years):
                    out.append(Violation(
                        "value_range",
                        f"shard {g.owner}: date {e.surface!r} outside {years}"))
            elif e.kind == "number_value":
                grid = _grid(*cfg.employees) if g.owner == 2 else _grid(*cfg.population)
                if not (e.surface.isdigit() and int(e.surface) in grid):
                    out.append(Violation(
                        "value_range",
                        f"shard {g.owner}: number {e.surface!r} off the grid"))
            else:
                ok = allowed.get(e.kind)
                if ok is not None and e.surface not in ok:
                    out.append(Violation(
                        "value_range",
                        f"shard {g.owner}: {e.kind} {e.surface!r} out of range"))
    return out


def overlap_fraction(suite: KgSuite) -> float:
    """Empirical fraction of persons whose live_in equals their birthplace."""
    g1 = suite.shard(1)
    birth = {t.head: t.tail for t in g1.triples if t.relation == "birthplace"}
    live = {t.head: t.tail for t in g1.triples if t.relation == "live_in"}
    same = sum(1 for head, city in birth.items() if live.get(head) == city)
    return same / max(len(birth), 1)


# ---------------------------------------------------------------------- union


def union(suite: KgSuite) -> KnowledgeGraph:
    """Merge the shards' entity and triple multisets into one graph."""
    entities: list[EntityNode] = []
    triples: list[RelationTriple] = []
    seen: dict[int, int] = {}
    surfaces: dict[str, str] = {}
    for g in suite.shards:
        for e in g.entities:
            if e.id in seen:
                raise MergeError(
                    f"entity id {e.id} appears in shards {seen[e.id]} and {g.owner}")
            seen[e.id] = g.owner
            if surfaces.setdefault(e.surface, e.kind) != e.kind:
                raise MergeError(
                    f"surface {e.surface!r} has conflicting kinds across shards")
            entities.append(e)
        triples.extend(g.triples)
    return KnowledgeGraph(0, entities, triples)


# ----------------------------------------------------------------------- I/O


def save_kg(kg: KnowledgeGraph, path) -> None:
    """Write the canonical tab-separated graph file (sorted, UTF-8)."""
    lines = [f"#graph\towner\t{kg.owner}", "#entities"]
    for e in kg.entities:
        lines.append(f"{e.id}\t{e.kind}\t{e.surface}")
    lines.append("#triples")
    for t in kg.triples:
        lines.append(f"{t.head}\t{t.relation}\t{t.tail}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_kg(path) -> KnowledgeGraph:
    path = Path(path)
    owner: int | None = None
    entities: list[EntityNode] = []
    triples: list[RelationTriple] = []
    section = None
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                  start=1):
        if not line:
            continue
        if line.startswith("#graph"):
            parts = line.split("\t")
            if len(parts) != 3 or parts[1] != "owner":
                raise KgParseError(f"{path}:{lineno}: malformed graph header")
            owner = int(parts[2])
        elif line == "#entities":
            section = "entities"
        elif line == "#triples":
            section = "triples"
        elif section == "entities":
            parts = line.split("\t")
            if len(parts) != 3:
                raise KgParseError(f"{path}:{lineno}: malformed entity line {line!r}")
            try:
                entities.append(EntityNode(int(parts[0]), parts[1], parts[2]))
            except ValueError:
                raise KgParseError(f"{path}:{lineno}: bad entity id {parts[0]!r}") from None
        elif section == "triples":
            parts = line.split("\t")
            if len(parts) != 3:
                raise KgParseError(f"{path}:{lineno}: malformed triple line {line!r}")
            try:
                triples.append(RelationTriple(int(parts[0]), parts[1], int(parts[2])))
            except ValueError:
                raise KgParseError(f"{path}:{lineno}: bad id in triple {line!r}") from None
        else:
            raise KgParseError(f"{path}:{lineno}: content before a section header")
    if owner is None:
        raise KgParseError(f"{path}:1: missing #graph header")
    try:
        return KnowledgeGraph(owner, entities, triples)
    except ValueError as exc:
        raise KgParseError(f"{path}: {exc}") from None


def save_suite(suite: KgSuite, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for g in suite.shards:
        p = directory / f"g{g.owner}.kg"
        save_kg(g, p)
        paths.append(p)
    return paths


def load_suite(directory, cfg: KgConfig) -> KgSuite:
    directory = Path(directory)
    shards = tuple(load_kg(directory / f"g{i}.kg") for i in (1, 2, 3))
    for i, g in enumerate(shards, start=1):
        if g.owner != i:
            raise KgParseError(f"{directory / f'g{i}.kg'}: owner {g.owner} != {i}")
    return KgSuite(shards, cfg)


def desk_config(**overrides) -> KgConfig:
    """The reduced-scale configuration used by the acceptance experiments."""
    return replace(KgConfig(), **overrides)


def paper_scale_config(**overrides) -> KgConfig:
    base = KgConfig(n_persons=3000, n_companies=2000, n_cities=300)
    return replace(base, **overrides)
