"""Reasoning paths, question templates and dataset construction.

Complex questions are realized from chains of functional relations sampled
over the union of the three shards; the chain crosses at least two shards,
so no single panelist can answer alone.  Each hop also yields a one-slot
sub-question from the simple-template catalog, which is both the gold
decomposition and the moderator's action space.
"""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .kgsynth import (
    ENTITY_KINDS,
    INVERTIBLE_RELATIONS,
    SCHEMAS,
    KgConfig,
    KgSuite,
)

__all__ = [
    "BuildError",
    "Catalog",
    "DataConfig",
    "DatasetSplits",
    "DecompStep",
    "DirectedRelation",
    "Hop",
    "QAExample",
    "QuestionTemplate",
    "RealizationError",
    "ReasoningPath",
    "RoutingError",
    "SamplingError",
    "SPECIAL_TOKENS",
    "UnionIndex",
    "build_catalog",
    "build_dataset",
    "build_vocab",
    "default_catalog",
    "directed_relations",
    "fill_slot",
    "load_dataset",
    "realize",
    "route",
    "sample_reasoning_path",
    "save_dataset",
    "tokenize",
]


class SamplingError(RuntimeError):
    """Path sampling exhausted its retry budget."""


class RealizationError(ValueError):
    """No template matches the path's relation chain."""


class BuildError(ValueError):
    """Dataset sizes are infeasible for the available (template, anchor) pairs."""


class RoutingError(ValueError):
    """A sub-question is answerable by zero or several shards."""


PLACEHOLDERS = {
    "PersonName": "[PersonName]",
    "CompanyName": "[CompanyName]",
    "CityName": "[CityName]",
}
_PLACEHOLDER_TOKENS = frozenset(PLACEHOLDERS.values())

# Reserved tokens: padding/BOS, the I-don't-know utterance, and the dialog
# separators for the external question, sub-questions and the three panelists.
SPECIAL_TOKENS = ("<s>", "UNK", "<Q>", "<q>", "<u1>", "<u2>", "<u3>")

# Per directed relation: the one-slot sub-question text and the noun phrase
# used when nesting it into a complex question.
_SIMPLE_TEXTS = {
    "height": "How tall is [PersonName] ?",
    "weight": "How much does [PersonName] weigh ?",
    "birthday": "When was [PersonName] born ?",
    "gender": "What is the gender of [PersonName] ?",
    "birthplace": "Which city was [PersonName] born in ?",
    "live_in": "Which city does [PersonName] live in ?",
    "work_in": "Which company does [PersonName] work in ?",
    "annual_income": "What is the annual income of [PersonName] ?",
    "establish_date": "When was [CompanyName] established ?",
    "number_of_employees": "How many employees does [CompanyName] have ?",
    "ceo": "Who is the CEO of [CompanyName] ?",
    "founder": "Who founded [CompanyName] ?",
    "main_business": "What is the main business of [CompanyName] ?",
    "locate_in": "Which city is [CompanyName] located in ?",
    "has_service_in": "Which city does [CompanyName] have service in ?",
    "chairman": "Who is the chairman of [CompanyName] ?",
    "market_value": "What is the market value of [CompanyName] ?",
    "area": "What is the area of [CityName] ?",
    "population": "What is the population of [CityName] ?",
    "mayor": "Who is the mayor of [CityName] ?",
    "largest_company": "What is the largest company in [CityName] ?",
    "contained_by": "Which state is [CityName] contained by ?",
    "ceo_of": "Which company is [PersonName] the CEO of ?",
    "founder_of": "Which company did [PersonName] found ?",
    "chairman_of": "Which company is [PersonName] the chairman of ?",
    "mayor_of": "Which city is [PersonName] the mayor of ?",
    "largest_company_of": "Which city is [CompanyName] the largest company in ?",
}
_PHRASES = {
    "height": "the height of {}",
    "weight": "the weight of {}",
    "birthday": "the birthday of {}",
    "gender": "the gender of {}",
    "birthplace": "the city where {} was born",
    "live_in": "the city where {} lives",
    "work_in": "the company where {} works",
    "annual_income": "the annual income of {}",
    "establish_date": "the establishment date of {}",
    "number_of_employees": "the number of employees of {}",
    "ceo": "the CEO of {}",
    "founder": "the founder of {}",
    "main_business": "the main business of {}",
    "locate_in": "the city where {} is located",
    "has_service_in": "the city where {} has service",
    "chairman": "the chairman of {}",
    "market_value": "the market value of {}",
    "area": "the area of {}",
    "population": "the population of {}",
    "mayor": "the mayor of {}",
    "largest_company": "the largest company in {}",
    "contained_by": "the state that contains {}",
    "ceo_of": "the company whose CEO is {}",
    "founder_of": "the company founded by {}",
    "chairman_of": "the company whose chairman is {}",
    "mayor_of": "the city whose mayor is {}",
    "largest_company_of": "the city whose largest company is {}",
}


@dataclass(frozen=True)
class DirectedRelation:
    """A relation traversed forward or, for invertible ones, tail-to-head."""

    relation: str
    inverse: bool
    label: str
    owner: int
    src_kind: str
    dst_kind: str


def directed_relations(schemas=None) -> list[DirectedRelation]:
    schemas = SCHEMAS if schemas is None else schemas
    rels: list[DirectedRelation] = []
    for owner in sorted(schemas):
        for relation, (head_kind, tail_kind) in schemas[owner].items():
            rels.append(DirectedRelation(
                relation, False, relation, owner, head_kind, tail_kind))
    for relation in INVERTIBLE_RELATIONS:
        for owner in sorted(schemas):
            if relation in schemas[owner]:
                head_kind, tail_kind = schemas[owner][relation]
                rels.append(DirectedRelation(
                    relation, True, f"{relation}_of", owner, tail_kind, head_kind))
    return rels


_DIRECTED_BY_LABEL = {dr.label: dr for dr in directed_relations()}


def relation_of_label(label: str) -> DirectedRelation:
    return _DIRECTED_BY_LABEL[label]


def tokenize(text: str) -> list[str]:
    """Whitespace tokens; '?' always stands alone, entity surfaces stay whole."""
    return text.replace("?", " ? ").split()


def fill_slot(text: str, value: str) -> str:
    """Substitute the single placeholder; already-filled text passes through."""
    for placeholder in PLACEHOLDERS.values():
        if placeholder in text:
            return text.replace(placeholder, value, 1)
    return text


@dataclass(frozen=True)
class QuestionTemplate:
    id: str
    kind: str  # "simple" | "complex"
    chain: tuple[str, ...]
    text: str
    anchor_kind: str
    answer_kind: str

    def fill(self, value: str) -> str:
        return fill_slot(self.text, value)


def _complex_text(chain: list[DirectedRelation]) -> str:
    expr = PLACEHOLDERS[chain[0].src_kind]
    for dr in chain:
        expr = _PHRASES[dr.label].format(expr)
    word = "Who" if chain[-1].dst_kind == "PersonName" else "What"
    return f"{word} is {expr}?"


def _valid_chains(rels: list[DirectedRelation], n_hops: int) -> list[tuple[DirectedRelation, ...]]:
    by_src: dict[str, list[DirectedRelation]] = {}
    for dr in rels:
        by_src.setdefault(dr.src_kind, []).append(dr)
    chains: list[tuple[DirectedRelation, ...]] = []

    def extend(chain: tuple[DirectedRelation, ...], kind: str) -> None:
        if len(chain) == n_hops:
            if len({dr.owner for dr in chain}) >= 2:
                chains.append(chain)
            return
        for dr in by_src.get(kind, []):
            if chain and dr.relation == chain[-1].relation and dr.inverse != chain[-1].inverse:
                continue  # an immediate inverse hop always returns to the anchor
            if len(chain) < n_hops - 1 and dr.dst_kind not in ENTITY_KINDS:
                continue
            extend(chain + (dr,), dr.dst_kind)

    for kind in ENTITY_KINDS:
        extend((), kind)
    return chains


class Catalog:
    """The simple templates (the moderator's action space) and the complex ones."""

    def __init__(self, simple: list[QuestionTemplate], complex_: list[QuestionTemplate]):
        self.simple = simple
        self.complex = complex_
        self.by_id = {t.id: t for t in simple + complex_}
        self.by_chain = {t.chain: t for t in complex_}
        self._parsers: list[tuple[QuestionTemplate, str, str]] = []
        for t in simple:
            placeholder = PLACEHOLDERS[t.anchor_kind]
            prefix, suffix = t.text.split(placeholder)
            self._parsers.append((t, prefix, suffix))

    def simple_template(self, label: str) -> QuestionTemplate:
        return self.by_id[label]

    def parse_simple(self, text: str) -> tuple[QuestionTemplate, str] | None:
        """Recover (template, slot value) from a filled sub-question text."""
        for t, prefix, suffix in self._parsers:
            if (len(text) > len(prefix) + len(suffix)
                    and text.startswith(prefix) and text.endswith(suffix)):
                slot = text[len(prefix):len(text) - len(suffix)]
                if slot and " " not in slot:
                    return t, slot
        return None

    def action_labels(self) -> list[str]:
        return [t.id for t in self.simple]

    def __repr__(self) -> str:
        return f"Catalog(simple={len(self.simple)}, complex={len(self.complex)})"


def build_catalog(schemas=None) -> Catalog:
    """Derive every template from the shard schemas, deterministically."""
    rels = directed_relations(schemas)
    simple = [QuestionTemplate(dr.label, "simple", (dr.label,),
                               _SIMPLE_TEXTS[dr.label], dr.src_kind, dr.dst_kind)
              for dr in rels]
    complex_: list[QuestionTemplate] = []
    for n_hops in (2, 3):
        for chain in _valid_chains(rels, n_hops):
            labels = tuple(dr.label for dr in chain)
            complex_.append(QuestionTemplate(
                "+".join(labels), "complex", labels, _complex_text(list(chain)),
                chain[0].src_kind, chain[-1].dst_kind))
    return Catalog(simple, complex_)


@functools.lru_cache(maxsize=1)
def default_catalog() -> Catalog:
    return build_catalog()


# ----------------------------------------------------------------- the union


class UnionIndex:
    """Traversal maps over the union, linked across shards by surface string."""

    def __init__(self, suite: KgSuite):
        self.kind_of: dict[str, str] = {}
        self.out: dict[str, list[tuple[str, str]]] = {}
        self.lookup: dict[tuple[str, str], str] = {}
        self.surfaces_by_kind: dict[str, list[str]] = {}
        for g in suite.shards:
            for e in g.entities:
                kind = self.kind_of.get(e.surface)
                if kind is None:
                    self.kind_of[e.surface] = e.kind
                    self.surfaces_by_kind.setdefault(e.kind, []).append(e.surface)
                elif kind != e.kind:
                    raise ValueError(
                        f"surface {e.surface!r} is {kind} and {e.kind} in "
                        "different shards")
            for t in g.triples:
                head, tail = g.surface(t.head), g.surface(t.tail)
                self.out.setdefault(head, []).append((t.relation, tail))
                self.lookup[(t.relation, head)] = tail
                if t.relation in INVERTIBLE_RELATIONS:
                    label = f"{t.relation}_of"
                    self.out.setdefault(tail, []).append((label, head))
                    self.lookup[(label, tail)] = head
        self.anchors = [s for s in self.out]

    def walk(self, chain: tuple[str, ...], anchor: str) -> tuple["Hop", ...] | None:
        """Follow a relation chain from an anchor; None when any hop fails
        or an entity repeats."""
        entities = [anchor]
        hops: list[Hop] = []
        current = anchor
        for label in chain:
            dst = self.lookup.get((label, current))
            if dst is None or dst in entities:
                return None
            hops.append(Hop(current, label, dst))
            entities.append(dst)
            current = dst
        return tuple(hops)


@dataclass(frozen=True)
class Hop:
    src: str
    label: str
    dst: str


@dataclass(frozen=True)
class ReasoningPath:
    hops: tuple[Hop, ...]

    @property
    def n_hops(self) -> int:
        return len(self.hops)

    @property
    def anchor(self) -> str:
        return self.hops[0].src

    @property
    def answer(self) -> str:
        return self.hops[-1].dst

    @property
    def chain(self) -> tuple[str, ...]:
        return tuple(h.label for h in self.hops)

    @property
    def owners(self) -> tuple[int, ...]:
        return tuple(relation_of_label(h.label).owner for h in self.hops)

    @property
    def entities(self) -> tuple[str, ...]:
        return (self.hops[0].src,) + tuple(h.dst for h in self.hops)


def sample_reasoning_path(union, n_hops: int, rng: np.random.Generator,
                          max_retries: int = 1000) -> ReasoningPath:
    """Anchor uniformly, then walk n functional hops, rejecting dead ends,
    repeated entities and single-shard chains."""
    if n_hops < 1:
        raise ValueError(f"n_hops must be positive, got {n_hops}")
    index = union if isinstance(union, UnionIndex) else UnionIndex(union)
    if not index.anchors:
        raise SamplingError("the union has no outgoing edges to anchor on")
    for _ in range(max_retries):
        anchor = index.anchors[int(rng.integers(len(index.anchors)))]
        entities = [anchor]
        hops: list[Hop] = []
        current = anchor
        ok = True
        for _hop in range(n_hops):
            options = [(label, dst) for label, dst in index.out.get(current, [])
                       if dst not in entities]
            if not options:
                ok = False
                break
            label, dst = options[int(rng.integers(len(options)))]
            hops.append(Hop(current, label, dst))
            entities.append(dst)
            current = dst
        if not ok:
            continue
        path = ReasoningPath(tuple(hops))
        if n_hops == 1 or len(set(path.owners)) >= 2:
            return path
    raise SamplingError(
        f"no valid {n_hops}-hop cross-shard path found in {max_retries} tries")


# ------------------------------------------------------------------ examples


@dataclass(frozen=True)
class DecompStep:
    template_id: str
    slot: str


@dataclass(frozen=True)
class QAExample:
    question: str
    anchor: str
    path: ReasoningPath
    decomposition: tuple[DecompStep, ...]
    answer: str
    hops: int

    @property
    def template_id(self) -> str:
        return "+".join(self.path.chain)


def realize(path: ReasoningPath, catalog: Catalog) -> QAExample:
    """Turn a sampled path into question text, decomposition and answer."""
    if path.n_hops == 1:
        template = catalog.by_id.get(path.hops[0].label)
    else:
        template = catalog.by_chain.get(path.chain)
    if template is None:
        raise RealizationError(f"no template for chain {'+'.join(path.chain)}")
    question = template.fill(path.anchor)
    decomposition = tuple(DecompStep(h.label, h.src) for h in path.hops)
    return QAExample(question, path.anchor, path, decomposition,
                     path.answer, path.n_hops)


def route(sub_question: DecompStep, suite: KgSuite, catalog: Catalog | None = None) -> int:
    """The unique shard that can answer the sub-question, or RoutingError."""
    catalog = catalog or default_catalog()
    template = catalog.by_id.get(sub_question.template_id)
    if template is None or template.kind != "simple":
        raise RoutingError(f"unknown simple template {sub_question.template_id!r}")
    dr = relation_of_label(template.id)
    g = suite.shard(dr.owner)
    if dr.inverse:
        present = g.head_surface(dr.relation, sub_question.slot) is not None
    else:
        present = g.tail_surface(dr.relation, sub_question.slot) is not None
    if not present:
        raise RoutingError(
            f"no shard answers {template.id} for slot {sub_question.slot!r}")
    return dr.owner


# ------------------------------------------------------------------- dataset


@dataclass(frozen=True)
class DataConfig:
    train_size: int = 8000
    dev_size: int = 1000
    test_size: int = 1000
    two_hop_fraction: float = 0.5

    def __post_init__(self):
        if min(self.train_size, self.dev_size, self.test_size) < 1:
            raise BuildError("split sizes must be positive")
        if not 0.0 <= self.two_hop_fraction <= 1.0:
            raise BuildError(
                f"two_hop_fraction must lie in [0, 1], got {self.two_hop_fraction}")


@dataclass
class DatasetSplits:
    train: list[QAExample]
    dev: list[QAExample]
    test: list[QAExample]
    catalog: Catalog
    vocab: list[str]
    data_config: DataConfig
    kg_config: KgConfig

    def split(self, name: str) -> list[QAExample]:
        return {"train": self.train, "dev": self.dev, "test": self.test}[name]


def build_vocab(suite: KgSuite, catalog: Catalog) -> list[str]:
    """Template words plus every entity surface, specials first, then sorted."""
    tokens: set[str] = set()
    for template in catalog.simple + catalog.complex:
        for tok in tokenize(template.text):
            if tok not in _PLACEHOLDER_TOKENS:
                tokens.add(tok)
    for g in suite.shards:
        for e in g.entities:
            tokens.add(e.surface)
    tokens -= set(SPECIAL_TOKENS)
    return list(SPECIAL_TOKENS) + sorted(tokens)


def build_dataset(cfg: DataConfig, suite: KgSuite, catalog: Catalog,
                  seed: int) -> DatasetSplits:
    """Enumerate every valid (template, anchor) pair, then sample disjoint
    splits with the configured hop mix, deterministically from the seed."""
    index = UnionIndex(suite)
    pools: dict[int, list[tuple[QuestionTemplate, tuple[Hop, ...]]]] = {2: [], 3: []}
    for template in catalog.complex:
        n = len(template.chain)
        for anchor in index.surfaces_by_kind.get(template.anchor_kind, []):
            hops = index.walk(template.chain, anchor)
            if hops is not None:
                pools[n].append((template, hops))

    sizes = (cfg.train_size, cfg.dev_size, cfg.test_size)
    per_split = []
    for size in sizes:
        two = int(round(size * cfg.two_hop_fraction))
        per_split.append((two, size - two))
    need2 = sum(two for two, _ in per_split)
    need3 = sum(three for _, three in per_split)
    if need2 > len(pools[2]) or need3 > len(pools[3]):
        raise BuildError(
            f"infeasible sizes: need {need2} 2-hop and {need3} 3-hop examples "
            f"but only {len(pools[2])} and {len(pools[3])} distinct "
            "(template, anchor) pairs exist")

    rng = np.random.default_rng(seed)
    order2 = rng.permutation(len(pools[2]))
    order3 = rng.permutation(len(pools[3]))
    splits: list[list[QAExample]] = []
    at2 = at3 = 0
    for two, three in per_split:
        chosen = [pools[2][i] for i in order2[at2:at2 + two]]
        chosen += [pools[3][i] for i in order3[at3:at3 + three]]
        at2 += two
        at3 += three
        examples = [realize(ReasoningPath(hops), catalog) for _t, hops in chosen]
        examples = [examples[i] for i in rng.permutation(len(examples))]
        splits.append(examples)

    vocab = build_vocab(suite, catalog)
    return DatasetSplits(splits[0], splits[1], splits[2], catalog, vocab,
                         cfg, suite.config)


# ----------------------------------------------------------------------- I/O


def _example_record(example: QAExample) -> dict:
    return {
        "question": example.question,
        "anchor": example.anchor,
        "answer": example.answer,
        "hops": example.hops,
        "path": [[h.src, h.label, h.dst] for h in example.path.hops],
        "decomposition": [{"template_id": d.template_id, "slot": d.slot}
                          for d in example.decomposition],
    }


def _dump_jsonl(records, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True,
                                separators=(",", ":")) + "\n")


def save_dataset(splits: DatasetSplits, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("train", "dev", "test"):
        _dump_jsonl((_example_record(e) for e in splits.split(name)),
                    directory / f"{name}.jsonl")
    _dump_jsonl(({"id": t.id, "kind": t.kind, "chain": list(t.chain),
                  "text": t.text}
                 for t in splits.catalog.simple + splits.catalog.complex),
                directory / "catalog.jsonl")
    (directory / "vocab.txt").write_text(
        "\n".join(splits.vocab) + "\n", encoding="utf-8")
    config = {"data": asdict(splits.data_config), "kg": asdict(splits.kg_config)}
    (directory / "config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_example(record: dict) -> QAExample:
    hops = tuple(Hop(*h) for h in record["path"])
    decomposition = tuple(DecompStep(d["template_id"], d["slot"])
                          for d in record["decomposition"])
    return QAExample(record["question"], record["anchor"], ReasoningPath(hops),
                     decomposition, record["answer"], record["hops"])


def load_dataset(directory) -> DatasetSplits:
    directory = Path(directory)
    loaded: dict[str, list[QAExample]] = {}
    for name in ("train", "dev", "test"):
        with (directory / f"{name}.jsonl").open(encoding="utf-8") as fh:
            loaded[name] = [_load_example(json.loads(line)) for line in fh]
    simple: list[QuestionTemplate] = []
    complex_: list[QuestionTemplate] = []
    with (directory / "catalog.jsonl").open(encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            chain = tuple(record["chain"])
            first = relation_of_label(chain[0])
            last = relation_of_label(chain[-1])
            template = QuestionTemplate(record["id"], record["kind"], chain,
                                        record["text"], first.src_kind,
                                        last.dst_kind)
            (simple if record["kind"] == "simple" else complex_).append(template)
    vocab = (directory / "vocab.txt").read_text(encoding="utf-8").splitlines()
    config = json.loads((directory / "config.json").read_text(encoding="utf-8"))
    kg_kwargs = {key: tuple(value) if isinstance(value, list) else value
                 for key, value in config["kg"].items()}
    return DatasetSplits(loaded["train"], loaded["dev"], loaded["test"],
                         Catalog(simple, complex_), vocab,
                         DataConfig(**config["data"]), KgConfig(**kg_kwargs))
