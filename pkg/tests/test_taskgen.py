import numpy as np
import pytest

from conftest import make_suite

from collabqa.kgsynth import KgConfig, generate_kg_suite
from collabqa.taskgen import (
    BuildError,
    DataConfig,
    DecompStep,
    Hop,
    ReasoningPath,
    RoutingError,
    SamplingError,
    UnionIndex,
    build_catalog,
    build_dataset,
    build_vocab,
    default_catalog,
    fill_slot,
    load_dataset,
    realize,
    route,
    sample_reasoning_path,
    save_dataset,
    tokenize,
)


@pytest.fixture(scope="module")
def worked_example_suite():
    return make_suite(
        g1=[("PersonName", "Person#1", "birthplace", "CityName", "City#4")],
        g3=[("CityName", "City#4", "largest_company", "CompanyName", "Company#4")],
    )


@pytest.fixture(scope="module")
def tiny_generated():
    suite = generate_kg_suite(KgConfig(
        n_persons=30, n_companies=20, n_cities=5, jobless_fraction=0.3, seed=7))
    return suite


@pytest.fixture(scope="module")
def catalog():
    return default_catalog()


# ------------------------------------------------------------------ catalog


def test_catalog_contains_paper_worded_simple_templates(catalog):
    assert catalog.by_id["birthplace"].text == "Which city was [PersonName] born in ?"
    assert catalog.by_id["largest_company"].text == "What is the largest company in [CityName] ?"
    assert catalog.by_id["live_in"].text == "Which city does [PersonName] live in ?"


def test_catalog_has_inverse_templates_for_single_valued_relations(catalog):
    for label in ("ceo_of", "founder_of", "chairman_of", "mayor_of",
                  "largest_company_of"):
        assert label in catalog.by_id
    assert len(catalog.simple) == 27


def test_empty_schema_gives_empty_catalog():
    empty = build_catalog(schemas={})
    assert empty.simple == [] and empty.complex == []


def test_complex_chains_cross_shards_and_are_functional(catalog, tiny_generated):
    # Cardinality scan over a generated suite: every traversed hop must be
    # single-valued in its direction.
    multiplicity = {}
    for g in tiny_generated.shards:
        for t in g.triples:
            multiplicity.setdefault(("fwd", t.relation, t.head), set()).add(t.tail)
            multiplicity.setdefault(("inv", t.relation, t.tail), set()).add(t.head)
    from collabqa.taskgen import relation_of_label

    for template in catalog.complex:
        owners = set()
        for label in template.chain:
            dr = relation_of_label(label)
            owners.add(dr.owner)
            direction = "inv" if dr.inverse else "fwd"
            for key, values in multiplicity.items():
                if key[0] == direction and key[1] == dr.relation:
                    assert len(values) == 1
        assert len(owners) >= 2


def test_simple_parse_roundtrip(catalog):
    for template in catalog.simple:
        text = template.fill("Probe#7")
        parsed = catalog.parse_simple(text)
        assert parsed is not None
        assert parsed[0].id == template.id and parsed[1] == "Probe#7"
    assert catalog.parse_simple("complete nonsense") is None


# ----------------------------------------------------------------- sampling


def test_sample_recovers_the_worked_example(worked_example_suite):
    rng = np.random.default_rng(0)
    path = sample_reasoning_path(worked_example_suite, 2, rng)
    assert path.hops == (Hop("Person#1", "birthplace", "City#4"),
                         Hop("City#4", "largest_company", "Company#4"))


def test_sampling_error_without_cross_shard_chains():
    suite = make_suite(g1=[
        ("PersonName", "Person#1", "birthplace", "CityName", "City#1"),
        ("PersonName", "Person#2", "live_in", "CityName", "City#1"),
    ])
    with pytest.raises(SamplingError):
        sample_reasoning_path(suite, 2, np.random.default_rng(0), max_retries=50)


def test_sampled_paths_lie_in_bruteforce_enumeration(tiny_generated):
    index = UnionIndex(tiny_generated)
    valid = set()
    for anchor, edges in index.out.items():
        for label1, mid in edges:
            if mid == anchor:
                continue
            for label2, dst in index.out.get(mid, []):
                if dst in (anchor, mid):
                    continue
                from collabqa.taskgen import relation_of_label
                owners = {relation_of_label(label1).owner,
                          relation_of_label(label2).owner}
                if len(owners) >= 2:
                    valid.add((Hop(anchor, label1, mid), Hop(mid, label2, dst)))
    rng = np.random.default_rng(11)
    for _ in range(50):
        path = sample_reasoning_path(index, 2, rng)
        assert path.hops in valid


def test_sampled_path_invariants(tiny_generated):
    index = UnionIndex(tiny_generated)
    rng = np.random.default_rng(5)
    for n in (2, 3):
        for _ in range(25):
            path = sample_reasoning_path(index, n, rng)
            assert path.n_hops == n
            assert len(set(path.entities)) == n + 1
            assert len(set(path.owners)) >= 2
            for hop in path.hops:
                assert index.lookup[(hop.label, hop.src)] == hop.dst


# ---------------------------------------------------------------- realize


def test_realize_worked_example(worked_example_suite, catalog):
    path = ReasoningPath((Hop("Person#1", "birthplace", "City#4"),
                          Hop("City#4", "largest_company", "Company#4")))
    example = realize(path, catalog)
    assert example.question == "What is the largest company in the city where Person#1 was born?"
    assert example.answer == "Company#4"
    assert example.decomposition == (DecompStep("birthplace", "Person#1"),
                                     DecompStep("largest_company", "City#4"))
    filled = [catalog.by_id[d.template_id].fill(d.slot)
              for d in example.decomposition]
    assert filled == ["Which city was Person#1 born in ?",
                      "What is the largest company in City#4 ?"]


def test_realize_degenerate_single_hop(catalog):
    path = ReasoningPath((Hop("Person#1", "birthplace", "City#4"),))
    example = realize(path, catalog)
    assert example.question == "Which city was Person#1 born in ?"
    assert example.question == catalog.by_id["birthplace"].fill("Person#1")


def test_fill_slot_idempotent():
    text = "Which city was [PersonName] born in ?"
    once = fill_slot(text, "Person#1")
    assert fill_slot(once, "Person#2") == once


# ------------------------------------------------------------------ routing


def test_route_examples(worked_example_suite):
    assert route(DecompStep("birthplace", "Person#1"), worked_example_suite) == 1
    assert route(DecompStep("largest_company", "City#4"), worked_example_suite) == 3
    with pytest.raises(RoutingError):
        route(DecompStep("population", "City#4"), worked_example_suite)


# ------------------------------------------------------------------ dataset


@pytest.fixture(scope="module")
def tiny_dataset(tiny_generated, catalog):
    cfg = DataConfig(train_size=120, dev_size=30, test_size=30,
                     two_hop_fraction=0.5)
    return build_dataset(cfg, tiny_generated, catalog, seed=3)


def test_dataset_sizes_and_mix(tiny_dataset):
    assert len(tiny_dataset.train) == 120
    assert len(tiny_dataset.dev) == 30
    assert len(tiny_dataset.test) == 30
    twos = sum(1 for e in tiny_dataset.train if e.hops == 2)
    assert twos == 60


def test_dataset_splits_are_disjoint(tiny_dataset):
    keys = [{(e.template_id, e.anchor) for e in split}
            for split in (tiny_dataset.train, tiny_dataset.dev, tiny_dataset.test)]
    assert not (keys[0] & keys[1])
    assert not (keys[0] & keys[2])
    assert not (keys[1] & keys[2])


def test_dataset_paths_contained_in_union_and_cross_shard(tiny_generated, tiny_dataset):
    index = UnionIndex(tiny_generated)
    for split in (tiny_dataset.train, tiny_dataset.dev, tiny_dataset.test):
        for example in split:
            assert len(set(example.path.owners)) >= 2
            for hop in example.path.hops:
                assert index.lookup[(hop.label, hop.src)] == hop.dst
            assert example.answer == example.path.hops[-1].dst


def test_every_subquestion_routes_uniquely(tiny_generated, tiny_dataset, catalog):
    from collabqa.taskgen import relation_of_label

    for split in (tiny_dataset.train, tiny_dataset.dev, tiny_dataset.test):
        for example, hop_list in ((e, e.path.hops) for e in split):
            for step, hop in zip(example.decomposition, hop_list):
                owner = route(step, tiny_generated, catalog)
                assert owner == relation_of_label(step.template_id).owner


def test_infeasible_sizes_report_available_counts(tiny_generated, catalog):
    with pytest.raises(BuildError, match="pairs exist"):
        build_dataset(DataConfig(train_size=10**6, dev_size=1, test_size=1),
                      tiny_generated, catalog, seed=0)


def test_dataset_roundtrip_and_determinism(tiny_generated, catalog, tmp_path):
    cfg = DataConfig(train_size=40, dev_size=10, test_size=10)
    a = build_dataset(cfg, tiny_generated, catalog, seed=9)
    b = build_dataset(cfg, tiny_generated, catalog, seed=9)
    save_dataset(a, tmp_path / "a")
    save_dataset(b, tmp_path / "b")
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "catalog.jsonl",
                 "vocab.txt", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    loaded = load_dataset(tmp_path / "a")
    assert [e.question for e in loaded.train] == [e.question for e in a.train]
    assert loaded.vocab == a.vocab
    save_dataset(loaded, tmp_path / "c")
    for name in ("train.jsonl", "vocab.txt"):
        assert (tmp_path / "c" / name).read_bytes() == (tmp_path / "a" / name).read_bytes()


def test_vocab_covers_dataset_tokens(tiny_generated, tiny_dataset):
    vocab = set(tiny_dataset.vocab)
    for example in tiny_dataset.train[:50]:
        for token in tokenize(example.question):
            assert token in vocab
        for step in example.decomposition:
            assert step.slot in vocab
    assert "UNK" in vocab and "<u3>" in vocab


def test_vocab_deterministic(tiny_generated, catalog):
    assert build_vocab(tiny_generated, catalog) == build_vocab(tiny_generated, catalog)
