import numpy as np
import pytest

from collabqa.kgsynth import (
    NO_COMPANY,
    EntityNode,
    GenerationError,
    KgConfig,
    KgParseError,
    KnowledgeGraph,
    MergeError,
    RelationTriple,
    generate_kg_suite,
    load_kg,
    overlap_fraction,
    paper_scale_config,
    save_kg,
    union,
    validate_constraints,
)


@pytest.fixture(scope="module")
def desk_suite():
    return generate_kg_suite(KgConfig(seed=1))


@pytest.fixture(scope="module")
def tiny_suite():
    return generate_kg_suite(KgConfig(
        n_persons=30, n_companies=20, n_cities=5, jobless_fraction=0.3, seed=7))


def test_paper_scale_triple_counts():
    suite = generate_kg_suite(paper_scale_config(seed=0))
    g1, g2, g3 = suite.shards
    assert len(g1.triples) == 24000
    assert len(g3.triples) == 1500
    # Nine relation types per company; the per-type listing, not the summary
    # total, is what the generator follows (see README data notes).
    assert len(g2.triples) == 18000


def test_desk_triple_counts(desk_suite):
    cfg = desk_suite.config
    assert len(desk_suite.shard(1).triples) == 8 * cfg.n_persons
    assert len(desk_suite.shard(2).triples) == 9 * cfg.n_companies
    assert len(desk_suite.shard(3).triples) == 5 * cfg.n_cities


def test_full_overlap_forces_equal_cities():
    suite = generate_kg_suite(KgConfig(
        n_persons=50, n_companies=20, n_cities=4, overlap_ratio=1.0,
        jobless_fraction=0.3, seed=3))
    assert overlap_fraction(suite) == 1.0


def test_overlap_fraction_tracks_config(desk_suite):
    assert abs(overlap_fraction(desk_suite) - desk_suite.config.overlap_ratio) <= 0.03


def test_generated_suites_pass_validation(tiny_suite, desk_suite):
    assert validate_constraints(tiny_suite) == []
    assert validate_constraints(desk_suite) == []


def test_validation_catches_mayor_with_company_role(tiny_suite):
    g2, g3 = tiny_suite.shard(2), tiny_suite.shard(3)
    mayor_surface = next(g3.surface(t.tail) for t in g3.triples if t.relation == "mayor")
    mayor_node = EntityNode(999_001, "PersonName", mayor_surface)
    some_company = next(t.head for t in g2.triples if t.relation == "ceo")
    tampered = KnowledgeGraph(
        2, g2.entities + [mayor_node],
        g2.triples + [RelationTriple(some_company, "ceo", mayor_node.id)])
    violations = validate_constraints(tiny_suite.with_shard(2, tampered))
    assert [v for v in violations if v.rule == "mayor_employee"]


def test_validation_catches_out_of_range_height(tiny_suite):
    g1 = tiny_suite.shard(1)
    forged = EntityNode(999_002, "height_value", "210cm")
    some_person = next(t.head for t in g1.triples if t.relation == "height")
    triples = [t for t in g1.triples
               if not (t.head == some_person and t.relation == "height")]
    triples.append(RelationTriple(some_person, "height", forged.id))
    tampered = KnowledgeGraph(1, g1.entities + [forged], triples)
    violations = validate_constraints(tiny_suite.with_shard(1, tampered))
    assert [v for v in violations if v.rule == "value_range" and "210cm" in v.message]


def test_validation_catches_duplicate_functional_tail(tiny_suite):
    g1 = tiny_suite.shard(1)
    head = next(t.head for t in g1.triples if t.relation == "live_in")
    cities = [e.id for e in g1.entities if e.kind == "CityName"]
    extra = RelationTriple(head, "live_in", cities[0])
    if extra in g1.triples:
        extra = RelationTriple(head, "live_in", cities[1])
    tampered = KnowledgeGraph(1, g1.entities, g1.triples + [extra])
    violations = validate_constraints(tiny_suite.with_shard(1, tampered))
    assert [v for v in violations if v.rule == "functional"]


def test_jobless_persons_point_at_sentinel_and_zero_income(desk_suite):
    g1 = desk_suite.shard(1)
    sentinel = g1.id_by_surface[NO_COMPANY]
    jobless = {t.head for t in g1.triples
               if t.relation == "work_in" and t.tail == sentinel}
    assert jobless
    for t in g1.triples:
        if t.relation == "annual_income" and t.head in jobless:
            assert g1.surface(t.tail) == "$0"


def test_infeasible_configs_name_the_constraint():
    with pytest.raises(GenerationError, match="jobless"):
        generate_kg_suite(KgConfig(
            n_persons=10, n_companies=9, n_cities=9, jobless_fraction=0.0, seed=0))
    with pytest.raises(GenerationError, match="largest_company"):
        generate_kg_suite(KgConfig(
            n_persons=100, n_companies=3, n_cities=5, jobless_fraction=0.5, seed=0))
    with pytest.raises(GenerationError, match="overlap"):
        KgConfig(overlap_ratio=1.5)


def test_union_counts_and_disjointness(tiny_suite):
    merged = union(tiny_suite)
    assert len(merged.triples) == sum(len(g.triples) for g in tiny_suite.shards)
    per_shard = [{(t.head, t.relation, t.tail) for t in g.triples}
                 for g in tiny_suite.shards]
    assert not (per_shard[0] & per_shard[1])
    assert not (per_shard[1] & per_shard[2])


def test_union_rejects_id_collision():
    a = KnowledgeGraph(1, [EntityNode(1, "PersonName", "Person#1"),
                           EntityNode(2, "gender_value", "male")],
                       [RelationTriple(1, "gender", 2)])
    b = KnowledgeGraph(3, [EntityNode(1, "CityName", "City#1"),
                           EntityNode(3, "area_value", "200km2")],
                       [RelationTriple(1, "area", 3)])
    suite = generate_kg_suite(KgConfig(
        n_persons=10, n_companies=5, n_cities=2, jobless_fraction=0.5, seed=0))
    broken = suite.with_shard(1, a).with_shard(3, b)
    with pytest.raises(MergeError, match="entity id 1"):
        union(broken)


def test_save_load_roundtrip_is_byte_identical(tiny_suite, tmp_path):
    g3 = tiny_suite.shard(3)
    path = tmp_path / "g3.kg"
    save_kg(g3, path)
    loaded = load_kg(path)
    assert loaded.entities == g3.entities
    assert loaded.triples == g3.triples
    again = tmp_path / "again.kg"
    save_kg(loaded, again)
    assert again.read_bytes() == path.read_bytes()


def test_load_reports_line_number_on_truncation(tmp_path):
    path = tmp_path / "broken.kg"
    path.write_text("#graph\towner\t1\n#entities\n5\tPersonName\n", encoding="utf-8")
    with pytest.raises(KgParseError, match="broken.kg:3"):
        load_kg(path)


def test_load_handwritten_fixture(tmp_path):
    text = (
        "#graph\towner\t3\n"
        "#entities\n"
        "1\tCityName\tCity#4\n"
        "2\tCompanyName\tCompany#4\n"
        "3\tPersonName\tPerson#9\n"
        "#triples\n"
        "1\tlargest_company\t2\n"
        "1\tmayor\t3\n"
    )
    path = tmp_path / "fixture.kg"
    path.write_text(text, encoding="utf-8")
    kg = load_kg(path)
    assert kg.owner == 3
    assert kg.tail_surface("largest_company", "City#4") == "Company#4"
    assert kg.head_surface("mayor", "Person#9") == "City#4"


def test_generation_is_deterministic(tmp_path):
    cfg = KgConfig(n_persons=40, n_companies=25, n_cities=6,
                   jobless_fraction=0.3, seed=123)
    for i, run in enumerate(("a", "b")):
        suite = generate_kg_suite(cfg)
        for g in suite.shards:
            save_kg(g, tmp_path / f"{run}{g.owner}.kg")
    for owner in (1, 2, 3):
        assert ((tmp_path / f"a{owner}.kg").read_bytes()
                == (tmp_path / f"b{owner}.kg").read_bytes())
