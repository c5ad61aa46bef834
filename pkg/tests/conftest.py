from collabqa.kgsynth import (
    EntityNode,
    KgConfig,
    KgSuite,
    KnowledgeGraph,
    RelationTriple,
)


def make_suite(g1=(), g2=(), g3=()):
    """Build a suite from per-shard (head_kind, head, rel, tail_kind, tail) rows."""
    counter = [0]
    shards = []
    for owner, rows in ((1, g1), (2, g2), (3, g3)):
        ids = {}
        entities = []
        triples = []

        def node(kind, surface):
            if (kind, surface) not in ids:
                counter[0] += 1
                ids[(kind, surface)] = counter[0]
                entities.append(EntityNode(counter[0], kind, surface))
            return ids[(kind, surface)]

        for head_kind, head, rel, tail_kind, tail in rows:
            triples.append(RelationTriple(node(head_kind, head), rel,
                                          node(tail_kind, tail)))
        shards.append(KnowledgeGraph(owner, entities, triples))
    return KgSuite(tuple(shards), KgConfig())
