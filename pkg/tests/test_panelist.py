import numpy as np
import pytest

from collabqa.encoders import EncodingError, SequenceEncoder, Vocab, pad_token_ids
from collabqa.kgsynth import KgConfig, generate_kg_suite
from collabqa.numerics import ParameterStore, Tape, grad_check
from collabqa.panelist import (
    CheckpointMismatchError,
    FrozenPanelist,
    ModelDims,
    OraclePanelist,
    PanelistModel,
    PretrainConfig,
    SubQuestionCorpus,
    SubQuestionItem,
    UNK_TEXT,
    build_subquestion_corpus,
    load_panelist,
    pretrain,
    save_panelist,
)
from collabqa.taskgen import (
    DataConfig,
    build_dataset,
    build_vocab,
    default_catalog,
    tokenize,
)

from conftest import make_suite


SMALL = ModelDims(embedding=4, hidden=6, lstm_hidden=3)


@pytest.fixture(scope="module")
def catalog():
    return default_catalog()


@pytest.fixture(scope="module")
def worked_suite():
    return make_suite(
        g1=[("PersonName", "Person#1", "birthplace", "CityName", "City#4"),
            ("PersonName", "Person#1", "live_in", "CityName", "City#7")],
        g2=[("CompanyName", "Company#4", "locate_in", "CityName", "City#4")],
        g3=[("CityName", "City#4", "largest_company", "CompanyName", "Company#4")],
    )


@pytest.fixture(scope="module")
def small_vocab(worked_suite, catalog):
    return Vocab(build_vocab(worked_suite, catalog))


# --------------------------------------------------------------- vocab/pad


def test_vocab_rejects_unknown_token(small_vocab):
    with pytest.raises(EncodingError, match="NotAToken"):
        small_vocab.ids(["NotAToken"])


def test_pad_token_ids_shapes(small_vocab):
    ids, lengths = pad_token_ids(small_vocab, [["<Q>", "UNK"], ["<s>"]])
    assert ids.shape == (2, 2)
    assert lengths.tolist() == [2, 1]
    assert ids[1, 1] == 0  # padding uses index 0


# ------------------------------------------------------------ graph encoder


def test_isolated_node_with_zero_mlp_encodes_to_zero(worked_suite, small_vocab):
    model = PanelistModel(worked_suite.shard(2), small_vocab, SMALL,
                          np.random.default_rng(0))
    model.store["graph.msg_w"] = np.zeros_like(model.store["graph.msg_w"])
    model.store["graph.msg_b"] = np.zeros_like(model.store["graph.msg_b"])
    tape = Tape(record=False)
    enc = model.encode_graph(tape, model.store.nodes(tape))
    assert np.array_equal(enc.data, np.zeros_like(enc.data))


def test_two_node_graph_matches_scalar_unroll(catalog):
    suite = make_suite(g1=[("PersonName", "Person#1", "gender", "gender_value", "male")])
    vocab = Vocab(build_vocab(suite, catalog))
    model = PanelistModel(suite.shard(1), vocab, SMALL, np.random.default_rng(3))
    tape = Tape(record=False)
    enc = model.encode_graph(tape, model.store.nodes(tape)).data

    emb = model.store["graph.node_emb"]
    rel = model.store["graph.rel_emb"]
    w = model.store["graph.msg_w"]
    b = model.store["graph.msg_b"]
    n_rel = len(model.relations)
    gender = model.relations.index("gender")
    person, male = model.node_index["Person#1"], model.node_index["male"]

    def message(dst, r, src):
        x = np.concatenate([emb[dst], rel[r], emb[src]])
        return x @ w + b

    expected = np.zeros_like(enc)
    self_loop = 2 * n_rel
    # male receives the forward edge and its self-loop; person the inverse.
    expected[male] = (message(male, gender, person) + message(male, self_loop, male)) / 2
    expected[person] = (message(person, gender + n_rel, male)
                        + message(person, self_loop, person)) / 2
    expected[model.unk_index] = message(model.unk_index, self_loop, model.unk_index)
    expected = np.maximum(expected, 0.0)
    assert np.max(np.abs(enc - expected)) <= 1e-12


def test_full_panelist_gradients_vs_finite_differences(worked_suite, small_vocab):
    model = PanelistModel(worked_suite.shard(1), small_vocab, SMALL,
                          np.random.default_rng(5))
    ids, lengths = pad_token_ids(small_vocab, [
        tokenize("Which city was Person#1 born in ?"),
        tokenize("Which city does Person#1 live in ?"),
    ])
    labels = np.array([model.node_index["City#4"], model.node_index["City#7"]])

    def forward(store, tape):
        logits = model.forward_logits(tape, ids, lengths)
        loss, _ = tape.softmax_cross_entropy(logits, labels)
        return loss

    report = grad_check(forward, model.store, tolerance=1e-4, samples=8)
    assert report.passed, str(report)


# --------------------------------------------------------- question encoder


def test_encode_question_zero_params_gives_zero(small_vocab):
    store = ParameterStore()
    enc = SequenceEncoder(store, "enc", len(small_vocab), 4, 3,
                          np.random.default_rng(0))
    for name in store.names():
        store[name] = np.zeros_like(store[name])
    ids, lengths = pad_token_ids(small_vocab, [["<s>"]])
    tape = Tape(record=False)
    out = enc.encode(tape, store.nodes(tape), ids, lengths)
    assert np.array_equal(out.data, np.zeros((1, 6)))


def test_tied_directions_swap_halves_on_reversal(small_vocab):
    store = ParameterStore()
    enc = SequenceEncoder(store, "enc", len(small_vocab), 4, 3,
                          np.random.default_rng(1))
    for key in [n for n in store.names() if ".fwd." in n]:
        store[key.replace(".fwd.", ".bwd.")] = store[key]
    tokens = tokenize("Which city was Person#1 born in ?")
    ids, lengths = pad_token_ids(small_vocab, [tokens, tokens[::-1]])
    tape = Tape(record=False)
    out = enc.encode(tape, store.nodes(tape), ids, lengths).data
    assert np.max(np.abs(out[0, :3] - out[1, 3:])) <= 1e-12
    assert np.max(np.abs(out[0, 3:] - out[1, :3])) <= 1e-12


def test_encoder_matches_stepwise_lstm_composition(small_vocab):
    store = ParameterStore()
    enc = SequenceEncoder(store, "enc", len(small_vocab), 4, 3,
                          np.random.default_rng(2))
    tokens = tokenize("What is the largest company in City#4 ?")
    ids, lengths = pad_token_ids(small_vocab, [tokens])

    tape = Tape(record=False)
    nodes = store.nodes(tape)
    out = enc.encode(tape, nodes, ids, lengths).data

    from collabqa.numerics import LSTM_PARAM_KEYS

    def manual(direction, id_row):
        params = {k: nodes[f"enc.{direction}.{k}"] for k in LSTM_PARAM_KEYS}
        h = tape.leaf(np.zeros((1, 3)))
        c = tape.leaf(np.zeros((1, 3)))
        for token_id in id_row:
            x = tape.gather_rows(nodes["enc.tok_emb"], np.array([token_id]))
            h, c = tape.lstm_step(x, h, c, params)
        return h.data

    expected = np.concatenate(
        [manual("fwd", ids[0]), manual("bwd", ids[0][::-1])], axis=1)
    assert np.max(np.abs(out - expected)) <= 1e-12


def test_padding_neighbors_never_leak_into_a_row(small_vocab):
    store = ParameterStore()
    enc = SequenceEncoder(store, "enc", len(small_vocab), 4, 3,
                          np.random.default_rng(4))
    short = tokenize("Who is the mayor of City#4 ?")
    long_a = tokenize("What is the largest company in the city where Person#1 was born?")
    long_b = tokenize("Which state is City#4 contained by ? ? ? ? ? ? ?")
    outs = []
    for other in (long_a, long_b):
        tape = Tape(record=False)
        ids, lengths = pad_token_ids(small_vocab, [short, other])
        outs.append(enc.encode(tape, store.nodes(tape), ids, lengths).data)
    # Same batch shape, different neighbor: the padded short row is bit-equal.
    assert np.array_equal(outs[0][0], outs[1][0])
    # Against a batch of one the result agrees numerically (BLAS kernels may
    # differ in the last ulp across batch shapes).
    tape = Tape(record=False)
    ids1, len1 = pad_token_ids(small_vocab, [short])
    alone = enc.encode(tape, store.nodes(tape), ids1, len1).data
    assert np.max(np.abs(outs[0][0] - alone[0])) <= 1e-12


# ----------------------------------------------------------------- selector


def test_selector_orthonormal_rows_identity_weight():
    suite = make_suite(g1=[("PersonName", "Person#1", "gender", "gender_value", "male")])
    vocab = Vocab(["<s>", "UNK", "a"])
    dims = ModelDims(embedding=3, hidden=3, lstm_hidden=3)
    model = PanelistModel(suite.shard(1), vocab, dims, np.random.default_rng(0))
    tape = Tape(record=False)
    graph_enc = tape.leaf(np.eye(3))
    sel = tape.leaf(np.eye(3) @ np.eye(3, 6))
    # Direct bilinear scoring with orthonormal rows picks the matching row.
    for k in range(3):
        q = tape.leaf(np.eye(3)[k][None, :] @ np.eye(3, 6))
        projected = tape.matmul(q, tape.transpose(sel))
        scores = tape.matmul(projected, tape.transpose(graph_enc))
        assert int(scores.data.argmax()) == k


def test_selector_zero_question_breaks_ties_by_lowest_index(worked_suite, small_vocab):
    model = PanelistModel(worked_suite.shard(1), small_vocab, SMALL,
                          np.random.default_rng(7))
    tape = Tape(record=False)
    nodes = model.store.nodes(tape)
    graph_enc = model.encode_graph(tape, nodes)
    q = tape.leaf(np.zeros((1, model.encoder.output_dim)))
    scores = model.select(tape, nodes, graph_enc, q)
    assert np.array_equal(scores.data, np.zeros_like(scores.data))
    assert int(scores.data.argmax()) == 0


def test_selector_matches_bruteforce_scores(worked_suite, small_vocab):
    model = PanelistModel(worked_suite.shard(3), small_vocab, SMALL,
                          np.random.default_rng(9))
    r = np.random.default_rng(10)
    graph = r.uniform(-1, 1, (len(model.node_surfaces), SMALL.hidden))
    q = r.uniform(-1, 1, (2, model.encoder.output_dim))
    tape = Tape(record=False)
    nodes = model.store.nodes(tape)
    scores = model.select(tape, nodes, tape.leaf(graph), tape.leaf(q)).data
    w = model.store["sel.w"]
    for row in range(2):
        for node in range(len(model.node_surfaces)):
            brute = graph[node] @ (w @ q[row])
            assert abs(scores[row, node] - brute) <= 1e-10


# ------------------------------------------------------------------ answer


def test_oracle_unk_for_out_of_shard_relation(worked_suite, catalog):
    oracle1 = OraclePanelist(worked_suite.shard(1), catalog)
    assert oracle1.answer("What is the largest company in City#4 ?").is_unk


def test_oracle_answers_in_shard_lookup(worked_suite, catalog):
    oracle1 = OraclePanelist(worked_suite.shard(1), catalog)
    reply = oracle1.answer("Which city was Person#1 born in ?")
    assert reply.text == "City#4" and reply.speaker == 1
    oracle3 = OraclePanelist(worked_suite.shard(3), catalog)
    assert oracle3.answer("What is the largest company in City#4 ?").text == "Company#4"
    # Inverse phrasing routes through the tail-to-head map.
    assert oracle3.answer("Which city is Company#4 the largest company in ?").text == "City#4"
    assert oracle1.answer("total nonsense").is_unk


def test_overfit_panelist_agrees_with_oracle_in_shard(worked_suite, catalog):
    vocab = Vocab(build_vocab(worked_suite, catalog))
    shard = worked_suite.shard(1)
    oracle = OraclePanelist(shard, catalog)
    in_shard = ["Which city was Person#1 born in ?",
                "Which city does Person#1 live in ?"]
    out_shard = ["What is the largest company in City#4 ?",
                 "Which city is Company#4 located in ?"]
    items = [SubQuestionItem(t, 1, oracle.answer(t).text) for t in in_shard]
    items.append(SubQuestionItem(out_shard[0], 3, "Company#4"))
    items.append(SubQuestionItem(out_shard[1], 2, "City#4"))
    corpus = SubQuestionCorpus(items, items, np.zeros(len(items), dtype=bool))
    model = PanelistModel(shard, vocab, ModelDims(8, 8, 4), np.random.default_rng(1))
    result = pretrain(model, corpus, PretrainConfig(
        epochs=300, batch_size=4, target_accuracy=1.0), np.random.default_rng(2))
    assert result.accuracy == 1.0
    frozen = FrozenPanelist(model)
    for text in in_shard:
        assert frozen.answer(text).text == oracle.answer(text).text
    for text in out_shard:
        assert frozen.answer(text).is_unk


def test_untrained_accuracy_is_near_chance():
    suite = generate_kg_suite(KgConfig(
        n_persons=30, n_companies=20, n_cities=5, jobless_fraction=0.3, seed=7))
    catalog = default_catalog()
    splits = build_dataset(DataConfig(train_size=60, dev_size=30, test_size=10),
                           suite, catalog, seed=3)
    corpus = build_subquestion_corpus(splits)
    vocab = Vocab(splits.vocab)
    model = PanelistModel(suite.shard(1), vocab, SMALL, np.random.default_rng(0))
    result = pretrain(model, corpus, PretrainConfig(epochs=0),
                      np.random.default_rng(0))
    assert result.accuracy <= 0.1


# -------------------------------------------------------------- checkpoints


def test_panelist_checkpoint_roundtrip(worked_suite, small_vocab, tmp_path):
    model = PanelistModel(worked_suite.shard(1), small_vocab, SMALL,
                          np.random.default_rng(11))
    path = tmp_path / "p1.ckpt"
    save_panelist(model, path)
    loaded = load_panelist(path, worked_suite.shard(1), small_vocab, SMALL)
    for name in model.store.names():
        assert np.array_equal(loaded.store[name], model.store[name])


def test_panelist_checkpoint_rejects_wrong_graph(worked_suite, small_vocab,
                                                 catalog, tmp_path):
    model = PanelistModel(worked_suite.shard(1), small_vocab, SMALL,
                          np.random.default_rng(11))
    path = tmp_path / "p1.ckpt"
    save_panelist(model, path)
    other = make_suite(g1=[("PersonName", "Person#2", "gender", "gender_value", "male")])
    with pytest.raises(CheckpointMismatchError, match="node_hash"):
        load_panelist(path, other.shard(1), small_vocab, SMALL)
