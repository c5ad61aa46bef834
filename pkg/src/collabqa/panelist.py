"""Panelist agents: one graph-reading expert per shard.

A panelist encodes its shard with one relational message-passing layer
(each relation carried by a trainable vector, with inverse and self-loop
relation types added), encodes an incoming sub-question with a BiLSTM, and
scores every shard node plus a dedicated UNK candidate through a bilinear
selector.  An exact-lookup oracle variant serves as the reference
environment, and supervised pretraining fits the trained variant to it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .encoders import EncodingError, SequenceEncoder, Vocab, pad_token_ids
from .kgsynth import KgSuite, KnowledgeGraph
from .numerics import (
    OptimizerConfig,
    ParameterStore,
    Tape,
    TrainingError,
    adam_step,
    load_tensors,
    save_tensors,
)
from .taskgen import Catalog, DatasetSplits, relation_of_label, tokenize

__all__ = [
    "CheckpointMismatchError",
    "FrozenPanelist",
    "ModelDims",
    "OraclePanelist",
    "PanelistModel",
    "PretrainConfig",
    "PretrainResult",
    "SubQuestionItem",
    "UNK_TEXT",
    "Utterance",
    "build_subquestion_corpus",
    "load_panelist",
    "pretrain",
    "pretrain_panel",
    "save_panelist",
]

UNK_TEXT = "UNK"


class CheckpointMismatchError(ValueError):
    """A checkpoint that does not match the graph or vocabulary at hand."""


@dataclass(frozen=True)
class ModelDims:
    embedding: int = 40
    hidden: int = 80
    lstm_hidden: int = 40

    def __post_init__(self):
        if min(self.embedding, self.hidden, self.lstm_hidden) < 1:
            raise ValueError("model dimensions must be positive")


@dataclass(frozen=True)
class Utterance:
    speaker: int
    text: str

    @property
    def is_unk(self) -> bool:
        return self.text == UNK_TEXT


class _GraphStructure:
    """Constant aggregation operators for one shard.

    Each node receives one message per incoming edge, one per outgoing edge
    (through a distinct inverse relation type) and one self-loop.  A message
    into v is affine([h_v, h_rel, h_u]), which splits into three projections,
    so the aggregate needs only two sparse count matrices: receiver-by-source
    and receiver-by-relation-type.  Message counts give the mean normalizer.
    """

    def __init__(self, kg: KnowledgeGraph, n_nodes: int, node_index: dict[int, int],
                 relation_index: dict[str, int], n_relations: int):
        from scipy import sparse

        dst: list[int] = []
        rel: list[int] = []
        src: list[int] = []
        for t in kg.triples:
            head, tail = node_index[t.head], node_index[t.tail]
            r = relation_index[t.relation]
            dst.append(tail)
            rel.append(r)
            src.append(head)
            dst.append(head)
            rel.append(r + n_relations)
            src.append(tail)
        self_loop = 2 * n_relations
        for i in range(n_nodes):
            dst.append(i)
            rel.append(self_loop)
            src.append(i)
        dst_arr = np.array(dst, dtype=np.int64)
        ones = np.ones(len(dst), dtype=np.float64)
        self.by_source = sparse.csr_matrix(
            (ones, (dst_arr, np.array(src, dtype=np.int64))),
            shape=(n_nodes, n_nodes))
        self.by_relation = sparse.csr_matrix(
            (ones, (dst_arr, np.array(rel, dtype=np.int64))),
            shape=(n_nodes, 2 * n_relations + 1))
        counts = np.bincount(dst_arr, minlength=n_nodes).astype(np.float64)
        self.inv_count = (1.0 / counts)[:, None]


class PanelistModel:
    """Trainable panelist for one shard; selection runs over nodes plus UNK."""

    def __init__(self, kg: KnowledgeGraph, vocab: Vocab, dims: ModelDims,
                 rng: np.random.Generator):
        self.kg = kg
        self.shard = kg.owner
        self.vocab = vocab
        self.dims = dims
        self.node_surfaces = [e.surface for e in kg.entities] + [UNK_TEXT]
        self.unk_index = len(kg.entities)
        self.node_index = {surface: i for i, surface in enumerate(self.node_surfaces)}
        self.relations = list(kg.schema())
        relation_index = {rel: i for i, rel in enumerate(self.relations)}
        id_index = {e.id: i for i, e in enumerate(kg.entities)}
        self.structure = _GraphStructure(kg, len(self.node_surfaces), id_index,
                                         relation_index, len(self.relations))

        n_nodes = len(self.node_surfaces)
        n_rel_types = 2 * len(self.relations) + 1
        self.store = ParameterStore()
        self.store.randn("graph.node_emb", (n_nodes, dims.embedding), rng, 0.3)
        self.store.randn("graph.rel_emb", (n_rel_types, dims.embedding), rng, 0.3)
        self.store.randn("graph.msg_w", (3 * dims.embedding, dims.hidden), rng, 0.1)
        self.store.zeros("graph.msg_b", (dims.hidden,))
        self.encoder = SequenceEncoder(self.store, "enc", len(vocab),
                                       dims.embedding, dims.lstm_hidden, rng)
        self.store.randn("sel.w", (dims.hidden, self.encoder.output_dim), rng, 0.1)

    # ------------------------------------------------------------- forward

    def encode_graph(self, tape: Tape, nodes: dict) -> "Node":
        """One aggregation layer: mean of affine([h_v, h_rel, h_u]) messages,
        then ReLU; rows follow the node order, UNK last.

        The affine factors over its three input blocks, so the mean is the
        receiver projection plus the bias plus count-weighted means of the
        source and relation projections.
        """
        s = self.structure
        emb = self.dims.embedding
        w = nodes["graph.msg_w"]
        receiver = tape.matmul(nodes["graph.node_emb"], tape.slice_rows(w, 0, emb))
        relation = tape.matmul(nodes["graph.rel_emb"],
                               tape.slice_rows(w, emb, 2 * emb))
        source = tape.matmul(nodes["graph.node_emb"],
                             tape.slice_rows(w, 2 * emb, 3 * emb))
        mixed = tape.add(tape.sparse_matmul(s.by_source, source),
                         tape.sparse_matmul(s.by_relation, relation))
        mean = tape.add(tape.add(receiver, nodes["graph.msg_b"]),
                        tape.mul(mixed, tape.leaf(s.inv_count)))
        return tape.relu(mean)

    def encode_question(self, tape: Tape, nodes: dict, ids: np.ndarray,
                        lengths: np.ndarray):
        return self.encoder.encode(tape, nodes, ids, lengths)

    def select(self, tape: Tape, nodes: dict, graph_enc, question_enc):
        """Bilinear scores, one per node: rows of H W q for each question."""
        projected = tape.matmul(question_enc, tape.transpose(nodes["sel.w"]))
        return tape.matmul(projected, tape.transpose(graph_enc))

    def forward_logits(self, tape: Tape, ids: np.ndarray, lengths: np.ndarray):
        nodes = self.store.nodes(tape)
        graph_enc = self.encode_graph(tape, nodes)
        question_enc = self.encode_question(tape, nodes, ids, lengths)
        return self.select(tape, nodes, graph_enc, question_enc)

    def node_hash(self) -> str:
        digest = hashlib.sha256("\n".join(self.node_surfaces).encode("utf-8"))
        return digest.hexdigest()[:16]


class OraclePanelist:
    """Exact-lookup panelist: parses the sub-question against the simple
    templates and answers from its shard, or says UNK."""

    def __init__(self, kg: KnowledgeGraph, catalog: Catalog):
        self.kg = kg
        self.shard = kg.owner
        self.catalog = catalog
        self.vocab_hash = None
        self.node_hash = None

    def answer(self, text: str) -> Utterance:
        parsed = self.catalog.parse_simple(text)
        if parsed is None:
            return Utterance(self.shard, UNK_TEXT)
        template, slot = parsed
        dr = relation_of_label(template.id)
        if dr.owner != self.shard:
            return Utterance(self.shard, UNK_TEXT)
        if dr.inverse:
            found = self.kg.head_surface(dr.relation, slot)
        else:
            found = self.kg.tail_surface(dr.relation, slot)
        return Utterance(self.shard, found if found is not None else UNK_TEXT)

    def answer_batch(self, texts: list[str]) -> list[Utterance]:
        return [self.answer(text) for text in texts]


class FrozenPanelist:
    """A trained panelist treated as a read-only environment.

    The graph encoding is cached once (parameters are frozen), so answering
    costs one question encode plus a bilinear scoring per query.
    """

    def __init__(self, model: PanelistModel):
        self.model = model
        self.shard = model.shard
        self.vocab_hash = model.vocab.hash()
        self.node_hash = model.node_hash()
        tape = Tape(record=False)
        nodes = model.store.nodes(tape)
        self.graph_enc = model.encode_graph(tape, nodes).data
        self._sel_w = model.store["sel.w"]

    def answer_batch(self, texts: list[str]) -> list[Utterance]:
        token_lists = [tokenize(text) for text in texts]
        known = [all(tok in self.model.vocab for tok in toks) and bool(toks)
                 for toks in token_lists]
        answers = [Utterance(self.shard, UNK_TEXT)] * len(texts)
        rows = [i for i, ok in enumerate(known) if ok]
        if not rows:
            return answers
        ids, lengths = pad_token_ids(self.model.vocab,
                                     [token_lists[i] for i in rows])
        tape = Tape(record=False)
        nodes = self.model.store.nodes(tape)
        question_enc = self.model.encode_question(tape, nodes, ids, lengths)
        logits = question_enc.data @ self._sel_w.T @ self.graph_enc.T
        best = logits.argmax(axis=1)
        for row, node in zip(rows, best):
            answers[row] = Utterance(self.shard, self.model.node_surfaces[int(node)])
        return answers

    def answer(self, text: str) -> Utterance:
        return self.answer_batch([text])[0]


# ------------------------------------------------------------------ corpus


@dataclass(frozen=True)
class SubQuestionItem:
    text: str
    routed_shard: int
    answer: str


@dataclass
class SubQuestionCorpus:
    train: list[SubQuestionItem]
    heldout: list[SubQuestionItem]
    heldout_novel: np.ndarray  # mask: held-out items absent from train


def build_subquestion_corpus(splits: DatasetSplits) -> SubQuestionCorpus:
    """Distinct sub-questions from the train decompositions, plus the dev
    decompositions as the held-out set.

    Sub-questions are shared building blocks, so most dev sub-questions also
    occur under train questions; the ``heldout_novel`` mask marks the ones
    that never do, for the stricter generalization read-out.
    """
    catalog = splits.catalog

    def collect(examples):
        items: dict[str, SubQuestionItem] = {}
        for example in examples:
            for step, hop in zip(example.decomposition, example.path.hops):
                text = catalog.by_id[step.template_id].fill(step.slot)
                if text not in items:
                    owner = relation_of_label(step.template_id).owner
                    items[text] = SubQuestionItem(text, owner, hop.dst)
        return items

    train_items = collect(splits.train)
    dev_items = collect(splits.dev)
    heldout = list(dev_items.values())
    novel = np.array([item.text not in train_items for item in heldout])
    return SubQuestionCorpus(list(train_items.values()), heldout, novel)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 3e-3
    target_accuracy: float = 0.998
    eval_every: int = 2


@dataclass
class PretrainResult:
    accuracy: float
    epochs_run: int
    novel_accuracy: float = float("nan")
    history: list[tuple[int, float]] = field(default_factory=list)


def _labels_for(model: PanelistModel, items: list[SubQuestionItem]) -> np.ndarray:
    labels = np.empty(len(items), dtype=np.int64)
    for i, item in enumerate(items):
        if item.routed_shard == model.shard:
            labels[i] = model.node_index[item.answer]
        else:
            labels[i] = model.unk_index
    return labels


def _predictions(model: PanelistModel, ids: np.ndarray, lengths: np.ndarray,
                 chunk: int = 512) -> np.ndarray:
    out = np.empty(len(ids), dtype=np.int64)
    for start in range(0, len(ids), chunk):
        sl = slice(start, start + chunk)
        tape = Tape(record=False)
        logits = model.forward_logits(tape, ids[sl], lengths[sl])
        out[sl] = logits.data.argmax(axis=1)
    return out


def _accuracy(model: PanelistModel, ids: np.ndarray, lengths: np.ndarray,
              labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float((_predictions(model, ids, lengths) == labels).mean())


def pretrain(model: PanelistModel, corpus: SubQuestionCorpus,
             cfg: PretrainConfig, rng: np.random.Generator) -> PretrainResult:
    """Supervised cross-entropy over node candidates; stops early once the
    held-out accuracy reaches the target."""
    vocab = model.vocab
    train_ids, train_lengths = pad_token_ids(
        vocab, [tokenize(item.text) for item in corpus.train])
    train_labels = _labels_for(model, corpus.train)
    held_ids, held_lengths = pad_token_ids(
        vocab, [tokenize(item.text) for item in corpus.heldout])
    held_labels = _labels_for(model, corpus.heldout)

    opt = OptimizerConfig(learning_rate=cfg.learning_rate)
    history: list[tuple[int, float]] = []
    accuracy = 0.0
    epochs_run = 0
    if cfg.epochs == 0:
        accuracy = _accuracy(model, held_ids, held_lengths, held_labels)
        history.append((0, accuracy))
    for epoch in range(1, cfg.epochs + 1):
        epochs_run = epoch
        order = rng.permutation(len(train_labels))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            tape = Tape()
            logits = model.forward_logits(tape, train_ids[batch],
                                          train_lengths[batch])
            loss, _ = tape.softmax_cross_entropy(logits, train_labels[batch])
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"panelist {model.shard} diverged at epoch {epoch}")
            grads = tape.gradients(loss, model.store)
            adam_step(model.store, grads, opt)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            accuracy = _accuracy(model, held_ids, held_lengths, held_labels)
            history.append((epoch, accuracy))
            if accuracy >= cfg.target_accuracy:
                break
    predictions = _predictions(model, held_ids, held_lengths)
    novel = corpus.heldout_novel
    if novel.any():
        novel_accuracy = float((predictions[novel] == held_labels[novel]).mean())
    else:
        novel_accuracy = float("nan")
    return PretrainResult(accuracy, epochs_run, novel_accuracy, history)


def pretrain_panel(splits: DatasetSplits, suite: KgSuite, dims: ModelDims,
                   cfg: PretrainConfig, seed: int
                   ) -> tuple[list[PanelistModel], list[PretrainResult]]:
    """Pretrain all three panelists on the shared sub-question corpus."""
    corpus = build_subquestion_corpus(splits)
    vocab = Vocab(splits.vocab)
    models: list[PanelistModel] = []
    results: list[PretrainResult] = []
    for shard in (1, 2, 3):
        rng = np.random.default_rng([seed, shard])
        model = PanelistModel(suite.shard(shard), vocab, dims, rng)
        results.append(pretrain(model, corpus, cfg, rng))
        models.append(model)
    return models, results


# -------------------------------------------------------------- checkpoints


def save_panelist(model: PanelistModel, path) -> None:
    header = {
        "kind": "panelist",
        "shard": str(model.shard),
        "vocab_hash": model.vocab.hash(),
        "node_hash": model.node_hash(),
    }
    save_tensors(path, dict(model.store.items()), header)


def load_panelist(path, kg: KnowledgeGraph, vocab: Vocab,
                  dims: ModelDims) -> PanelistModel:
    tensors, header = load_tensors(path)
    model = PanelistModel(kg, vocab, dims, np.random.default_rng(0))
    expectations = {
        "kind": "panelist",
        "shard": str(kg.owner),
        "vocab_hash": vocab.hash(),
        "node_hash": model.node_hash(),
    }
    for key, expected in expectations.items():
        if header.get(key) != expected:
            raise CheckpointMismatchError(
                f"{path}: {key} is {header.get(key)!r}, expected {expected!r}")
    for name in model.store.names():
        if name not in tensors:
            raise CheckpointMismatchError(f"{path}: missing tensor {name!r}")
        model.store[name] = tensors[name]
    return model
