"""The moderator: dialog-state encoder, template-selection policy, reward.

The moderator reads the full dialog history (question, sub-questions and
every panelist reply, with separator tokens), encodes it with a BiLSTM and
picks the next simple template by a softmax policy head.  Training follows
REINFORCE with the episode reward spread over all its actions plus a hinge
that penalizes policy entropy below a threshold.  In baseline mode the
action space carries an extra terminate action; in enhanced mode the
episode length is fixed and a penalty is added whenever a turn does not
draw exactly one non-UNK reply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import SequenceEncoder, Vocab, pad_token_ids
from .numerics import (
    OptimizerConfig,
    Tape,
    TrainingError,
    adam_step,
    load_tensors,
    save_tensors,
)
from .panelist import CheckpointMismatchError, ModelDims, Utterance
from .taskgen import Catalog, QAExample, fill_slot, tokenize

__all__ = [
    "ActionSpace",
    "DialogState",
    "ModeratorModel",
    "RewardConfig",
    "TERMINATE",
    "UpdateStats",
    "act",
    "compute_reward",
    "fill_template",
    "load_moderator",
    "reinforce_update",
    "save_moderator",
]

TERMINATE = "<terminate>"
MODES = ("baseline", "enhanced")


@dataclass(frozen=True)
class RewardConfig:
    mode: str = "enhanced"
    prior_penalty: float = -0.2
    t_max: int = 4
    entropy_threshold: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.prior_penalty >= 0.0:
            raise ValueError(
                f"prior penalty must be negative, got {self.prior_penalty}")
        if self.entropy_threshold < 0.0:
            raise ValueError(
                f"entropy threshold must be non-negative, got {self.entropy_threshold}")
        if self.t_max < 1:
            raise ValueError(f"t_max must be at least 1, got {self.t_max}")


class ActionSpace:
    """Ordered simple-template ids, plus terminate in baseline mode only."""

    def __init__(self, catalog: Catalog, mode: str):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.labels = list(catalog.action_labels())
        if mode == "baseline":
            self.labels.append(TERMINATE)
        self.index = {label: i for i, label in enumerate(self.labels)}
        self.terminate_index = self.index.get(TERMINATE)

    def __len__(self) -> int:
        return len(self.labels)

    def hash(self) -> str:
        import hashlib

        digest = hashlib.sha256("\n".join(self.labels).encode("utf-8"))
        return digest.hexdigest()[:16]


class DialogState:
    """Token history plus the current-entity register.

    The register starts at the question's anchor and is overwritten only by
    a turn with exactly one non-UNK reply; malformed turns leave it alone.
    """

    def __init__(self, tokens: list[str], register: str, turn: int = 0):
        self.tokens = tokens
        self.register = register
        self.turn = turn

    @classmethod
    def start(cls, example: QAExample) -> "DialogState":
        return cls(["<Q>"] + tokenize(example.question), example.anchor)

    def append_turn(self, sub_question: str, utterances: list[Utterance]) -> None:
        extra = ["<q>"] + tokenize(sub_question)
        for u in utterances:
            extra += [f"<u{u.speaker}>", u.text]
        self.tokens = self.tokens + extra
        answers = [u.text for u in utterances if not u.is_unk]
        if len(answers) == 1:
            self.register = answers[0]
        self.turn += 1


class ModeratorModel:
    """History encoder plus the template-selection policy head."""

    def __init__(self, vocab: Vocab, catalog: Catalog, mode: str,
                 dims: ModelDims, rng: np.random.Generator):
        from .numerics import ParameterStore

        self.vocab = vocab
        self.mode = mode
        self.dims = dims
        self.action_space = ActionSpace(catalog, mode)
        self.store = ParameterStore()
        self.encoder = SequenceEncoder(self.store, "enc", len(vocab),
                                       dims.embedding, dims.lstm_hidden, rng)
        # Zero-initialized head: the starting policy is exactly uniform.
        self.store.zeros("pi.w", (self.encoder.output_dim, len(self.action_space)))
        self.store.zeros("pi.b", (len(self.action_space),))

    def encode_state(self, tape: Tape, nodes: dict, ids: np.ndarray,
                     lengths: np.ndarray):
        return self.encoder.encode(tape, nodes, ids, lengths)

    def policy_logits(self, tape: Tape, ids: np.ndarray, lengths: np.ndarray):
        nodes = self.store.nodes(tape)
        state = self.encode_state(tape, nodes, ids, lengths)
        return tape.affine(state, nodes["pi.w"], nodes["pi.b"])

    def action_distribution(self, token_lists: list[list[str]]) -> np.ndarray:
        """Policy probabilities for a batch of dialog histories (no gradients)."""
        ids, lengths = pad_token_ids(self.vocab, token_lists)
        tape = Tape(record=False)
        return tape.softmax(self.policy_logits(tape, ids, lengths)).data


def act(probs: np.ndarray, rng: np.random.Generator, greedy: bool = False) -> int:
    """Sample an action index (or argmax when greedy; ties at lowest index)."""
    if probs.ndim != 1:
        raise ValueError(f"act expects one distribution, got shape {probs.shape}")
    if greedy:
        return int(np.argmax(probs))
    return int(rng.choice(len(probs), p=probs / probs.sum()))


def fill_template(template, register: str) -> str:
    """Substitute the register into the template's single slot."""
    text = template.text if hasattr(template, "text") else str(template)
    return fill_slot(text, register)


def compute_reward(trace, cfg: RewardConfig) -> float:
    """The scalar episode reward, assigned later to every action in it.

    Baseline: +1 for the right final answer within t_max turns, else -1.
    Enhanced: the prior penalty is added onto -1 whenever any turn drew
    not exactly one non-UNK reply; otherwise +1/-1 by correctness.
    """
    correct = trace.final_answer == trace.example.answer
    if cfg.mode == "enhanced":
        malformed = any(turn.well_formed is False for turn in trace.turns)
        if malformed:
            return -1.0 + cfg.prior_penalty
        return 1.0 if correct else -1.0
    return 1.0 if correct and len(trace.turns) <= cfg.t_max else -1.0


@dataclass
class UpdateStats:
    loss: float
    mean_reward: float
    mean_entropy: float
    n_states: int


def reinforce_update(traces, model: ModeratorModel, cfg: RewardConfig,
                     opt: OptimizerConfig) -> UpdateStats:
    """One REINFORCE step over a batch of completed episodes.

    Minimizes  mean_episodes[ sum_t -r * log pi(a_t | s_t)
                              + sum_t max(0, C - H(pi(.|s_t))) ].
    The hinge contributes exactly zero loss and gradient at states whose
    policy entropy already reaches the threshold.
    """
    if not traces:
        raise ValueError("reinforce_update needs a non-empty batch")
    token_lists: list[list[str]] = []
    actions: list[int] = []
    rewards: list[float] = []
    for trace in traces:
        if trace.reward is None:
            raise ValueError("traces must carry rewards before the update")
        for turn in trace.turns:
            token_lists.append(turn.state_tokens)
            actions.append(model.action_space.index[turn.action])
            rewards.append(trace.reward)
    ids, lengths = pad_token_ids(model.vocab, token_lists)

    tape = Tape()
    logits = model.policy_logits(tape, ids, lengths)
    probs = tape.softmax(logits)
    log_probs = tape.log(probs)
    picked = tape.pick(log_probs, np.array(actions))
    weights = tape.leaf(-np.array(rewards)[:, None])
    score_term = tape.sum(tape.mul(picked, weights))
    entropy = tape.scale(tape.row_sum(tape.mul(probs, log_probs)), -1.0)
    hinge = tape.relu(tape.sub(tape.leaf(np.asarray(cfg.entropy_threshold)),
                               entropy))
    loss = tape.scale(tape.add(score_term, tape.sum(hinge)), 1.0 / len(traces))
    if not np.isfinite(loss.data):
        raise TrainingError("policy update produced a non-finite loss")
    grads = tape.gradients(loss, model.store)
    adam_step(model.store, grads, opt)
    return UpdateStats(float(loss.data),
                       float(np.mean([t.reward for t in traces])),
                       float(entropy.data.mean()), len(actions))


# -------------------------------------------------------------- checkpoints


def save_moderator(model: ModeratorModel, path) -> None:
    header = {
        "kind": "moderator",
        "mode": model.mode,
        "action_hash": model.action_space.hash(),
        "vocab_hash": model.vocab.hash(),
    }
    save_tensors(path, dict(model.store.items()), header)


def load_moderator(path, vocab: Vocab, catalog: Catalog,
                   dims: ModelDims) -> ModeratorModel:
    tensors, header = load_tensors(path)
    mode = header.get("mode")
    if mode not in MODES:
        raise CheckpointMismatchError(f"{path}: bad moderator mode {mode!r}")
    model = ModeratorModel(vocab, catalog, mode, dims, np.random.default_rng(0))
    expectations = {
        "kind": "moderator",
        "action_hash": model.action_space.hash(),
        "vocab_hash": vocab.hash(),
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
