"""Token vocabulary and the batched bidirectional LSTM sequence encoder.

Panelists encode incoming sub-questions and the moderator encodes the whole
dialog history with the same machinery: token embeddings feed a forward and
a backward LSTM pass, and the sequence encoding is the concatenation of the
two final hidden states.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .numerics import LSTM_PARAM_KEYS, ParameterStore, Tape
from .numerics.tape import Node

__all__ = ["EncodingError", "SequenceEncoder", "Vocab", "pad_token_ids"]


class EncodingError(ValueError):
    """An out-of-vocabulary token, named in the message."""


def _hash_lines(lines) -> str:
    digest = hashlib.sha256("\n".join(lines).encode("utf-8"))
    return digest.hexdigest()[:16]


class Vocab:
    """A fixed token list; index 0 is the padding/BOS token."""

    def __init__(self, tokens: list[str]):
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def ids(self, tokens: list[str]) -> list[int]:
        try:
            return [self.index[tok] for tok in tokens]
        except KeyError as exc:
            raise EncodingError(f"token {exc.args[0]!r} is not in the vocabulary") from None

    def hash(self) -> str:
        return _hash_lines(self.tokens)


def pad_token_ids(vocab: Vocab, token_lists: list[list[str]]
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Pad ragged token sequences into an id matrix plus a length vector."""
    if not token_lists:
        raise ValueError("need at least one sequence")
    lengths = np.array([len(toks) for toks in token_lists], dtype=np.int64)
    if lengths.min() < 1:
        raise EncodingError("cannot encode an empty token sequence")
    ids = np.zeros((len(token_lists), int(lengths.max())), dtype=np.int64)
    for row, toks in enumerate(token_lists):
        ids[row, :len(toks)] = vocab.ids(toks)
    return ids, lengths


def _reverse_within_lengths(ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Per row, reverse the first ``length`` ids and keep the padding at the end."""
    n, width = ids.shape
    positions = np.arange(width)[None, :]
    source = lengths[:, None] - 1 - positions
    valid = source >= 0
    gathered = ids[np.arange(n)[:, None], np.clip(source, 0, width - 1)]
    return np.where(valid, gathered, 0)


class SequenceEncoder:
    """Embedding + BiLSTM over padded id batches, exact under padding.

    Steps beyond a row's length carry the hidden state through unchanged
    (0/1 mask arithmetic is exact in floating point), so a row's encoding
    never depends on its padding or on neighboring rows.
    """

    def __init__(self, store: ParameterStore, prefix: str, vocab_size: int,
                 emb_dim: int, hidden: int, rng: np.random.Generator,
                 emb_scale: float = 0.3, weight_scale: float = 0.15):
        self.prefix = prefix
        self.hidden = hidden
        self.emb_dim = emb_dim
        store.randn(f"{prefix}.tok_emb", (vocab_size, emb_dim), rng, emb_scale)
        for direction in ("fwd", "bwd"):
            for key in LSTM_PARAM_KEYS:
                name = f"{prefix}.{direction}.{key}"
                if key.startswith("w"):
                    store.randn(name, (emb_dim, hidden), rng, weight_scale)
                elif key.startswith("u"):
                    store.randn(name, (hidden, hidden), rng, weight_scale)
                else:
                    store.zeros(name, (hidden,))

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def _run_direction(self, tape: Tape, nodes: dict[str, Node], direction: str,
                       ids: np.ndarray, lengths: np.ndarray) -> Node:
        batch, width = ids.shape
        p = {key: nodes[f"{self.prefix}.{direction}.{key}"]
             for key in LSTM_PARAM_KEYS}
        # The four gate transforms fuse into two matmuls per step; slicing the
        # fused pre-activation recovers the per-gate tensors' gradients.
        w_all = tape.concat_cols([p["w_i"], p["w_f"], p["w_o"], p["w_g"]])
        u_all = tape.concat_cols([p["u_i"], p["u_f"], p["u_o"], p["u_g"]])
        emb = nodes[f"{self.prefix}.tok_emb"]
        h = tape.leaf(np.zeros((batch, self.hidden)))
        c = tape.leaf(np.zeros((batch, self.hidden)))
        n = self.hidden
        common = int(lengths.min())
        for t in range(width):
            x = tape.gather_rows(emb, ids[:, t])
            pre = tape.add(tape.matmul(x, w_all), tape.matmul(h, u_all))
            i = tape.sigmoid(tape.add(tape.slice_cols(pre, 0, n), p["b_i"]))
            f = tape.sigmoid(tape.add(tape.slice_cols(pre, n, 2 * n), p["b_f"]))
            o = tape.sigmoid(tape.add(tape.slice_cols(pre, 2 * n, 3 * n), p["b_o"]))
            g = tape.tanh(tape.add(tape.slice_cols(pre, 3 * n, 4 * n), p["b_g"]))
            c_new = tape.add(tape.mul(f, c), tape.mul(i, g))
            h_new = tape.mul(o, tape.tanh(c_new))
            if t < common:
                h, c = h_new, c_new
            else:
                active = (t < lengths).astype(np.float64)[:, None]
                keep = tape.leaf(1.0 - active)
                take = tape.leaf(active)
                h = tape.add(tape.mul(h_new, take), tape.mul(h, keep))
                c = tape.add(tape.mul(c_new, take), tape.mul(c, keep))
        return h

    def encode(self, tape: Tape, nodes: dict[str, Node], ids: np.ndarray,
               lengths: np.ndarray) -> Node:
        """Encode padded id rows into (batch, 2*hidden) sequence vectors."""
        forward = self._run_direction(tape, nodes, "fwd", ids, lengths)
        backward = self._run_direction(tape, nodes, "bwd",
                                       _reverse_within_lengths(ids, lengths),
                                       lengths)
        return tape.concat_cols([forward, backward])
