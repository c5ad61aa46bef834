"""The dialog environment: episodes, metrics, training and experiments.

Each turn the acting moderator picks a template, the filled sub-question is
broadcast to all panelists, every reply is collected, and the register
updates when exactly one reply is not UNK.  Baseline mode ends at an
explicit terminate action or after ``t_max`` turns; enhanced mode runs
exactly as many turns as the question has hops.  The final answer is always
the register.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .encoders import Vocab
from .kgsynth import KgConfig, generate_kg_suite
from .moderator import (
    TERMINATE,
    ActionSpace,
    DialogState,
    ModeratorModel,
    RewardConfig,
    UpdateStats,
    act,
    compute_reward,
    fill_template,
    reinforce_update,
)
from .numerics import OptimizerConfig
from .panelist import (
    FrozenPanelist,
    ModelDims,
    PretrainConfig,
    PretrainResult,
    Utterance,
    pretrain_panel,
)
from .taskgen import Catalog, DataConfig, DatasetSplits, QAExample, build_dataset, default_catalog

__all__ = [
    "CrossPairResult",
    "CurvePoint",
    "DialogTrace",
    "GoldScriptedModerator",
    "LearnedModerator",
    "MetricsReport",
    "PairingError",
    "PipelineConfig",
    "PipelineResult",
    "RandomModerator",
    "SweepResult",
    "TrainConfig",
    "TurnRecord",
    "cross_pair",
    "diagonal_flags",
    "evaluate",
    "overlap_sweep",
    "rollout",
    "run_episode",
    "run_pipeline",
    "score",
    "train_moderator",
    "write_curves",
    "write_matrix",
    "write_metrics",
    "write_sweep",
    "write_trace_log",
]


class PairingError(ValueError):
    """Moderator and panel disagree on vocabulary or graph identity."""


@dataclass
class TurnRecord:
    action: str
    sub_question: str | None
    utterances: list[Utterance]
    register_before: str
    register_after: str
    well_formed: bool | None  # None for terminate turns
    state_tokens: list[str]


@dataclass
class DialogTrace:
    example: QAExample
    turns: list[TurnRecord] = field(default_factory=list)
    final_answer: str = ""
    reward: float | None = None

    @property
    def ask_turns(self) -> list[TurnRecord]:
        return [t for t in self.turns if t.action != TERMINATE]


# ----------------------------------------------------------------- policies


class LearnedModerator:
    """Adapter putting a trained ModeratorModel behind the acting interface."""

    def __init__(self, model: ModeratorModel):
        self.model = model
        self.mode = model.mode
        self.action_space = model.action_space

    def choose(self, states: list[DialogState], examples: list[QAExample],
               turn: int, rng: np.random.Generator, greedy: bool) -> list[str]:
        probs = self.model.action_distribution([s.tokens for s in states])
        return [self.action_space.labels[act(row, rng, greedy)] for row in probs]


class GoldScriptedModerator:
    """Always asks the gold decomposition, in order; enhanced-mode pacing."""

    def __init__(self, catalog: Catalog):
        self.mode = "enhanced"
        self.action_space = ActionSpace(catalog, "enhanced")

    def choose(self, states, examples, turn, rng, greedy) -> list[str]:
        return [e.decomposition[turn - 1].template_id for e in examples]


class RandomModerator:
    """Uniform over the active mode's full action space."""

    def __init__(self, catalog: Catalog, mode: str):
        self.mode = mode
        self.action_space = ActionSpace(catalog, mode)

    def choose(self, states, examples, turn, rng, greedy) -> list[str]:
        draws = rng.integers(0, len(self.action_space), size=len(states))
        return [self.action_space.labels[int(i)] for i in draws]


# ----------------------------------------------------------------- episodes


def rollout(examples: list[QAExample], moderator, panelists, cfg: RewardConfig,
            catalog: Catalog, rng: np.random.Generator,
            greedy: bool = False) -> list[DialogTrace]:
    """Run one episode per example, batch-stepping all of them turn by turn."""
    if moderator.mode != cfg.mode:
        raise ValueError(
            f"moderator mode {moderator.mode!r} does not match reward mode {cfg.mode!r}")
    states = [DialogState.start(e) for e in examples]
    traces = [DialogTrace(e) for e in examples]
    running = list(range(len(examples)))
    if cfg.mode == "enhanced":
        for e in examples:
            if e.hops > cfg.t_max:
                raise ValueError(
                    f"question needs {e.hops} turns but t_max is {cfg.t_max}")
    for turn in range(1, cfg.t_max + 1):
        if cfg.mode == "enhanced":
            active = [i for i in running if turn <= examples[i].hops]
        else:
            active = running
        if not active:
            break
        labels = moderator.choose([states[i] for i in active],
                                  [examples[i] for i in active],
                                  turn, rng, greedy)
        asking: list[tuple[int, str, str, list[str]]] = []
        for i, label in zip(active, labels):
            snapshot = list(states[i].tokens)
            if label == TERMINATE:
                register = states[i].register
                traces[i].turns.append(TurnRecord(
                    label, None, [], register, register, None, snapshot))
                running = [j for j in running if j != i]
            else:
                sub_question = fill_template(catalog.by_id[label],
                                             states[i].register)
                asking.append((i, label, sub_question, snapshot))
        if asking:
            texts = [entry[2] for entry in asking]
            replies = [p.answer_batch(texts) for p in panelists]
            for k, (i, label, sub_question, snapshot) in enumerate(asking):
                utterances = [replies[p][k] for p in range(len(panelists))]
                register_before = states[i].register
                states[i].append_turn(sub_question, utterances)
                well_formed = sum(1 for u in utterances if not u.is_unk) == 1
                traces[i].turns.append(TurnRecord(
                    label, sub_question, utterances, register_before,
                    states[i].register, well_formed, snapshot))
    for i, trace in enumerate(traces):
        trace.final_answer = states[i].register
        trace.reward = compute_reward(trace, cfg)
    return traces


def run_episode(example: QAExample, moderator, panelists, cfg: RewardConfig,
                catalog: Catalog, rng: np.random.Generator,
                greedy: bool = False) -> DialogTrace:
    return rollout([example], moderator, panelists, cfg, catalog, rng, greedy)[0]


def score(trace: DialogTrace, gold: QAExample) -> tuple[int, int]:
    """Exact match of the answer, and of the extracted path against gold.

    The extracted path reads one triple per ask turn: (register before the
    turn, the asked template's relation, the unique non-UNK reply).  A
    malformed turn never matches, and the ask-turn count must equal the hop
    count.
    """
    ema = int(trace.final_answer == gold.answer)
    asks = trace.ask_turns
    if len(asks) != gold.hops:
        return ema, 0
    for turn, hop in zip(asks, gold.path.hops):
        if not turn.well_formed:
            return ema, 0
        answer = next(u.text for u in turn.utterances if not u.is_unk)
        if (turn.register_before, turn.action, answer) != (hop.src, hop.label, hop.dst):
            return ema, 0
    return ema, 1


# ---------------------------------------------------------------- evaluation


@dataclass
class MetricsReport:
    ema: float
    emp: float
    count: int
    per_template: dict[str, tuple[int, float, float]]
    termination_errors: int

    def __str__(self) -> str:
        return (f"EMA {100 * self.ema:.1f} / EMP {100 * self.emp:.1f} "
                f"over {self.count} questions")


def evaluate(moderator, panelists, examples: list[QAExample], cfg: RewardConfig,
             catalog: Catalog, rng: np.random.Generator | None = None,
             chunk: int = 256, collect_traces: bool = False):
    """Greedy evaluation over a question list; optionally keep the traces."""
    rng = rng if rng is not None else np.random.default_rng(0)
    ema_sum = emp_sum = 0
    termination_errors = 0
    by_template: dict[str, list[int]] = {}
    kept: list[tuple[DialogTrace, int, int]] = []
    for start in range(0, len(examples), chunk):
        batch = examples[start:start + chunk]
        traces = rollout(batch, moderator, panelists, cfg, catalog, rng,
                         greedy=True)
        for trace, example in zip(traces, batch):
            ema, emp = score(trace, example)
            ema_sum += ema
            emp_sum += emp
            if not ema and len(trace.ask_turns) != example.hops:
                termination_errors += 1
            bucket = by_template.setdefault(example.template_id, [0, 0, 0])
            bucket[0] += 1
            bucket[1] += ema
            bucket[2] += emp
            if collect_traces:
                kept.append((trace, ema, emp))
    n = max(len(examples), 1)
    report = MetricsReport(
        ema_sum / n, emp_sum / n, len(examples),
        {tid: (c, e / c, p / c) for tid, (c, e, p) in sorted(by_template.items())},
        termination_errors)
    if collect_traces:
        return report, kept
    return report


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "enhanced"
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 3e-3
    entropy_threshold: float = 0.1
    prior_penalty: float = -0.2
    t_max: int = 4
    eval_every: int = 10
    dims: ModelDims = ModelDims()

    def reward_config(self) -> RewardConfig:
        return RewardConfig(self.mode, self.prior_penalty, self.t_max,
                            self.entropy_threshold)


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    ema: float
    emp: float
    mean_reward: float
    mean_entropy: float


def train_moderator(splits: DatasetSplits, panelists, cfg: TrainConfig,
                    seed: int) -> tuple[ModeratorModel, list[CurvePoint]]:
    """REINFORCE training against frozen panelists, with periodic dev scores."""
    rng = np.random.default_rng([seed, 0])
    model = ModeratorModel(Vocab(splits.vocab), splits.catalog, cfg.mode,
                           cfg.dims, rng)
    moderator = LearnedModerator(model)
    reward_cfg = cfg.reward_config()
    opt = OptimizerConfig(learning_rate=cfg.learning_rate)
    curves: list[CurvePoint] = []
    last_stats: UpdateStats | None = None
    for epoch in range(1, cfg.epochs + 1):
        picks = rng.integers(0, len(splits.train), size=cfg.batch_size)
        batch = [splits.train[int(i)] for i in picks]
        traces = rollout(batch, moderator, panelists, reward_cfg,
                         splits.catalog, rng, greedy=False)
        last_stats = reinforce_update(traces, model, reward_cfg, opt)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            report = evaluate(moderator, panelists, splits.dev, reward_cfg,
                              splits.catalog)
            curves.append(CurvePoint(epoch, report.ema, report.emp,
                                     last_stats.mean_reward,
                                     last_stats.mean_entropy))
    return model, curves


# --------------------------------------------------------------- experiments


@dataclass(frozen=True)
class PipelineConfig:
    kg: KgConfig = KgConfig()
    data: DataConfig = DataConfig()
    dims: ModelDims = ModelDims()
    pretrain: PretrainConfig = PretrainConfig()
    train: TrainConfig = TrainConfig()


@dataclass
class PipelineResult:
    suite: object
    splits: DatasetSplits
    panelists: list[FrozenPanelist]
    panelist_results: list[PretrainResult]
    moderator: ModeratorModel
    curves: list[CurvePoint]
    test_report: MetricsReport


def run_pipeline(cfg: PipelineConfig, seed: int) -> PipelineResult:
    """Generate the world, pretrain the panel, train a moderator, evaluate."""
    suite = generate_kg_suite(replace(cfg.kg, seed=seed))
    catalog = default_catalog()
    splits = build_dataset(cfg.data, suite, catalog, seed=seed)
    models, results = pretrain_panel(splits, suite, cfg.dims, cfg.pretrain, seed)
    panel = [FrozenPanelist(m) for m in models]
    model, curves = train_moderator(splits, panel, cfg.train, seed)
    report = evaluate(LearnedModerator(model), panel, splits.test,
                      cfg.train.reward_config(), splits.catalog)
    return PipelineResult(suite, splits, panel, results, model, curves, report)


def _check_pairing(moderator: ModeratorModel, panel) -> None:
    for p in panel:
        if p.vocab_hash is not None and p.vocab_hash != moderator.vocab.hash():
            raise PairingError(
                f"panelist {p.shard} vocabulary hash {p.vocab_hash} does not "
                f"match the moderator's {moderator.vocab.hash()}")


@dataclass
class CrossPairResult:
    matrix: np.ndarray  # rows: panel group, columns: moderator
    diagonal_is_max: list[bool]


def diagonal_flags(matrix: np.ndarray) -> list[bool]:
    """Per column: does the native pairing (the diagonal) score highest?"""
    return [bool(matrix[j, j] >= matrix[:, j].max()) for j in range(matrix.shape[1])]


def cross_pair(panels, moderators: list[ModeratorModel],
               examples: list[QAExample], cfg: RewardConfig,
               catalog: Catalog) -> CrossPairResult:
    """EMA for every (panel group, moderator) pairing; diagonal = native."""
    n = len(moderators)
    if len(panels) != n:
        raise ValueError("need one panel group per moderator")
    matrix = np.zeros((n, n))
    for j, model in enumerate(moderators):
        for i, panel in enumerate(panels):
            _check_pairing(model, panel)
            report = evaluate(LearnedModerator(model), panel, examples, cfg,
                              catalog)
            matrix[i, j] = report.ema
    return CrossPairResult(matrix, diagonal_flags(matrix))


@dataclass
class SweepResult:
    rows: list[tuple[float, int, float, float]]  # ratio, seed, ema, emp
    summary: list[tuple[float, float, float]]    # ratio, mean ema, mean emp


def overlap_sweep(ratios: list[float], cfg: PipelineConfig,
                  seeds: list[int]) -> SweepResult:
    """Rerun the full pipeline per overlap ratio and average over seeds."""
    rows: list[tuple[float, int, float, float]] = []
    summary: list[tuple[float, float, float]] = []
    for ratio in sorted(ratios):
        emas, emps = [], []
        for seed in seeds:
            run_cfg = replace(cfg, kg=replace(cfg.kg, overlap_ratio=ratio))
            result = run_pipeline(run_cfg, seed)
            rows.append((ratio, seed, result.test_report.ema,
                         result.test_report.emp))
            emas.append(result.test_report.ema)
            emps.append(result.test_report.emp)
        summary.append((ratio, float(np.mean(emas)), float(np.mean(emps))))
    return SweepResult(rows, summary)


# ---------------------------------------------------------------------- I/O


def write_trace_log(scored_traces, path) -> None:
    """One JSON record per episode: turns, answer, reward, EMA, EMP."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for trace, ema, emp in scored_traces:
            record = {
                "question": trace.example.question,
                "turns": [{
                    "action": t.action,
                    "sub_question": t.sub_question,
                    "utterances": [u.text for u in t.utterances],
                    "register_after": t.register_after,
                    "well_formed": t.well_formed,
                } for t in trace.turns],
                "answer": trace.final_answer,
                "reward": trace.reward,
                "ema": ema,
                "emp": emp,
            }
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True,
                                separators=(",", ":")) + "\n")


def write_metrics(report: MetricsReport, path, template_path=None) -> None:
    lines = ["metric,value",
             f"ema,{report.ema:.6f}",
             f"emp,{report.emp:.6f}",
             f"count,{report.count}",
             f"termination_errors,{report.termination_errors}"]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if template_path is not None:
        rows = ["template_id,count,ema,emp"]
        rows += [f"{tid},{c},{e:.6f},{p:.6f}"
                 for tid, (c, e, p) in report.per_template.items()]
        Path(template_path).write_text("\n".join(rows) + "\n", encoding="utf-8")


CURVE_HEADER = "epoch,ema,emp,mean_reward,mean_entropy"


def write_curves(curves: list[CurvePoint], path, seed: int | None = None) -> None:
    """Single-seed curve file, or seed-labelled rows when ``seed`` is given."""
    header = CURVE_HEADER if seed is None else "seed," + CURVE_HEADER
    lines = [header]
    for p in curves:
        row = f"{p.epoch},{p.ema:.6f},{p.emp:.6f},{p.mean_reward:.6f},{p.mean_entropy:.6f}"
        lines.append(row if seed is None else f"{seed},{row}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_multi_curves(curves_by_seed: dict[int, list[CurvePoint]], path) -> None:
    lines = ["seed," + CURVE_HEADER]
    for seed in sorted(curves_by_seed):
        for p in curves_by_seed[seed]:
            lines.append(f"{seed},{p.epoch},{p.ema:.6f},{p.emp:.6f},"
                         f"{p.mean_reward:.6f},{p.mean_entropy:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_matrix(result: CrossPairResult, path, flags_path=None) -> None:
    n = result.matrix.shape[0]
    lines = ["," + ",".join(f"P0_{j + 1}" for j in range(n))]
    for i in range(n):
        cells = ",".join(f"{result.matrix[i, j]:.6f}" for j in range(n))
        lines.append(f"Panel_{i + 1},{cells}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if flags_path is not None:
        rows = ["column,diagonal_is_max"]
        rows += [f"P0_{j + 1},{int(flag)}"
                 for j, flag in enumerate(result.diagonal_is_max)]
        Path(flags_path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def write_sweep(result: SweepResult, path, summary_path=None) -> None:
    lines = ["ratio,seed,ema,emp"]
    lines += [f"{r},{s},{e:.6f},{p:.6f}" for r, s, e, p in result.rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if summary_path is not None:
        rows = ["ratio,ema,emp"]
        rows += [f"{r},{e:.6f},{p:.6f}" for r, e, p in result.summary]
        Path(summary_path).write_text("\n".join(rows) + "\n", encoding="utf-8")
