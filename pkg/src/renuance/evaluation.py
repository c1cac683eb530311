"""Empathy scoring, emotion-recognition accuracy, and report arithmetic.

The deterministic keyword scorer below is an acceptance-path stand-in for an
external trained empathy classifier; nothing here claims calibrated empathy
judgments. Recognition is scored as unweighted accuracy (mean per-class
recall) from a confusion matrix whose prediction axis includes the extra
option word and an unparsed bucket, both counted as errors.
"""

from __future__ import annotations

import json
import logging
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .heads import mean_pool, predict_emotion
from .lm import GenerationResult, generate
from .manifest import EMOTION_CATEGORIES, DatasetManifest, UtteranceRecord
from .prompts import SER_OPTION_WORDS, get_template
from .training import TEXT_MODES, TrainState, build_lm_input

logger = logging.getLogger(__name__)

EX_QUESTION_CUES = ("what", "why", "how", "can you", "could you", "tell me")
ER_STRONG_PHRASES = ("sorry to hear", "i understand", "that sounds")
ER_EMOTION_WORDS = ("sad", "angry", "happy", "afraid", "anxious", "upset")


@dataclass(frozen=True)
class EmpathyScore:
    er: int
    ex: int

    def __post_init__(self):
        if self.er not in (0, 1, 2) or self.ex not in (0, 1, 2):
            raise ValueError(f"empathy scores must be ordinals in 0..2, got ({self.er}, {self.ex})")


@dataclass(frozen=True)
class ScoreSummary:
    mean: float
    std: float
    n: int


def heuristic_stub_scorer(response: str) -> EmpathyScore:
    """Deterministic keyword rules standing in for the external scorer."""
    low = response.lower()
    if "?" in low and any(cue in low for cue in EX_QUESTION_CUES):
        ex = 2
    elif "?" in low:
        ex = 1
    else:
        ex = 0
    if any(phrase in low for phrase in ER_STRONG_PHRASES):
        er = 2
    elif any(word in low for word in ER_EMOTION_WORDS):
        er = 1
    else:
        er = 0
    return EmpathyScore(er=er, ex=ex)


@dataclass
class SubprocessEmpathyScorer:
    """External scorer contract: JSONL {id, response_text} in, {id, er, ex} out."""

    cmd: list[str]
    timeout: float = 120.0

    def score_many(self, responses: list[str]) -> list[EmpathyScore | None]:
        request = "".join(
            json.dumps({"id": i, "response_text": text}) + "\n" for i, text in enumerate(responses)
        )
        result = subprocess.run(
            self.cmd, input=request, capture_output=True, text=True, timeout=self.timeout, check=True,
        )
        replies: dict[int, EmpathyScore] = {}
        for line in result.stdout.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            replies[int(obj["id"])] = EmpathyScore(er=int(obj["er"]), ex=int(obj["ex"]))
        out: list[EmpathyScore | None] = []
        for i in range(len(responses)):
            if i not in replies:
                logger.warning("empathy scorer returned no reply for response %d", i)
            out.append(replies.get(i))
        return out


def score_empathy(responses: list[str], scorer) -> list[EmpathyScore | None]:
    """One (er, ex) per response, order preserved; failures become None entries."""
    if hasattr(scorer, "score_many"):
        return scorer.score_many(list(responses))
    out: list[EmpathyScore | None] = []
    for i, response in enumerate(responses):
        try:
            out.append(scorer(response))
        except Exception as err:  # scorer is external code; keep the run alive
            logger.warning("empathy scorer failed for response %d: %s", i, err)
            out.append(None)
    return out


def summarize(scores) -> ScoreSummary:
    """Mean and sample (n-1) standard deviation; a single score has std 0."""
    values = np.asarray(list(scores), dtype=np.float64)
    if values.size < 1:
        raise ValueError("cannot summarize an empty score list")
    std = 0.0 if values.size == 1 else float(values.std(ddof=1))
    return ScoreSummary(mean=float(values.mean()), std=std, n=int(values.size))


def format_mean_std(mean: float, std: float) -> str:
    """Report-cell format, e.g. 1.847(.438)."""
    std_text = f"{std:.3f}"
    if std_text.startswith("0."):
        std_text = std_text[1:]
    return f"{mean:.3f}({std_text})"


# -- emotion recognition -------------------------------------------------------


def extract_emotion_label(text: str) -> str | None:
    """Earliest option word by character offset, case-insensitive; None if absent."""
    low = text.lower()
    best: tuple[int, str] | None = None
    for word in SER_OPTION_WORDS:
        offset = low.find(word)
        if offset >= 0 and (best is None or offset < best[0]):
            best = (offset, word)
    return best[1] if best else None


@dataclass
class ConfusionMatrix:
    gold_labels: tuple[str, ...]
    pred_labels: tuple[str, ...]
    counts: np.ndarray

    @staticmethod
    def make(
        gold_labels=EMOTION_CATEGORIES,
        extra_pred: tuple[str, ...] = ("surprise", "unparsed"),
    ) -> "ConfusionMatrix":
        pred_labels = tuple(gold_labels) + tuple(extra_pred)
        return ConfusionMatrix(
            gold_labels=tuple(gold_labels),
            pred_labels=pred_labels,
            counts=np.zeros((len(gold_labels), len(pred_labels)), dtype=np.int64),
        )

    def add(self, gold: str, pred: str | None) -> None:
        if gold not in self.gold_labels:
            raise ValueError(f"unknown gold label {gold!r}")
        pred_key = pred if pred in self.pred_labels else "unparsed"
        self.counts[self.gold_labels.index(gold), self.pred_labels.index(pred_key)] += 1

    def to_json(self) -> dict:
        return {
            "gold_labels": list(self.gold_labels),
            "pred_labels": list(self.pred_labels),
            "counts": self.counts.tolist(),
        }


def unweighted_accuracy(cm: ConfusionMatrix) -> float:
    """Mean of per-class recalls over gold classes; every class needs >= 1 sample."""
    recalls = []
    for i, label in enumerate(cm.gold_labels):
        row_total = int(cm.counts[i].sum())
        if row_total == 0:
            raise ValueError(f"gold class {label!r} has no samples")
        correct = int(cm.counts[i, cm.pred_labels.index(label)])
        recalls.append(correct / row_total)
    return float(np.mean(recalls))


def respond_to_record(
    state: TrainState,
    manifest: DatasetManifest,
    record: UtteranceRecord,
    template_name: str = "continuation_step2",
    max_new: int = 64,
) -> GenerationResult:
    """Greedy continuation for one utterance under the given prompt."""
    input_emb = build_lm_input(state, manifest, record, get_template(template_name))
    return generate(
        input_emb, state.params["lm"], state.model.lm, max_new=max_new, tokenizer=state.tokenizer,
    )


def evaluate_ser(
    state: TrainState,
    test_manifest: DatasetManifest,
    mode: str = "prompt",
    max_new: int = 12,
) -> tuple[ConfusionMatrix, float]:
    """Emotion recognition over a test manifest.

    "prompt" renders the five-option identification prompt, generates greedily,
    and parses the earliest option word; "head" takes the auxiliary classifier
    argmax. Unparsed or out-of-set predictions count as errors.
    """
    if mode not in ("prompt", "head"):
        raise ValueError(f"unknown recognition mode {mode!r}")
    cm = ConfusionMatrix.make()
    for record in test_manifest:
        if record.emotion_cat is None:
            raise ValueError(f"record {record.utt_id} lacks a gold emotion label")
        if mode == "head":
            if state.config.mode in TEXT_MODES:
                raise ValueError("head-based recognition needs the speech path")
            from .training import encode_to_fused

            fused = encode_to_fused(state, test_manifest.load_audio(record))
            pred = predict_emotion(mean_pool(fused), state.params["heads"]).top_class
        else:
            result = respond_to_record(state, test_manifest, record, "ser_eval", max_new=max_new)
            pred = extract_emotion_label(result.text)
        cm.add(record.emotion_cat, pred)
    return cm, unweighted_accuracy(cm)


# -- report arithmetic ----------------------------------------------------------


def relative_improvement(a: float, b: float) -> float:
    """Percent improvement of a over baseline b: 100*(a-b)/b."""
    if b == 0:
        raise ValueError("relative improvement undefined for zero baseline")
    return 100.0 * (a - b) / b


def absolute_delta_points(a: float, b: float) -> float:
    """Difference of two proportions expressed in percentage points."""
    return 100.0 * (a - b)


def render_report_table(report: dict) -> tuple[list[str], list[dict]]:
    """Turn a cells spec into CSV-ready rows with derived improvement columns.

    Rows of kind "mean_std" get mean(std) cells plus rel_vs_<model> percent
    columns against the target; rows of kind "proportion" get plain cells plus
    delta_vs_<model> point columns.
    """
    target = report["target"]
    model_names: list[str] = []
    for row in report["rows"]:
        for name in row["cells"]:
            if name not in model_names:
                model_names.append(name)
    fieldnames = ["metric", "dataset", *model_names]
    baselines = [name for name in model_names if name != target]
    fieldnames += [f"rel_vs_{name}" for name in baselines]
    fieldnames += [f"delta_vs_{name}" for name in baselines]

    out_rows: list[dict] = []
    for row in report["rows"]:
        kind = row.get("kind", "mean_std")
        cells = row["cells"]
        out: dict[str, str] = {"metric": row["metric"], "dataset": row["dataset"]}
        for name, cell in cells.items():
            if kind == "mean_std":
                out[name] = format_mean_std(float(cell["mean"]), float(cell["std"]))
            else:
                out[name] = f"{float(cell):.3f}"
        if target in cells:
            target_value = float(cells[target]["mean"]) if kind == "mean_std" else float(cells[target])
            for name in baselines:
                if name not in cells:
                    continue
                base = float(cells[name]["mean"]) if kind == "mean_std" else float(cells[name])
                if kind == "mean_std":
                    out[f"rel_vs_{name}"] = f"{relative_improvement(target_value, base):.2f}"
                else:
                    out[f"delta_vs_{name}"] = f"{absolute_delta_points(target_value, base):.2f}"
        out_rows.append(out)
    return fieldnames, out_rows


def write_report_csv(path: str | Path, report: dict) -> None:
    import csv

    fieldnames, rows = render_report_table(report)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
