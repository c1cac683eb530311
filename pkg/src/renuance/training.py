"""Two-step training: expected-response collection, then joint alignment.

Step 1 renders the emotion-conditioned continuation prompt per utterance and
stores a generator's continuation as the alignment target. Step 2 minimizes
the unweighted sum of the alignment NLL, the categorical cross entropy, and
the dimensional MSE; ablation and baseline modes activate subsets of the loss
terms and embedding streams. The emotion encoder is never a member of any
parameter group, so it cannot move.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .adapter import AdapterConfig, FusedEmbeddingSequence, adapt, concat_embeddings, init_adapter_params
from .audio import Waveform
from .checkpoint import read_checkpoint, write_checkpoint
from .encoders import (
    EmotionEncoderHandle,
    SpeechEncoderConfig,
    align_emotion_stream,
    empty_emotion_stream,
    encode_emotion,
    encode_speech,
    init_speech_params,
)
from .generators import ResponseGenerator
from .heads import ce_loss, class_index, classify_categorical, init_head_params, mean_pool, mse_loss, regress_dimensional
from .lm import LMConfig, TokenSequence, embed_tokens, init_lm_params, sequence_nll, sequence_teacher_kl, splice_speech
from .manifest import AudioRef, DatasetManifest, UtteranceRecord
from .prompts import STEP1_TEXT, STEP2_TEXT, PromptTemplate, get_template, render_prompt
from .tokenizer import ByteTokenizer

logger = logging.getLogger(__name__)

EMOTION_MODES = ("re_llm", "no_dim_aux")
SPEECH_ONLY_MODES = ("no_emo_enc", "speech_baseline")
TEXT_MODES = ("text_only", "text_plus_label")
ALL_MODES = EMOTION_MODES + SPEECH_ONLY_MODES + TEXT_MODES


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "re_llm"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 4
    max_steps: int = 500
    seed: int = 0
    grad_clip_norm: float = 1.0
    log_interval: int = 10
    use_teacher_kl: bool = False  # alternative alignment objective, off by default

    def __post_init__(self):
        if self.mode not in ALL_MODES:
            raise ValueError(f"unknown training mode {self.mode!r}; choose one of {ALL_MODES}")
        if self.batch_size < 1 or self.max_steps < 0 or self.log_interval < 1:
            raise ValueError("batch_size/log_interval must be >= 1 and max_steps >= 0")

    @property
    def uses_speech(self) -> bool:
        return self.mode not in TEXT_MODES

    @property
    def uses_emotion_stream(self) -> bool:
        return self.mode in EMOTION_MODES

    @property
    def uses_categorical_aux(self) -> bool:
        return self.mode in ("re_llm", "no_dim_aux", "no_emo_enc")

    @property
    def uses_dimensional_aux(self) -> bool:
        return self.mode in ("re_llm", "no_emo_enc")

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "step_size": self.optimizer.step_size,
            "beta1": self.optimizer.betas[0],
            "beta2": self.optimizer.betas[1],
            "eps": self.optimizer.eps,
            "batch_size": self.batch_size,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "grad_clip_norm": self.grad_clip_norm,
            "log_interval": self.log_interval,
            "use_teacher_kl": self.use_teacher_kl,
        }

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        return TrainConfig(
            mode=obj.get("mode", "re_llm"),
            optimizer=OptimizerConfig(
                step_size=float(obj.get("step_size", 1e-4)),
                betas=(float(obj.get("beta1", 0.9)), float(obj.get("beta2", 0.999))),
                eps=float(obj.get("eps", 1e-8)),
            ),
            batch_size=int(obj.get("batch_size", 4)),
            max_steps=int(obj.get("max_steps", 500)),
            seed=int(obj.get("seed", 0)),
            grad_clip_norm=float(obj.get("grad_clip_norm", 1.0)),
            log_interval=int(obj.get("log_interval", 10)),
            use_teacher_kl=bool(obj.get("use_teacher_kl", False)),
        )


@dataclass(frozen=True)
class ModelConfig:
    """Geometry of every component; the adapter output width is the LM width."""

    speech: SpeechEncoderConfig
    adapter: AdapterConfig
    lm: LMConfig
    emotion_dim: int = 16
    emotion_n_mels: int = 32
    emotion_seed: int = 1234
    emotion_align: str = "framewise"  # or "pooled"

    def __post_init__(self):
        if self.adapter.out_dim != self.lm.model_dim:
            raise ValueError(
                f"adapter out_dim {self.adapter.out_dim} must equal LM model_dim {self.lm.model_dim}"
            )

    def to_json(self) -> dict:
        return {
            "speech": vars(self.speech).copy(),
            "adapter": vars(self.adapter).copy(),
            "lm": vars(self.lm).copy(),
            "emotion_dim": self.emotion_dim,
            "emotion_n_mels": self.emotion_n_mels,
            "emotion_seed": self.emotion_seed,
            "emotion_align": self.emotion_align,
        }

    @staticmethod
    def from_json(obj: dict) -> "ModelConfig":
        return ModelConfig(
            speech=SpeechEncoderConfig(**obj["speech"]),
            adapter=AdapterConfig(**obj["adapter"]),
            lm=LMConfig(**obj["lm"]),
            emotion_dim=int(obj["emotion_dim"]),
            emotion_n_mels=int(obj["emotion_n_mels"]),
            emotion_seed=int(obj["emotion_seed"]),
            emotion_align=obj.get("emotion_align", "framewise"),
        )


@dataclass
class PairedSample:
    """One element of the alignment set: speech input plus its expected response."""

    utt_id: str
    speech: AudioRef | None
    transcript: str
    emotion_cat: str | None
    vad: tuple[float, float, float] | None
    expected_response: str

    def __post_init__(self):
        if not self.expected_response:
            raise ValueError(f"paired sample {self.utt_id} has an empty expected response")


@dataclass(frozen=True)
class LossBreakdown:
    l_kl: float
    l_ce: float
    l_mse: float
    total: float

    @staticmethod
    def make(l_kl: float, l_ce: float, l_mse: float) -> "LossBreakdown":
        for name, v in (("l_kl", l_kl), ("l_ce", l_ce), ("l_mse", l_mse)):
            if v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")
        return LossBreakdown(l_kl=l_kl, l_ce=l_ce, l_mse=l_mse, total=l_kl + l_ce + l_mse)


@dataclass
class TrainState:
    """Everything mutable about a run plus the frozen pieces it depends on."""

    step: int
    params: dict[str, dict[str, ad.Tensor]]
    opt: ad.AdamState
    rng: np.random.Generator
    model: ModelConfig
    config: TrainConfig
    tokenizer: ByteTokenizer
    emotion_handle: EmotionEncoderHandle
    audio_root: Path | None = None
    last_loss: LossBreakdown | None = None

    def flat_params(self) -> dict[str, ad.Tensor]:
        return {
            f"{section}/{name}": tensor
            for section, group in self.params.items()
            for name, tensor in group.items()
        }


def adapter_input_dim(model: ModelConfig, config: TrainConfig) -> int:
    width = model.speech.hidden_dim
    if config.uses_emotion_stream:
        width += model.emotion_dim
    return width


def init_train_state(
    model: ModelConfig,
    config: TrainConfig,
    tokenizer: ByteTokenizer,
    audio_root: Path | None = None,
) -> TrainState:
    """Seeded parameter groups; the frozen emotion encoder stays outside them."""
    if tokenizer.vocab_size > model.lm.vocab_size:
        raise ValueError(
            f"tokenizer vocab {tokenizer.vocab_size} exceeds LM vocab {model.lm.vocab_size}"
        )
    params = {
        "speech": init_speech_params(model.speech, seed=config.seed + 11),
        "adapter": init_adapter_params(model.adapter, adapter_input_dim(model, config), seed=config.seed + 23),
        "lm": init_lm_params(model.lm, seed=config.seed + 37),
        "heads": init_head_params(model.lm.model_dim, seed=config.seed + 53),
    }
    return TrainState(
        step=0,
        params=params,
        opt=ad.AdamState(),
        rng=np.random.default_rng(config.seed),
        model=model,
        config=config,
        tokenizer=tokenizer,
        emotion_handle=EmotionEncoderHandle.from_seed(
            model.emotion_seed, emb_dim=model.emotion_dim, n_mels=model.emotion_n_mels,
            win_length=model.speech.win_length, hop_length=model.speech.hop_length,
        ),
        audio_root=audio_root,
    )


def build_default_tokenizer(
    texts: list[str],
    vocab_budget: int = 512,
    include_templates: bool = True,
) -> ByteTokenizer:
    """Train merges on the corpus plus the prompt templates it will tokenize."""
    corpus = list(texts)
    if include_templates:
        corpus += [STEP1_TEXT, STEP2_TEXT, get_template("ser_eval").text]
    return ByteTokenizer.train(corpus, vocab_size=vocab_budget)


# -- step 1: expected-response collection --------------------------------------


def generate_expected_responses(
    manifest: DatasetManifest,
    generator: ResponseGenerator,
) -> list[PairedSample]:
    """Render the emotion-conditioned prompt per record and store continuations.

    Generator failures skip the record with a logged utt_id; an empty
    continuation is retried once before skipping.
    """
    template = get_template("continuation_step1")
    if len(manifest) == 0:
        warnings.warn("empty manifest: no paired samples generated", stacklevel=2)
        return []
    paired: list[PairedSample] = []
    for record in manifest:
        if record.emotion_cat is None:
            raise ValueError(f"record {record.utt_id} lacks emotion_cat for response generation")
        prompt = render_prompt(template, {"emo": record.emotion_cat, "transcript": record.transcript})
        try:
            response = generator.generate(prompt, record)
            if not response:
                response = generator.generate(prompt, record)
        except Exception as err:
            logger.warning("response generator failed for %s: %s", record.utt_id, err)
            continue
        if not response:
            logger.warning("empty expected response for %s after retry; skipped", record.utt_id)
            continue
        paired.append(
            PairedSample(
                utt_id=record.utt_id,
                speech=record.audio,
                transcript=record.transcript,
                emotion_cat=record.emotion_cat,
                vad=record.vad,
                expected_response=response,
            )
        )
    return paired


def write_paired_set(path: str | Path, samples: list[PairedSample]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({
                "utt_id": s.utt_id,
                "transcript": s.transcript,
                "emotion_cat": s.emotion_cat,
                "vad": list(s.vad) if s.vad is not None else None,
                "expected_response": s.expected_response,
            }, ensure_ascii=False))
            fh.write("\n")


def load_paired_set(path: str | Path) -> list[PairedSample]:
    samples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            vad = obj.get("vad")
            samples.append(PairedSample(
                utt_id=obj["utt_id"],
                speech=None,
                transcript=obj["transcript"],
                emotion_cat=obj.get("emotion_cat"),
                vad=tuple(vad) if vad is not None else None,
                expected_response=obj["expected_response"],
            ))
    return samples


def attach_speech(samples: list[PairedSample], manifest: DatasetManifest) -> list[PairedSample]:
    """Rejoin audio references (dropped by the paired-set JSONL) by utt_id."""
    by_id = {record.utt_id: record for record in manifest}
    out = []
    for s in samples:
        if s.utt_id not in by_id:
            raise ValueError(f"paired sample {s.utt_id} not found in manifest")
        record = by_id[s.utt_id]
        out.append(PairedSample(
            utt_id=s.utt_id, speech=record.audio, transcript=s.transcript,
            emotion_cat=s.emotion_cat, vad=s.vad, expected_response=s.expected_response,
        ))
    return out


# -- step 2: joint optimization -------------------------------------------------


def encode_to_fused(
    state: TrainState,
    audio: Waveform | np.ndarray,
    emo_frames: np.ndarray | None = None,
) -> FusedEmbeddingSequence:
    """Speech path to adapter output under the state's mode.

    `emo_frames` short-circuits the frozen encoder with cached constant frames.
    """
    raw = encode_speech(audio, state.model.speech, state.params["speech"])
    if state.config.uses_emotion_stream:
        if emo_frames is None:
            emo_seq, _ = encode_emotion(audio, state.emotion_handle)
        else:
            from .encoders import EmbeddingSequence

            emo_seq = EmbeddingSequence(frames=ad.Tensor(emo_frames))
        emo = align_emotion_stream(emo_seq, raw.length, state.model.emotion_align)
    else:
        emo = empty_emotion_stream(raw.length)
    return adapt(concat_embeddings(raw, emo), state.params["adapter"], state.model.adapter)


def _text_prompt(template: PromptTemplate, transcript: str, emotion_cat: str | None, mode: str) -> str:
    content = transcript
    if mode == "text_plus_label":
        if emotion_cat is None:
            raise ValueError("text_plus_label mode needs an emotion label")
        content = f"<{emotion_cat}> {transcript}"
    return template.text.replace("<speech>", content)


def build_lm_input(
    state: TrainState,
    manifest: DatasetManifest,
    record: UtteranceRecord,
    template: PromptTemplate,
) -> ad.Tensor:
    """Prompt embeddings for one utterance: spliced speech or inline transcript."""
    if state.config.uses_speech:
        fused = encode_to_fused(state, manifest.load_audio(record))
        tokens = TokenSequence(state.tokenizer.encode(template.text))
        return splice_speech(tokens, fused, state.params["lm"]["tok_emb"])
    text = _text_prompt(template, record.transcript, record.emotion_cat, state.config.mode)
    return embed_tokens(state.tokenizer.encode(text), state.params["lm"])


@dataclass
class _Prepared:
    """Per-sample constants reused across steps: features, frozen frames, tokens."""

    sample: PairedSample
    target: TokenSequence
    speech_audio: Waveform | np.ndarray | None = None
    emo_frames: np.ndarray | None = None
    prompt_tokens: TokenSequence | None = None
    text_input_ids: list[int] | None = None


def _prepare_sample(state: TrainState, sample: PairedSample, config: TrainConfig) -> _Prepared:
    target = TokenSequence(state.tokenizer.encode(sample.expected_response, add_eos=True))
    if not config.uses_speech:
        template = get_template("continuation_step2")
        text = _text_prompt(template, sample.transcript, sample.emotion_cat, config.mode)
        return _Prepared(sample=sample, target=target, text_input_ids=state.tokenizer.encode(text))
    if sample.speech is None:
        raise ValueError(f"paired sample {sample.utt_id} has no speech reference; attach_speech first")
    audio = sample.speech.resolve(state.audio_root)
    prepared = _Prepared(
        sample=sample,
        target=target,
        speech_audio=audio,
        prompt_tokens=TokenSequence(state.tokenizer.encode(get_template("continuation_step2").text)),
    )
    if config.uses_emotion_stream:
        emo_seq, _ = encode_emotion(audio, state.emotion_handle)
        prepared.emo_frames = emo_seq.array
    return prepared


def _check_mode_compatible(state: TrainState, config: TrainConfig) -> None:
    if config.uses_emotion_stream != state.config.uses_emotion_stream:
        raise ValueError(
            f"mode {config.mode!r} is stream-incompatible with the state built for {state.config.mode!r}"
        )
    if config.uses_speech != state.config.uses_speech:
        raise ValueError(
            f"mode {config.mode!r} and state mode {state.config.mode!r} disagree on the speech path"
        )


def _loss_graph(
    state: TrainState,
    prepared: list[_Prepared],
    config: TrainConfig,
) -> tuple[ad.Tensor, LossBreakdown]:
    if not prepared:
        raise ValueError("batch must be non-empty")
    inv_b = 1.0 / len(prepared)
    kl_terms: list[ad.Tensor] = []
    ce_terms: list[ad.Tensor] = []
    mse_terms: list[ad.Tensor] = []
    for item in prepared:
        sample = item.sample
        if config.uses_speech:
            fused = encode_to_fused(state, item.speech_audio, emo_frames=item.emo_frames)
            input_emb = splice_speech(item.prompt_tokens, fused, state.params["lm"]["tok_emb"])
        else:
            fused = None
            input_emb = embed_tokens(item.text_input_ids, state.params["lm"])
        if config.use_teacher_kl and config.uses_speech:
            template = get_template("continuation_step2")
            teacher_ids = state.tokenizer.encode(
                _text_prompt(template, sample.transcript, sample.emotion_cat, "text_only")
            )
            teacher_emb = embed_tokens(teacher_ids, state.params["lm"])
            kl_terms.append(sequence_teacher_kl(input_emb, teacher_emb, item.target, state.params["lm"], state.model.lm))
        else:
            kl_terms.append(sequence_nll(input_emb, item.target, state.params["lm"], state.model.lm))
        if fused is not None and (config.uses_categorical_aux or config.uses_dimensional_aux):
            pooled = mean_pool(fused)
            if config.uses_categorical_aux:
                if sample.emotion_cat is None:
                    raise ValueError(f"sample {sample.utt_id} lacks emotion_cat required by mode {config.mode}")
                probs = classify_categorical(pooled, state.params["heads"])
                ce_terms.append(ce_loss(probs, class_index(sample.emotion_cat)))
            if config.uses_dimensional_aux:
                if sample.vad is None:
                    raise ValueError(f"sample {sample.utt_id} lacks vad required by mode {config.mode}")
                pred = regress_dimensional(pooled, state.params["heads"])
                mse_terms.append(mse_loss(pred, sample.vad))

    def batch_mean(terms: list[ad.Tensor]) -> ad.Tensor:
        acc = terms[0]
        for t in terms[1:]:
            acc = acc + t
        return acc * inv_b

    kl_t = batch_mean(kl_terms)
    total_t = kl_t
    l_ce = 0.0
    l_mse = 0.0
    if ce_terms:
        ce_t = batch_mean(ce_terms)
        total_t = total_t + ce_t
        l_ce = float(ce_t.value)
    if mse_terms:
        mse_t = batch_mean(mse_terms)
        total_t = total_t + mse_t
        l_mse = float(mse_t.value)
    breakdown = LossBreakdown.make(float(kl_t.value), l_ce, l_mse)
    return total_t, breakdown


def compute_total_loss(
    batch: list[PairedSample],
    state: TrainState,
    config: TrainConfig | None = None,
) -> LossBreakdown:
    """Loss terms for a batch; inactive terms are exactly zero in ablation modes."""
    config = config or state.config
    _check_mode_compatible(state, config)
    prepared = [_prepare_sample(state, s, config) for s in batch]
    _, breakdown = _loss_graph(state, prepared, config)
    return breakdown


def train_step(
    state: TrainState,
    batch: list[PairedSample],
    config: TrainConfig | None = None,
) -> TrainState:
    """One clipped adaptive-moment update on all trainable groups."""
    config = config or state.config
    _check_mode_compatible(state, config)
    prepared = [_prepare_sample(state, s, config) for s in batch]
    return _train_step_prepared(state, prepared, config)


def _train_step_prepared(state: TrainState, prepared: list[_Prepared], config: TrainConfig) -> TrainState:
    flat = state.flat_params()
    ad.zero_grads(flat)
    total_t, breakdown = _loss_graph(state, prepared, config)
    total_t.backward()
    for name, tensor in flat.items():
        if tensor.grad is not None and not np.isfinite(tensor.grad).all():
            raise RuntimeError(
                f"NaN gradient in {name} at step {state.step}; loss breakdown: "
                f"l_kl={breakdown.l_kl} l_ce={breakdown.l_ce} l_mse={breakdown.l_mse} total={breakdown.total}"
            )
    ad.clip_global_norm(flat, config.grad_clip_norm)
    ad.adam_step(
        flat, state.opt,
        step_size=config.optimizer.step_size,
        betas=config.optimizer.betas,
        eps=config.optimizer.eps,
    )
    state.step += 1
    state.last_loss = breakdown
    return state


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    final_loss: LossBreakdown | None
    encoder_checksum: str
    steps: int


def train(
    config: TrainConfig,
    paired_set: list[PairedSample],
    model: ModelConfig,
    out_dir: str | Path,
    audio_root: Path | None = None,
    tokenizer: ByteTokenizer | None = None,
) -> TrainResult:
    """Run max_steps updates over the paired set; write metrics and a checkpoint.

    Fully reproducible from (config, data, seed): batch order, initialization,
    and the checkpoint bytes are all pure functions of those inputs.
    """
    if not paired_set:
        raise ValueError("paired set must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if tokenizer is None:
        texts = [s.transcript for s in paired_set] + [s.expected_response for s in paired_set]
        tokenizer = build_default_tokenizer(texts, vocab_budget=min(512, model.lm.vocab_size))
    state = init_train_state(model, config, tokenizer, audio_root=audio_root)
    checksum_before = state.emotion_handle.checksum()

    prepared_all = [_prepare_sample(state, s, config) for s in paired_set]
    order: list[int] = []
    metrics_rows: list[dict] = []
    for _ in range(config.max_steps):
        if len(order) < config.batch_size:
            order.extend(state.rng.permutation(len(prepared_all)).tolist())
        take, order = order[:config.batch_size], order[config.batch_size:]
        batch = [prepared_all[i] for i in take]
        _train_step_prepared(state, batch, config)
        if state.step % config.log_interval == 0:
            row = {
                "step": state.step,
                "l_kl": state.last_loss.l_kl,
                "l_ce": state.last_loss.l_ce,
                "l_mse": state.last_loss.l_mse,
                "total": state.last_loss.total,
            }
            metrics_rows.append(row)

    checksum_after = state.emotion_handle.checksum()
    if checksum_after != checksum_before:
        raise RuntimeError("frozen emotion encoder changed during training")

    metrics_path = out_dir / "metrics.csv"
    with metrics_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "l_kl", "l_ce", "l_mse", "total"])
        writer.writeheader()
        for row in metrics_rows:
            writer.writerow(row)

    checkpoint_path = out_dir / "checkpoint.zip"
    save_state(checkpoint_path, state)
    return TrainResult(
        checkpoint_path=checkpoint_path,
        metrics_path=metrics_path,
        final_loss=state.last_loss,
        encoder_checksum=checksum_after,
        steps=state.step,
    )


# -- checkpoint glue -------------------------------------------------------------


def save_state(path: str | Path, state: TrainState) -> str:
    sections = {
        section: {name: t.value for name, t in group.items()}
        for section, group in state.params.items()
    }
    config = {
        "model": state.model.to_json(),
        "train": state.config.to_json(),
        "tokenizer": state.tokenizer.to_json(),
        "emotion_checksum": state.emotion_handle.checksum(),
        "step": state.step,
    }
    return write_checkpoint(path, sections, config)


def load_state(path: str | Path, audio_root: Path | None = None) -> TrainState:
    sections, config = read_checkpoint(path)
    model = ModelConfig.from_json(config["model"])
    train_config = TrainConfig.from_json(config["train"])
    tokenizer = ByteTokenizer.from_json(config["tokenizer"])
    params = {
        section: {name: ad.Tensor(arr, requires_grad=True) for name, arr in group.items()}
        for section, group in sections.items()
    }
    handle = EmotionEncoderHandle.from_seed(
        model.emotion_seed, emb_dim=model.emotion_dim, n_mels=model.emotion_n_mels,
        win_length=model.speech.win_length, hop_length=model.speech.hop_length,
    )
    if handle.checksum() != config["emotion_checksum"]:
        raise ValueError("stored emotion encoder checksum does not match the reconstructed handle")
    return TrainState(
        step=int(config["step"]),
        params=params,
        opt=ad.AdamState(),
        rng=np.random.default_rng(train_config.seed),
        model=model,
        config=train_config,
        tokenizer=tokenizer,
        emotion_handle=handle,
        audio_root=audio_root,
    )
