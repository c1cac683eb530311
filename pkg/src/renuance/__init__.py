"""Emotion-nuance-enriched speech-to-response pipeline.

A desk-scale library: dataset manifests and splits, a trainable speech
encoder plus a frozen emotion encoder, a convolutional modality adapter, a
small decoder-only LM, joint alignment + auxiliary-task training, and
empathy/recognition evaluation with paired nonparametric statistics.
"""

__version__ = "0.1.0"

from .adapter import AdapterConfig, FusedEmbeddingSequence, adapt, adapter_output_length, concat_embeddings
from .audio import Waveform, load_waveform, log_mel, save_waveform
from .datasets import (
    SplitResult,
    generate_pseudo_dimensional_labels,
    sample_msp,
    split_esd,
    split_iemocap,
    write_split_result,
)
from .encoders import (
    EmbeddingSequence,
    EmotionEncoderHandle,
    SpeechEncoderConfig,
    VADPrediction,
    align_emotion_stream,
    encode_emotion,
    encode_speech,
    init_speech_params,
    resample_frames,
)
from .evaluation import (
    ConfusionMatrix,
    EmpathyScore,
    ScoreSummary,
    absolute_delta_points,
    evaluate_ser,
    extract_emotion_label,
    format_mean_std,
    heuristic_stub_scorer,
    relative_improvement,
    render_report_table,
    score_empathy,
    summarize,
    unweighted_accuracy,
    write_report_csv,
)
from .generators import HttpResponseGenerator, TemplateResponseGenerator
from .heads import classify_categorical, ce_loss, mean_pool, mse_loss, predict_emotion, regress_dimensional
from .lm import (
    GenerationResult,
    LMConfig,
    TokenSequence,
    generate,
    init_lm_params,
    lm_forward,
    sequence_nll,
    splice_speech,
)
from .manifest import (
    AudioRef,
    DatasetManifest,
    ManifestError,
    UtteranceRecord,
    load_manifest,
    normalize_vad_scale,
    write_manifest,
)
from .prompts import PromptTemplate, get_template, render_prompt
from .stats import WilcoxonResult, wilcoxon_signed_rank
from .synthetic import make_synthetic_corpus, synth_waveform
from .tokenizer import ByteTokenizer
from .training import (
    LossBreakdown,
    ModelConfig,
    PairedSample,
    TrainConfig,
    TrainState,
    compute_total_loss,
    generate_expected_responses,
    init_train_state,
    load_state,
    save_state,
    train,
    train_step,
)
