"""Small decoder-only language model over spliced token/speech embeddings.

Pre-norm transformer blocks with causal masking; the mask is an additive
constant at -1e30, which underflows to an exactly-zero attention weight, so
future positions cannot influence earlier outputs even at the bit level.
Sequence scoring is teacher-forced negative log-likelihood, summed over
target positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .adapter import FusedEmbeddingSequence
from .tokenizer import ByteTokenizer

_MASK_VALUE = -1e30


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 2
    model_dim: int = 32
    max_positions: int = 512

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide model_dim ({self.model_dim})")
        if min(self.vocab_size, self.layers, self.heads, self.model_dim, self.max_positions) < 1:
            raise ValueError("all LMConfig dimensions must be >= 1")


@dataclass
class TokenSequence:
    ids: list[int]

    def __post_init__(self):
        if not self.ids:
            raise ValueError("token sequence must be non-empty")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class GenerationResult:
    text: str
    token_ids: TokenSequence
    per_step_logprob: list[float] = field(default_factory=list)


def init_lm_params(config: LMConfig, seed: int) -> dict[str, ad.Tensor]:
    rng = np.random.default_rng(seed)
    m = config.model_dim

    def uniform(fan_in, shape):
        return ad.parameter(None, rng=rng, fan_in=fan_in, shape=shape)

    params: dict[str, ad.Tensor] = {
        "tok_emb": uniform(m, (config.vocab_size, m)),
        "pos_emb": uniform(m, (config.max_positions, m)),
    }
    for i in range(config.layers):
        p = f"block{i}."
        params[p + "ln1.g"] = ad.parameter(np.ones(m))
        params[p + "ln1.b"] = ad.parameter(np.zeros(m))
        for name in ("wq", "wk", "wv", "wo"):
            params[p + f"attn.{name}"] = uniform(m, (m, m))
        params[p + "attn.bo"] = ad.parameter(np.zeros(m))
        params[p + "ln2.g"] = ad.parameter(np.ones(m))
        params[p + "ln2.b"] = ad.parameter(np.zeros(m))
        params[p + "ffn.w1"] = uniform(m, (m, 4 * m))
        params[p + "ffn.b1"] = ad.parameter(np.zeros(4 * m))
        params[p + "ffn.w2"] = uniform(4 * m, (4 * m, m))
        params[p + "ffn.b2"] = ad.parameter(np.zeros(m))
    params["ln_f.g"] = ad.parameter(np.ones(m))
    params["ln_f.b"] = ad.parameter(np.zeros(m))
    params["out.w"] = uniform(m, (m, config.vocab_size))
    params["out.b"] = ad.parameter(np.zeros(config.vocab_size))
    return params


def _layer_norm(x: ad.Tensor, g: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    mu = ad.tensor_mean(x, axis=1, keepdims=True)
    centered = x - mu
    var = ad.tensor_mean(centered * centered, axis=1, keepdims=True)
    return centered * ((var + 1e-5) ** -0.5) * g + b


def _attention(x: ad.Tensor, params: dict[str, ad.Tensor], prefix: str, heads: int, mask: np.ndarray) -> ad.Tensor:
    t, m = x.value.shape
    dh = m // heads
    q = x @ params[prefix + "attn.wq"]
    k = x @ params[prefix + "attn.wk"]
    v = x @ params[prefix + "attn.wv"]
    contexts = []
    mask_t = ad.Tensor(mask)
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores = (q[:, cols] @ ad.transpose(k[:, cols])) * (1.0 / np.sqrt(dh)) + mask_t
        contexts.append(ad.softmax(scores, axis=-1) @ v[:, cols])
    joined = contexts[0] if heads == 1 else ad.concat(contexts, axis=1)
    return joined @ params[prefix + "attn.wo"] + params[prefix + "attn.bo"]


def _causal_mask(t: int) -> np.ndarray:
    return np.triu(np.full((t, t), _MASK_VALUE), k=1)


def _hidden(input_emb: ad.Tensor, params: dict[str, ad.Tensor], config: LMConfig) -> ad.Tensor:
    t = input_emb.value.shape[0]
    if t > config.max_positions:
        raise ValueError(f"sequence length {t} exceeds max_positions {config.max_positions}")
    h = input_emb + ad.take_rows(params["pos_emb"], np.arange(t))
    mask = _causal_mask(t)
    for i in range(config.layers):
        p = f"block{i}."
        h = h + _attention(_layer_norm(h, params[p + "ln1.g"], params[p + "ln1.b"]), params, p, config.heads, mask)
        ff_in = _layer_norm(h, params[p + "ln2.g"], params[p + "ln2.b"])
        ff = ad.tanh(ff_in @ params[p + "ffn.w1"] + params[p + "ffn.b1"]) @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
        h = h + ff
    return _layer_norm(h, params["ln_f.g"], params["ln_f.b"])


def _logits(input_emb: ad.Tensor, params: dict[str, ad.Tensor], config: LMConfig) -> ad.Tensor:
    return _hidden(input_emb, params, config) @ params["out.w"] + params["out.b"]


def lm_forward(input_emb: ad.Tensor, params: dict[str, ad.Tensor], config: LMConfig) -> ad.Tensor:
    """Per-position next-token distributions, (L, vocab); each row sums to 1."""
    return ad.softmax(_logits(input_emb, params, config), axis=-1)


def embed_tokens(ids: list[int] | np.ndarray, params: dict[str, ad.Tensor]) -> ad.Tensor:
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= params["tok_emb"].value.shape[0]):
        raise ValueError("token id out of vocabulary")
    return ad.take_rows(params["tok_emb"], idx)


def splice_speech(
    prompt_tokens: TokenSequence,
    fused: FusedEmbeddingSequence,
    embed_table: ad.Tensor,
    speech_id: int = ByteTokenizer.SPEECH_ID,
) -> ad.Tensor:
    """Replace the single speech marker token by the fused embedding frames.

    Output length is (len(prompt) - 1) + T_f.
    """
    positions = [i for i, token_id in enumerate(prompt_tokens.ids) if token_id == speech_id]
    if len(positions) != 1:
        raise ValueError(f"prompt must contain exactly one speech marker, found {len(positions)}")
    marker = positions[0]
    before = np.asarray(prompt_tokens.ids[:marker], dtype=np.intp)
    after = np.asarray(prompt_tokens.ids[marker + 1:], dtype=np.intp)
    parts = [ad.take_rows(embed_table, before), fused.frames, ad.take_rows(embed_table, after)]
    return ad.concat(parts, axis=0)


def generate(
    input_emb: ad.Tensor,
    params: dict[str, ad.Tensor],
    config: LMConfig,
    max_new: int,
    eos_id: int = ByteTokenizer.EOS_ID,
    mode: str = "greedy",
    tokenizer: ByteTokenizer | None = None,
    rng: np.random.Generator | None = None,
) -> GenerationResult:
    """Autoregressive continuation; greedy by default, sampling behind a flag."""
    if max_new < 1:
        raise ValueError("max_new must be >= 1")
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown generation mode {mode!r}")
    if mode == "sample" and rng is None:
        rng = np.random.default_rng(0)
    current = input_emb
    ids: list[int] = []
    logprobs: list[float] = []
    for _ in range(max_new):
        probs = lm_forward(current, params, config).value[-1]
        token = int(np.argmax(probs)) if mode == "greedy" else int(rng.choice(len(probs), p=probs))
        ids.append(token)
        logprobs.append(float(np.log(max(probs[token], 1e-300))))
        if token == eos_id:
            break
        current = ad.concat([current, embed_tokens([token], params)], axis=0)
    text = ""
    if tokenizer is not None:
        text = tokenizer.decode([i for i in ids if i != eos_id])
    return GenerationResult(text=text, token_ids=TokenSequence(ids=ids), per_step_logprob=logprobs)


def sequence_nll(
    input_emb: ad.Tensor,
    target: TokenSequence,
    params: dict[str, ad.Tensor],
    config: LMConfig,
) -> ad.Tensor:
    """Teacher-forced -sum_j log p(y_j | input, y_<j) as a differentiable scalar."""
    ids = np.asarray(target.ids, dtype=np.intp)
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ValueError("target token out of vocabulary")
    prefix_len = input_emb.value.shape[0]
    teacher_input = input_emb
    if len(ids) > 1:
        teacher_input = ad.concat([input_emb, embed_tokens(ids[:-1], params)], axis=0)
    log_probs = ad.log_softmax(_logits(teacher_input, params, config), axis=-1)
    rows = np.arange(len(ids)) + prefix_len - 1
    picked = log_probs[(rows, ids)]
    return -ad.tensor_sum(picked)


def sequence_teacher_kl(
    student_input: ad.Tensor,
    teacher_input: ad.Tensor,
    target: TokenSequence,
    params: dict[str, ad.Tensor],
    config: LMConfig,
) -> ad.Tensor:
    """Token-level KL(teacher || student) over the target span.

    The teacher pass (typically text-conditioned) is detached, so gradients
    reach only the student branch. Off by default in training; provided as the
    alternative reading of the alignment objective.
    """
    ids = np.asarray(target.ids, dtype=np.intp)

    def _target_rows(inp: ad.Tensor) -> ad.Tensor:
        prefix_len = inp.value.shape[0]
        teacher_forced = inp
        if len(ids) > 1:
            teacher_forced = ad.concat([inp, embed_tokens(ids[:-1], params)], axis=0)
        log_probs = ad.log_softmax(_logits(teacher_forced, params, config), axis=-1)
        rows = np.arange(len(ids)) + prefix_len - 1
        return log_probs[rows]

    student_logp = _target_rows(student_input)
    teacher_logp = _target_rows(teacher_input).value  # detached
    teacher_p = np.exp(teacher_logp)
    kl_terms = ad.Tensor(teacher_p * teacher_logp) - ad.Tensor(teacher_p) * student_logp
    return ad.tensor_sum(kl_terms)
