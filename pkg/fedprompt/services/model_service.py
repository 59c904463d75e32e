"""Prompt-tuning model: tokenization, templating, forward/backward, local training.

The backbone is one single-head attention layer plus one feed-forward layer.
Only the [MASK] row reaches the verbalizer, so past the attention scores
everything is computed for that row alone; the prompt influences it through
the keys and values of the prepended soft positions.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np

from fedprompt.core.errors import EmptyShard, InvalidInput, MissingFile, NumericalError
from fedprompt.core.seeding import SeedLike, make_rng
from fedprompt.models.backbone import FrozenBackbone
from fedprompt.models.dataset import LabeledExample
from fedprompt.models.prompt import PromptTensor
from fedprompt.models.vocab import LIT_DOT, LIT_IS, MASK, TemplatedSeq, Verbalizer, Vocab
from fedprompt.schemas.config import LdpSpec, OptimizerConfig
from fedprompt.services.privacy_service import clip_gradient

logger = logging.getLogger(__name__)

LOSS_CLAMP = 1e-12


@dataclass(frozen=True)
class EncodedExample:
    """A templated sequence with its gold class."""
    seq: TemplatedSeq
    label: int


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Activations of one forward pass, kept for the backward pass."""
    states: np.ndarray  # L x d, prompt rows + token embeddings + positions
    keys: np.ndarray  # L x d
    values: np.ndarray  # L x d
    query: np.ndarray  # d, query of the mask row
    attention: np.ndarray  # L, attention weights of the mask row
    attn_out: np.ndarray  # d, mask row after attention + residual
    ffn_pre: np.ndarray  # h, pre-activation of the FFN
    h_mask: np.ndarray  # d
    word_probs: np.ndarray  # probabilities over the verbalizer's label words
    class_probs: np.ndarray


# --- text -> ids ----------------------------------------------------------

def tokenize(text: str, vocab: Vocab, max_len: int) -> list[int]:
    """Lowercase, split on whitespace, hash each word; keep the first max_len words."""
    words = text.lower().split()
    if not words:
        raise InvalidInput("Text is empty after whitespace splitting")
    return [vocab.token_id(w) for w in words[:max_len]]


def apply_template(token_ids: Sequence[int], m: int, max_len: Optional[int] = None) -> TemplatedSeq:
    """Lay out "[text] is [MASK] ." behind m soft positions."""
    if m < 1:
        raise InvalidInput("Prompt length m must be at least 1")
    ids = list(token_ids)
    if max_len is not None:
        ids = ids[:max_len]
    if not ids:
        raise InvalidInput("Template needs at least one text token")
    return TemplatedSeq(
        token_ids=tuple(ids) + (LIT_IS, MASK, LIT_DOT),
        mask_index=m + len(ids) + 1,
        prompt_len=m,
    )


def encode_example(example: LabeledExample, vocab: Vocab, max_len: int, m: int) -> EncodedExample:
    """Tokenize and template one example for the frozen backbone.

    Args:
        example: Text and gold label
        vocab: Hashing vocabulary
        max_len: Maximum number of text tokens kept after truncation
        m: Number of soft-prompt slots reserved in the template

    Returns:
        The templated sequence paired with the example's label
    """
    seq = apply_template(tokenize(example.text, vocab, max_len), m)
    return EncodedExample(seq=seq, label=example.label)


def max_text_len(backbone: FrozenBackbone, m: int) -> int:
    """Longest text the position table can hold behind m soft tokens."""
    return backbone.max_positions - m - 3


# --- parameters -------------------------------------------------------------

def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    position = np.arange(length, dtype=np.float64)[:, np.newaxis]
    div_term = np.exp(np.arange(0, d, 2, dtype=np.float64) * -(math.log(10000.0) / d))
    pe = np.zeros((length, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(position * div_term)
    pe[:, 1::2] = np.cos(position * div_term[: d // 2])
    return pe


def init_backbone(seed: SeedLike, vocab_size: int, d: int, h: int, total_len: int) -> FrozenBackbone:
    """Draw a backbone: Gaussian(0, 1/sqrt(d)) matrices, zero biases, sinusoidal positions."""
    if min(vocab_size, d, h, total_len) <= 0:
        raise InvalidInput("Backbone dimensions must be positive")
    rng = make_rng(seed)
    std = 1.0 / math.sqrt(d)
    return FrozenBackbone(
        embed=rng.normal(0.0, std, size=(vocab_size, d)),
        pos=sinusoidal_positions(total_len, d),
        wq=rng.normal(0.0, std, size=(d, d)),
        wk=rng.normal(0.0, std, size=(d, d)),
        wv=rng.normal(0.0, std, size=(d, d)),
        wo=rng.normal(0.0, std, size=(d, d)),
        w1=rng.normal(0.0, std, size=(d, h)),
        b1=np.zeros(h),
        w2=rng.normal(0.0, std, size=(h, d)),
        b2=np.zeros(d),
    )


def init_prompt(seed: SeedLike, m: int, d: int) -> PromptTensor:
    """Uniform(-0.5/sqrt(d), 0.5/sqrt(d)) soft-prompt entries."""
    if m < 1 or d < 1:
        raise InvalidInput("Prompt shape must be positive")
    bound = 0.5 / math.sqrt(d)
    return PromptTensor(make_rng(seed).uniform(-bound, bound, size=(m, d)))


def param_count(backbone: FrozenBackbone) -> int:
    return backbone.num_scalars


def backbone_bytes(backbone: FrozenBackbone) -> bytes:
    return backbone.to_bytes()


# --- forward / backward -----------------------------------------------------

def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class _BatchTrace:
    states: np.ndarray  # B x L x d
    keys: np.ndarray
    values: np.ndarray
    query: np.ndarray  # B x d
    attention: np.ndarray  # B x L
    attn_out: np.ndarray  # B x d
    ffn_pre: np.ndarray  # B x h
    h_mask: np.ndarray  # B x d
    word_probs: np.ndarray  # B x W
    class_probs: np.ndarray  # B x C


def _check_shapes(backbone: FrozenBackbone, prompt: PromptTensor, length: int, mask_index: int) -> None:
    if prompt.d != backbone.hidden:
        raise InvalidInput(f"Prompt width {prompt.d} != backbone width {backbone.hidden}")
    if length > backbone.max_positions:
        raise InvalidInput(
            f"Sequence of {length} positions exceeds the backbone's {backbone.max_positions}"
        )
    if not 0 <= mask_index < length:
        raise InvalidInput(f"Mask index {mask_index} outside sequence of length {length}")


def _forward_group(
    backbone: FrozenBackbone,
    prompt: PromptTensor,
    token_ids: np.ndarray,
    mask_index: int,
    verbalizer: Verbalizer,
) -> _BatchTrace:
    """Forward a batch of sequences sharing one length and mask index."""
    m, d = prompt.shape
    batch, n_tokens = token_ids.shape
    length = m + n_tokens
    _check_shapes(backbone, prompt, length, mask_index)

    states = np.empty((batch, length, d))
    states[:, :m] = prompt.values
    states[:, m:] = backbone.embed[token_ids]
    states += backbone.pos[:length]

    keys = states @ backbone.wk
    values = states @ backbone.wv
    x_mask = states[:, mask_index]
    query = x_mask @ backbone.wq
    scores = np.einsum("bd,bld->bl", query, keys) / math.sqrt(d)
    attention = _softmax(scores)
    attended = np.einsum("bl,bld->bd", attention, values)
    attn_out = x_mask + attended @ backbone.wo

    ffn_pre = attn_out @ backbone.w1 + backbone.b1
    h_mask = attn_out + np.maximum(ffn_pre, 0.0) @ backbone.w2 + backbone.b2
    if not np.all(np.isfinite(h_mask)):
        raise NumericalError("Non-finite activation at the mask position")

    label_emb = backbone.embed[list(verbalizer.word_ids)]
    word_scores = h_mask @ label_emb.T
    word_probs = _softmax(word_scores)
    membership = np.zeros((len(verbalizer.word_ids), verbalizer.num_classes))
    membership[np.arange(len(verbalizer.word_ids)), verbalizer.word_class] = 1.0
    class_probs = word_probs @ membership
    if not np.all(np.isfinite(class_probs)):
        raise NumericalError("Non-finite class probabilities")

    return _BatchTrace(
        states=states,
        keys=keys,
        values=values,
        query=query,
        attention=attention,
        attn_out=attn_out,
        ffn_pre=ffn_pre,
        h_mask=h_mask,
        word_probs=word_probs,
        class_probs=class_probs,
    )


def _backward_group(
    backbone: FrozenBackbone,
    trace: _BatchTrace,
    labels: np.ndarray,
    verbalizer: Verbalizer,
    m: int,
) -> np.ndarray:
    """Summed d(loss)/d(prompt) over the batch; backbone weights get no gradient."""
    d = backbone.hidden
    batch = labels.shape[0]
    rows = np.arange(batch)

    gold = trace.class_probs[rows, labels]
    in_gold = np.asarray(verbalizer.word_class)[np.newaxis, :] == labels[:, np.newaxis]
    # d(-log sum_{w in y} p_w)/d(score_w) = p_w - p_w [w in y] / p_y; zero under the clamp
    safe_gold = np.where(gold > LOSS_CLAMP, gold, 1.0)
    d_scores = trace.word_probs - trace.word_probs * in_gold / safe_gold[:, np.newaxis]
    d_scores[gold <= LOSS_CLAMP] = 0.0

    label_emb = backbone.embed[list(verbalizer.word_ids)]
    d_h = d_scores @ label_emb
    gate = (trace.ffn_pre > 0.0).astype(np.float64)
    d_attn_out = d_h + ((d_h @ backbone.w2.T) * gate) @ backbone.w1.T

    d_attended = d_attn_out @ backbone.wo.T
    d_attention = np.einsum("bld,bd->bl", trace.values, d_attended)
    d_scores_attn = trace.attention * (
        d_attention - np.sum(trace.attention * d_attention, axis=-1, keepdims=True)
    )

    # The mask row sits after the prompt, so prompt rows are reached only
    # through their keys and values.
    d_values = trace.attention[:, :m, np.newaxis] * d_attended[:, np.newaxis, :]
    d_keys = d_scores_attn[:, :m, np.newaxis] * trace.query[:, np.newaxis, :] / math.sqrt(d)
    d_prompt = d_values @ backbone.wv.T + d_keys @ backbone.wk.T
    grad = d_prompt.sum(axis=0)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("Non-finite prompt gradient")
    return grad


def _groups(seqs: Sequence[TemplatedSeq]) -> dict[tuple[int, int], list[int]]:
    """Positions of sequences sharing (length, mask index), in first-seen order."""
    groups: dict[tuple[int, int], list[int]] = {}
    for i, seq in enumerate(seqs):
        groups.setdefault((len(seq.token_ids), seq.mask_index), []).append(i)
    return groups


def _check_prompt_len(prompt: PromptTensor, seq: TemplatedSeq) -> None:
    if seq.prompt_len != prompt.m:
        raise InvalidInput(
            f"Sequence was templated for {seq.prompt_len} soft tokens, prompt has {prompt.m}"
        )


def forward(
    backbone: FrozenBackbone,
    prompt: PromptTensor,
    seq: TemplatedSeq,
    verbalizer: Verbalizer,
) -> tuple[np.ndarray, ForwardTrace]:
    """Class probabilities for one templated sequence, plus its trace."""
    _check_prompt_len(prompt, seq)
    ids = np.asarray([seq.token_ids], dtype=np.int64)
    t = _forward_group(backbone, prompt, ids, seq.mask_index, verbalizer)
    trace = ForwardTrace(
        states=t.states[0],
        keys=t.keys[0],
        values=t.values[0],
        query=t.query[0],
        attention=t.attention[0],
        attn_out=t.attn_out[0],
        ffn_pre=t.ffn_pre[0],
        h_mask=t.h_mask[0],
        word_probs=t.word_probs[0],
        class_probs=t.class_probs[0],
    )
    return trace.class_probs.copy(), trace


def class_probs_many(
    backbone: FrozenBackbone,
    prompt: PromptTensor,
    seqs: Sequence[TemplatedSeq],
    verbalizer: Verbalizer,
) -> np.ndarray:
    """Class probabilities for many sequences, vectorised per length group."""
    out = np.empty((len(seqs), verbalizer.num_classes))
    for (_, mask_index), idx in _groups(seqs).items():
        for i in idx:
            _check_prompt_len(prompt, seqs[i])
        ids = np.asarray([seqs[i].token_ids for i in idx], dtype=np.int64)
        out[idx] = _forward_group(backbone, prompt, ids, mask_index, verbalizer).class_probs
    return out


def loss(class_probs: Sequence[float], label: int) -> float:
    """Cross-entropy of the gold class, with the probability clamped at 1e-12."""
    probs = np.asarray(class_probs, dtype=np.float64)
    if not 0 <= label < probs.shape[0]:
        raise InvalidInput(f"Label {label} is not a valid class")
    return float(-math.log(max(float(probs[label]), LOSS_CLAMP)))


def batch_gradient(
    backbone: FrozenBackbone,
    prompt: PromptTensor,
    examples: Sequence[EncodedExample],
    verbalizer: Verbalizer,
    reduction: Literal["mean", "sum"] = "mean",
) -> tuple[float, np.ndarray]:
    """Loss and prompt gradient over a batch (mean by default)."""
    if not examples:
        raise InvalidInput("Gradient needs at least one example")
    total_loss = 0.0
    grad = np.zeros(prompt.shape)
    seqs = [ex.seq for ex in examples]
    for (_, mask_index), idx in _groups(seqs).items():
        for i in idx:
            _check_prompt_len(prompt, seqs[i])
        ids = np.asarray([seqs[i].token_ids for i in idx], dtype=np.int64)
        labels = np.asarray([examples[i].label for i in idx], dtype=np.int64)
        if np.any(labels < 0) or np.any(labels >= verbalizer.num_classes):
            raise InvalidInput("Example label is not a valid class")
        trace = _forward_group(backbone, prompt, ids, mask_index, verbalizer)
        gold = trace.class_probs[np.arange(len(idx)), labels]
        total_loss += float(-np.sum(np.log(np.maximum(gold, LOSS_CLAMP))))
        grad += _backward_group(backbone, trace, labels, verbalizer, prompt.m)
    if reduction == "mean":
        return total_loss / len(examples), grad / len(examples)
    return total_loss, grad


def grad_prompt(
    backbone: FrozenBackbone,
    prompt: PromptTensor,
    example: EncodedExample,
    verbalizer: Verbalizer,
) -> np.ndarray:
    """Exact d(loss)/d(prompt) for one example."""
    return batch_gradient(backbone, prompt, [example], verbalizer, reduction="sum")[1]


def predict(
    backbone: FrozenBackbone,
    prompt: PromptTensor,
    seq: TemplatedSeq,
    verbalizer: Verbalizer,
) -> int:
    """Most probable class; ties go to the lowest class id."""
    probs, _ = forward(backbone, prompt, seq, verbalizer)
    return int(np.argmax(probs))


def predict_many(
    backbone: FrozenBackbone,
    prompt: PromptTensor,
    seqs: Sequence[TemplatedSeq],
    verbalizer: Verbalizer,
) -> np.ndarray:
    if not seqs:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(class_probs_many(backbone, prompt, seqs, verbalizer), axis=1)


# --- local training -----------------------------------------------------------

class _Sgd:
    def __init__(self, cfg: OptimizerConfig):
        self.lr = cfg.lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return params - self.lr * grad


class _Adam:
    def __init__(self, cfg: OptimizerConfig, shape: tuple[int, ...]):
        self.cfg = cfg
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        self.t += 1
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * grad * grad
        m_hat = self.m / (1.0 - cfg.beta1 ** self.t)
        v_hat = self.v / (1.0 - cfg.beta2 ** self.t)
        return params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def make_optimizer(cfg: OptimizerConfig, shape: tuple[int, ...]):
    if cfg.kind == "sgd":
        return _Sgd(cfg)
    return _Adam(cfg, shape)


def local_train(
    shard: Sequence[LabeledExample],
    prompt_in: PromptTensor,
    backbone: FrozenBackbone,
    verbalizer: Verbalizer,
    steps: int,
    batch: int,
    optimizer: OptimizerConfig,
    seed: SeedLike,
    ldp: Optional[LdpSpec] = None,
) -> PromptTensor:
    """Run E' optimizer steps over seeded-shuffled mini-batches of the shard.

    Batches walk through a fresh permutation each pass; a shard no larger
    than the batch is used whole at every step. With LDP, each mean batch
    gradient is clipped before the optimizer sees it.

    Args:
        shard: Client examples, already poisoned if the client attacks
        prompt_in: Global prompt the client starts from
        steps: Number of optimizer steps; 0 returns prompt_in itself
        seed: Seed for the batch permutations

    Returns:
        The locally tuned prompt; prompt_in is left untouched
    """
    if not shard:
        raise EmptyShard("Client shard is empty")
    if steps < 0 or batch < 1:
        raise InvalidInput("steps must be >= 0 and batch >= 1")
    if steps == 0:
        return prompt_in

    m = prompt_in.m
    max_len = max_text_len(backbone, m)
    encoded = [encode_example(ex, verbalizer.vocab, max_len, m) for ex in shard]
    n = len(encoded)
    rng = make_rng(seed)
    opt = make_optimizer(optimizer, prompt_in.shape)

    params = prompt_in.values.copy()
    order = rng.permutation(n)
    cursor = 0
    for step in range(1, steps + 1):
        if n <= batch:
            idx = order
        else:
            if cursor + batch > n:
                order = rng.permutation(n)
                cursor = 0
            idx = order[cursor:cursor + batch]
            cursor += batch
        current = PromptTensor(params)
        _, grad = batch_gradient(backbone, current, [encoded[i] for i in idx], verbalizer)
        if ldp is not None:
            grad = clip_gradient(grad, ldp.clip_norm)
        params = opt.step(params, grad)
        if not np.all(np.isfinite(params)):
            raise NumericalError(f"Prompt diverged at local step {step}")

    logger.debug(f"Local training done: {steps} steps over {n} examples")
    return PromptTensor(params)


# --- checkpoints ------------------------------------------------------------

def save_prompt(prompt: PromptTensor, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(prompt.to_checkpoint())


def load_prompt(path: Union[str, Path]) -> PromptTensor:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"Prompt checkpoint not found: {path}")
    return PromptTensor.from_checkpoint(path.read_bytes())
