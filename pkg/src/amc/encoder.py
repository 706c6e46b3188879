"""Scene serialization and the windowed character encoder.

A scene is flattened to one token sequence: every utterance of a masked
candidate is wrapped as [Px] ... [SPLIT], background and non-candidate
utterances contribute their words (plus the speaker's name for the latter)
followed by [SPLIT]. The encoder embeds the tokens, mixes them with one
banded self-attention layer (each position only sees a local window) and a
tanh feed-forward, and pools one vector per masked character with a learned
attention score restricted to that character's token mask.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .benchmark import AnonymizedScene, ID_LABELS
from .optim import Params

SPECIAL_TOKENS = ("[P0]", "[P1]", "[P2]", "[P3]", "[P4]", "[SPLIT]", "[UNK]", "[PAD]")
SPLIT_ID = 5
UNK_ID = 6
PAD_ID = 7

_WORD_RE = re.compile(r"[a-z0-9']+")


def word_tokens(text: str) -> list[str]:
    """Lowercase whitespace-and-punctuation word split."""
    return _WORD_RE.findall(text.lower())


class Vocabulary:
    """Token -> id map with the special tokens pinned at ids 0..7."""

    def __init__(self, words: list[str]):
        self._tokens = list(SPECIAL_TOKENS) + list(words)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self._tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    @classmethod
    def from_tasks(cls, tasks) -> "Vocabulary":
        """Build from meta-training tasks only, so test movies stay unseen."""
        seen: dict[str, None] = {}
        for task in tasks:
            for scene in task.scenes:
                for tok, _ in serialize_scene(scene):
                    if tok not in SPECIAL_TOKENS and tok not in seen:
                        seen[tok] = None
        return cls(sorted(seen))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for tok in self._tokens:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary file missing the reserved special tokens")
        return cls(tokens[len(SPECIAL_TOKENS):])


def serialize_scene(scene: AnonymizedScene) -> list[tuple[str, str | None]]:
    """Token stream for a scene as (token, owning ID or None) pairs."""
    stream: list[tuple[str, str | None]] = []
    for ut in scene.utterances:
        if not ut.is_background and ut.speaker in scene.id_map:
            pid = ut.speaker
            stream.append((f"[{pid}]", pid))
            stream.extend((w, pid) for w in word_tokens(ut.text))
            stream.append(("[SPLIT]", pid))
        else:
            if not ut.is_background:
                stream.extend((w, None) for w in word_tokens(ut.speaker))
            stream.extend((w, None) for w in word_tokens(ut.text))
            stream.append(("[SPLIT]", None))
    return stream


def tokenize_scene(
    scene: AnonymizedScene, vocab: Vocabulary, max_len: int = 2000
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Token ids plus one 0/1 ownership mask per masked ID.

    Truncation keeps the first ``max_len`` tokens; an ID whose tokens were
    all truncated away gets an all-zero mask and must be skipped by the
    caller.
    """
    stream = serialize_scene(scene)[:max_len]
    ids = np.array([vocab.id_of(tok) for tok, _ in stream], dtype=np.int64)
    masks = {
        pid: np.zeros(len(stream), dtype=np.float64) for pid in scene.id_map
    }
    for j, (_, owner) in enumerate(stream):
        if owner is not None:
            masks[owner][j] = 1.0
    return ids, masks


@dataclass
class EncoderConfig:
    d_model: int = 64
    window: int = 256
    max_len: int = 2000

    def half_window(self) -> int:
        return max(1, self.window // 2)


# Parameter name -> encoder layer index. Layer 1 is the token embedding,
# layer 2 the mixing/pooling stack; LEOPARD splits task-agnostic from
# task-specific parameters at a layer boundary.
ENCODER_LAYERS = {
    "enc/embed": 1,
    "enc/attn_q": 2,
    "enc/attn_k": 2,
    "enc/attn_v": 2,
    "enc/ffn_w": 2,
    "enc/ffn_b": 2,
    "enc/scorer": 2,
}
N_ENCODER_LAYERS = 2


def init_encoder_params(vocab_size: int, cfg: EncoderConfig, rng: np.random.Generator) -> Params:
    d = cfg.d_model
    s = 1.0 / np.sqrt(d)
    out = OrderedDict()
    out["enc/embed"] = Tensor(rng.normal(0.0, s, size=(vocab_size, d)), requires_grad=True)
    for name in ("enc/attn_q", "enc/attn_k", "enc/attn_v", "enc/ffn_w"):
        out[name] = Tensor(rng.normal(0.0, s, size=(d, d)), requires_grad=True)
    out["enc/ffn_b"] = Tensor(np.zeros(d), requires_grad=True)
    out["enc/scorer"] = Tensor(rng.normal(0.0, s, size=(d,)), requires_grad=True)
    return Params(out)


_BAND_CACHE: dict[tuple[int, int], np.ndarray] = {}


def band_mask(length: int, half_window: int) -> np.ndarray:
    """0/1 matrix with ones where |i - j| <= half_window."""
    key = (length, half_window)
    cached = _BAND_CACHE.get(key)
    if cached is None:
        idx = np.arange(length)
        cached = (np.abs(idx[:, None] - idx[None, :]) <= half_window).astype(np.float64)
        if len(_BAND_CACHE) > 64:
            _BAND_CACHE.clear()
        _BAND_CACHE[key] = cached
    return cached


def contextualize(token_ids: np.ndarray, params: Params, cfg: EncoderConfig) -> Tensor:
    """Contextual embeddings H (L x D); row j only sees its local window."""
    x = ad.embedding_lookup(params["enc/embed"], token_ids)
    q = ad.matmul(x, params["enc/attn_q"])
    k = ad.matmul(x, params["enc/attn_k"])
    v = ad.matmul(x, params["enc/attn_v"])
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(cfg.d_model))
    attn = ad.masked_softmax(scores, band_mask(len(token_ids), cfg.half_window()))
    mixed = ad.add(x, ad.matmul(attn, v))
    return ad.tanh(ad.add(ad.matmul(mixed, params["enc/ffn_w"]), params["enc/ffn_b"]))


@dataclass(frozen=True)
class CharacterEmbedding:
    e: Tensor
    scene_ref: tuple[str, int]
    masked_id: str


def attentive_pool(h: Tensor, mask: np.ndarray, params: Params) -> Tensor:
    """Pool masked rows of H into one vector with learned attention.

    Scores outside the mask are dropped entirely (softmax over -inf), so the
    weights are zero off-mask and sum to one on-mask.
    """
    scores = ad.matmul(h, params["enc/scorer"])
    alpha = ad.masked_softmax(scores, mask)
    return ad.matmul(ad.transpose(h), alpha)


def encode_scene(
    scene: AnonymizedScene, vocab: Vocabulary, params: Params, cfg: EncoderConfig
) -> dict[str, CharacterEmbedding]:
    """Embeddings for every masked ID in the scene that survived truncation."""
    if not scene.id_map:
        return {}
    ids, masks = tokenize_scene(scene, vocab, cfg.max_len)
    if len(ids) == 0:
        return {}
    h = contextualize(ids, params, cfg)
    out = {}
    for pid in ID_LABELS:
        mask = masks.get(pid)
        if mask is None or mask.sum() == 0:
            continue
        out[pid] = CharacterEmbedding(
            attentive_pool(h, mask, params), (scene.movie_id, scene.scene_index), pid
        )
    return out
