"""Frozen miniature text/vision transformers with learnable prompt tokens.

Both branches are pre-LN transformer stacks over the shared tensor engine,
projecting into one joint feature space:

    text:  ids -> embed + pos -> blocks 1..K -> final LN -> end-token row -> TextProj
    image: patches -> linear embed, class token, + pos -> blocks 1..K
           -> final LN -> class-token row -> ImageProj

Prompt tokens are appended to the sequence for layers prompt_depth+1..K.
In `fresh` mode every such layer owns its own learnable tokens and the
block outputs at prompt positions are discarded; in `carried` mode one
set joins once and its layer outputs ride through. Readout positions
(end token, class token) sit before the appended block, so sequence
length changes never move them.

Backbone weights are created frozen (trainable=False) and stay frozen;
prompt packs are the only trainable tensors in the system.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, UsageError
from .fusion import AdapterConfig, adapt

PAD_ID = 0
UNK_ID = 1
END_ID = 2
TEMPLATE = "a photo of"

_WORD_SPLIT = re.compile(r"[^a-z0-9]+")
_MASKED = -1.0e4
_INIT_STD = 0.02


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 32
    max_text_len: int = 10
    d_lang: int = 32
    d_vis: int = 48
    d_joint: int = 32
    n_layers: int = 4
    prompt_depth: int = 1
    n_heads: int = 4
    patch_grid: int = 4
    patch_size: int = 8
    channels: int = 3
    tau: float = 0.01
    deep_mode: str = "fresh"

    def __post_init__(self):
        problems = []
        if not (0 <= self.prompt_depth < self.n_layers):
            problems.append(
                f"prompt_depth must satisfy 0 <= S < n_layers, got S={self.prompt_depth} K={self.n_layers}"
            )
        for dim_name in ("d_lang", "d_vis"):
            d = getattr(self, dim_name)
            if d % self.n_heads != 0:
                problems.append(f"{dim_name}={d} not divisible by n_heads={self.n_heads}")
        for f_name in ("vocab_size", "max_text_len", "d_lang", "d_vis", "d_joint",
                       "n_layers", "n_heads", "patch_grid", "patch_size"):
            if getattr(self, f_name) < 1:
                problems.append(f"{f_name} must be positive, got {getattr(self, f_name)}")
        if self.channels not in (1, 3):
            problems.append(f"channels must be 1 or 3, got {self.channels}")
        if not (self.tau > 0):
            problems.append(f"tau must be positive, got {self.tau}")
        if self.deep_mode not in ("fresh", "carried"):
            problems.append(f"deep_mode must be 'fresh' or 'carried', got {self.deep_mode!r}")
        if problems:
            raise ConfigError(problems)

    @property
    def image_side(self) -> int:
        return self.patch_grid * self.patch_size

    @property
    def n_prompt_levels(self) -> int:
        return self.n_layers - self.prompt_depth if self.deep_mode == "fresh" else 1


def desk_preset(**overrides) -> ModelConfig:
    """Small model that trains in seconds on a CPU; tau is raised from the
    0.01 default so cosine logits stay in a range where softmax keeps
    gradient signal at this scale."""
    base = dict(vocab_size=32, max_text_len=10, d_lang=32, d_vis=48, d_joint=32,
                n_layers=4, prompt_depth=1, n_heads=4, patch_grid=4, patch_size=8,
                channels=3, tau=0.1, deep_mode="fresh")
    base.update(overrides)
    return ModelConfig(**base)


def full_preset(**overrides) -> ModelConfig:
    """Full-scale dimensions; accepted by config validation, far too large
    for the bundled tests to run forward."""
    base = dict(vocab_size=49408, max_text_len=77, d_lang=512, d_vis=768, d_joint=512,
                n_layers=12, prompt_depth=8, n_heads=8, patch_grid=14, patch_size=16,
                channels=3, tau=0.01, deep_mode="fresh")
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------

class Vocab:
    """Fixed word -> id table with reserved PAD/UNK/END entries."""

    def __init__(self, words):
        self.id_to_word = ["<pad>", "<unk>", "<end>"] + list(words)
        if len(set(self.id_to_word)) != len(self.id_to_word):
            raise ConfigError("vocabulary contains duplicate words")
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}

    def __len__(self):
        return len(self.id_to_word)

    def __getitem__(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)


def split_words(text: str) -> list:
    return [w for w in _WORD_SPLIT.split(text.lower()) if w]


def build_vocab(class_names, template: str = TEMPLATE) -> Vocab:
    """Template words in order, then all class-name words sorted; sorting
    keeps ids independent of class ordering."""
    words = []
    for w in split_words(template):
        if w not in words:
            words.append(w)
    extra = set()
    for name in class_names:
        extra.update(split_words(name))
    words += sorted(w for w in extra if w not in words)
    return Vocab(words)


@dataclass(frozen=True)
class TokenizedQuery:
    ids: np.ndarray  # (T,) int64, END marker included, PAD-filled tail
    end_pos: int
    truncated: bool
    text: str

    def __post_init__(self):
        if self.ids[self.end_pos] != END_ID:
            raise UsageError("end_pos does not point at the end token")


def tokenize(text: str, vocab: Vocab, max_len: int) -> TokenizedQuery:
    words = split_words(text)
    truncated = len(words) > max_len - 1
    words = words[: max_len - 1]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    for i, w in enumerate(words):
        ids[i] = vocab[w]
    ids[len(words)] = END_ID
    return TokenizedQuery(ids=ids, end_pos=len(words), truncated=truncated, text=text)


@dataclass(frozen=True)
class ClassPromptSet:
    """Hand-written query per class, pre-tokenized."""

    class_names: tuple
    queries: tuple  # TokenizedQuery per class, same order
    template: str = TEMPLATE

    def to_json_dict(self) -> dict:
        return {
            "template": self.template,
            "classes": {
                name: {"ids": q.ids.tolist(), "end_pos": q.end_pos}
                for name, q in zip(self.class_names, self.queries)
            },
            "order": list(self.class_names),
        }

    @classmethod
    def from_json_dict(cls, doc) -> "ClassPromptSet":
        names = tuple(doc["order"])
        queries = []
        for name in names:
            entry = doc["classes"][name]
            queries.append(TokenizedQuery(
                ids=np.asarray(entry["ids"], dtype=np.int64),
                end_pos=int(entry["end_pos"]),
                truncated=False,
                text=name,
            ))
        return cls(class_names=names, queries=tuple(queries), template=doc.get("template", TEMPLATE))


def build_class_prompts(class_names, vocab: Vocab, cfg: ModelConfig,
                        template: str = TEMPLATE) -> ClassPromptSet:
    queries = tuple(tokenize(f"{template} {name}", vocab, cfg.max_text_len)
                    for name in class_names)
    return ClassPromptSet(class_names=tuple(class_names), queries=queries, template=template)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

@dataclass
class LayerWeights:
    wq: T.Tensor
    bq: T.Tensor
    wk: T.Tensor
    bk: T.Tensor
    wv: T.Tensor
    bv: T.Tensor
    wo: T.Tensor
    bo: T.Tensor
    ln1_g: T.Tensor
    ln1_b: T.Tensor
    ln2_g: T.Tensor
    ln2_b: T.Tensor
    w1: T.Tensor
    b1: T.Tensor
    w2: T.Tensor
    b2: T.Tensor

    def named(self, prefix: str):
        for f_name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                       "ln1_g", "ln1_b", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"):
            yield f"{prefix}.{f_name}", getattr(self, f_name)


@dataclass
class EncoderWeights:
    cfg: ModelConfig
    vocab: Vocab
    embed: T.Tensor
    pos_text: T.Tensor
    text_layers: list
    ln_text_g: T.Tensor
    ln_text_b: T.Tensor
    text_proj: T.Tensor
    class_token: T.Tensor
    patch_w: T.Tensor
    patch_b: T.Tensor
    pos_patch: T.Tensor
    vis_layers: list
    ln_vis_g: T.Tensor
    ln_vis_b: T.Tensor
    image_proj: T.Tensor

    def tensors(self) -> dict:
        """name -> Tensor in a fixed order, for archives and checksums."""
        out = {"embed": self.embed, "pos_text": self.pos_text}
        for i, lw in enumerate(self.text_layers):
            out.update(lw.named(f"text.layer{i}"))
        out["ln_text_g"] = self.ln_text_g
        out["ln_text_b"] = self.ln_text_b
        out["text_proj"] = self.text_proj
        out["class_token"] = self.class_token
        out["patch_w"] = self.patch_w
        out["patch_b"] = self.patch_b
        out["pos_patch"] = self.pos_patch
        for i, lw in enumerate(self.vis_layers):
            out.update(lw.named(f"vis.layer{i}"))
        out["ln_vis_g"] = self.ln_vis_g
        out["ln_vis_b"] = self.ln_vis_b
        out["image_proj"] = self.image_proj
        return out


def _layer(rng, d: int) -> LayerWeights:
    def mat(rows, cols):
        return T.Tensor((rng.standard_normal((rows, cols)) * _INIT_STD).astype(np.float32))

    def vec_zero(n):
        return T.Tensor(np.zeros(n, dtype=np.float32))

    def vec_one(n):
        return T.Tensor(np.ones(n, dtype=np.float32))

    return LayerWeights(
        wq=mat(d, d), bq=vec_zero(d), wk=mat(d, d), bk=vec_zero(d),
        wv=mat(d, d), bv=vec_zero(d), wo=mat(d, d), bo=vec_zero(d),
        ln1_g=vec_one(d), ln1_b=vec_zero(d), ln2_g=vec_one(d), ln2_b=vec_zero(d),
        w1=mat(d, 4 * d), b1=vec_zero(4 * d), w2=mat(4 * d, d), b2=vec_zero(d),
    )


def init_weights(cfg: ModelConfig, vocab: Vocab, seed: int) -> EncoderWeights:
    """Seeded random frozen backbone; same (cfg, vocab, seed) gives bitwise
    identical weights."""
    if len(vocab) > cfg.vocab_size:
        raise ConfigError(
            f"vocabulary holds {len(vocab)} words but vocab_size is {cfg.vocab_size}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))

    def mat(rows, cols):
        return T.Tensor((rng.standard_normal((rows, cols)) * _INIT_STD).astype(np.float32))

    embed = mat(cfg.vocab_size, cfg.d_lang)
    pos_text = mat(cfg.max_text_len, cfg.d_lang)
    text_layers = [_layer(rng, cfg.d_lang) for _ in range(cfg.n_layers)]
    ln_text_g = T.Tensor(np.ones(cfg.d_lang, dtype=np.float32))
    ln_text_b = T.Tensor(np.zeros(cfg.d_lang, dtype=np.float32))
    text_proj = mat(cfg.d_lang, cfg.d_joint)
    class_token = mat(1, cfg.d_vis)
    flat = cfg.patch_size * cfg.patch_size * cfg.channels
    patch_w = mat(flat, cfg.d_vis)
    patch_b = T.Tensor(np.zeros(cfg.d_vis, dtype=np.float32))
    pos_patch = mat(cfg.patch_grid * cfg.patch_grid + 1, cfg.d_vis)
    vis_layers = [_layer(rng, cfg.d_vis) for _ in range(cfg.n_layers)]
    ln_vis_g = T.Tensor(np.ones(cfg.d_vis, dtype=np.float32))
    ln_vis_b = T.Tensor(np.zeros(cfg.d_vis, dtype=np.float32))
    image_proj = mat(cfg.d_vis, cfg.d_joint)
    return EncoderWeights(
        cfg=cfg, vocab=vocab, embed=embed, pos_text=pos_text,
        text_layers=text_layers, ln_text_g=ln_text_g, ln_text_b=ln_text_b,
        text_proj=text_proj, class_token=class_token, patch_w=patch_w,
        patch_b=patch_b, pos_patch=pos_patch, vis_layers=vis_layers,
        ln_vis_g=ln_vis_g, ln_vis_b=ln_vis_b, image_proj=image_proj,
    )


# ---------------------------------------------------------------------------
# prompt pack
# ---------------------------------------------------------------------------

@dataclass
class PromptPack:
    """The only trainable tensors: per-level language and vision tokens."""

    lang: list  # Tensor (m, d_lang) per injection level
    vis: list  # Tensor (m, d_vis) per injection level
    m: int
    deep_mode: str

    def named(self) -> dict:
        out = {}
        for i, t in enumerate(self.lang):
            out[f"prompt.lang.{i}"] = t
        for i, t in enumerate(self.vis):
            out[f"prompt.vis.{i}"] = t
        return out

    def lang_named(self) -> dict:
        return {k: v for k, v in self.named().items() if k.startswith("prompt.lang.")}

    def vis_named(self) -> dict:
        return {k: v for k, v in self.named().items() if k.startswith("prompt.vis.")}

    def all_params(self) -> list:
        return list(self.lang) + list(self.vis)


def init_prompts(cfg: ModelConfig, seed: int, init_mode: str = "random_gauss",
                 m: int = 2, weights: EncoderWeights = None) -> PromptPack:
    """Build a prompt pack with `cfg.n_prompt_levels` levels per branch.

    random_gauss draws every token from N(0, 0.02^2). embed_text copies the
    embeddings of the template words into each language level (padded with
    the PAD embedding when m exceeds the template) and keeps vision tokens
    random.
    """
    if init_mode not in ("random_gauss", "embed_text"):
        raise UsageError(f"unknown init_mode {init_mode!r}")
    if m < 0:
        raise UsageError(f"prompt length must be >= 0, got {m}")
    rng = np.random.Generator(np.random.PCG64(seed))
    levels = cfg.n_prompt_levels

    def gauss(rows, cols):
        return (rng.standard_normal((rows, cols)) * _INIT_STD).astype(np.float32)

    if init_mode == "embed_text":
        if weights is None:
            raise UsageError("embed_text initialization needs encoder weights")
        ids = [weights.vocab[w] for w in split_words(TEMPLATE + " a")][:m]
        ids += [PAD_ID] * (m - len(ids))
        base = weights.embed.data[np.asarray(ids, dtype=np.int64)] if m else \
            np.zeros((0, cfg.d_lang), dtype=np.float32)

    lang, vis = [], []
    for _ in range(levels):
        if init_mode == "embed_text":
            lang.append(T.Tensor(base.copy(), trainable=True))
        else:
            lang.append(T.Tensor(gauss(m, cfg.d_lang), trainable=True))
    for _ in range(levels):
        vis.append(T.Tensor(gauss(m, cfg.d_vis), trainable=True))
    return PromptPack(lang=lang, vis=vis, m=m, deep_mode=cfg.deep_mode)


def _check_prompts(prompts: PromptPack, cfg: ModelConfig):
    if prompts.deep_mode != cfg.deep_mode:
        raise DimensionError(
            f"prompt pack built for deep_mode={prompts.deep_mode!r}, config wants {cfg.deep_mode!r}"
        )
    want = cfg.n_prompt_levels
    if len(prompts.lang) != want or len(prompts.vis) != want:
        raise DimensionError(
            f"prompt pack has {len(prompts.lang)}/{len(prompts.vis)} levels, config wants {want}"
        )
    for t in prompts.lang:
        if t.shape != (prompts.m, cfg.d_lang):
            raise DimensionError(
                f"language prompt shape {tuple(t.shape)} != ({prompts.m}, {cfg.d_lang})"
            )
    for t in prompts.vis:
        if t.shape != (prompts.m, cfg.d_vis):
            raise DimensionError(
                f"vision prompt shape {tuple(t.shape)} != ({prompts.m}, {cfg.d_vis})"
            )


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _attention(x, lw: LayerWeights, n_heads: int, mask):
    d = x.shape[1]
    dh = d // n_heads
    q = T.add_bias(T.matmul(x, lw.wq), lw.bq)
    k = T.add_bias(T.matmul(x, lw.wk), lw.bk)
    v = T.add_bias(T.matmul(x, lw.wv), lw.bv)
    heads = []
    inv = 1.0 / math.sqrt(dh)
    for h in range(n_heads):
        qh = T.take_cols(q, h * dh, (h + 1) * dh)
        kh = T.take_cols(k, h * dh, (h + 1) * dh)
        vh = T.take_cols(v, h * dh, (h + 1) * dh)
        logits = T.scale(T.matmul(qh, T.transpose(kh)), inv)
        if mask is not None:
            logits = T.add(logits, mask)
        heads.append(T.matmul(T.softmax(logits), vh))
    merged = heads[0] if n_heads == 1 else T.concat(heads, axis=1)
    return T.add_bias(T.matmul(merged, lw.wo), lw.bo)


def _mlp(x, lw: LayerWeights):
    h = T.gelu(T.add_bias(T.matmul(x, lw.w1), lw.b1))
    return T.add_bias(T.matmul(h, lw.w2), lw.b2)


def _block(x, lw: LayerWeights, n_heads: int, mask):
    x = T.add(x, _attention(T.layernorm(x, lw.ln1_g, lw.ln1_b), lw, n_heads, mask))
    return T.add(x, _mlp(T.layernorm(x, lw.ln2_g, lw.ln2_b), lw))


def _pad_mask(seq_len: int, end_pos: int, base_len: int, dtype=np.float32):
    """Additive mask blocking attention toward padded key positions.

    Rows are queries, columns keys. Padding lives strictly between the end
    token and `base_len`; appended prompt slots (>= base_len) are valid.
    """
    mask = np.zeros((seq_len, seq_len), dtype=dtype)
    mask[:, end_pos + 1 : base_len] = _MASKED
    return mask


def _run_stack(x, layers, n_heads: int, cfg: ModelConfig, levels, base_len: int,
               mask_for_len):
    """Shared stack driver; `levels` is None or the per-level prompt tensors."""
    use_prompts = levels is not None and levels[0].shape[0] > 0
    m = levels[0].shape[0] if use_prompts else 0
    for s in range(1, cfg.n_layers + 1):
        inject = use_prompts and s > cfg.prompt_depth
        if inject:
            if cfg.deep_mode == "fresh":
                level = levels[s - cfg.prompt_depth - 1]
                core = x if x.shape[0] == base_len else T.take_rows(x, range(base_len))
                x = T.concat([core, level], axis=0)
            elif x.shape[0] == base_len:  # carried: join once
                x = T.concat([x, levels[0]], axis=0)
        x = _block(x, layers[s - 1], n_heads, mask_for_len(x.shape[0]))
    return x


def text_hidden(weights: EncoderWeights, cfg: ModelConfig, query,
                prompts: PromptPack = None) -> T.Tensor:
    """End-token row (1, d_lang) after the final layernorm, right before
    the joint projection."""
    if isinstance(query, str):
        query = tokenize(query, weights.vocab, cfg.max_text_len)
    if prompts is not None:
        _check_prompts(prompts, cfg)
    tok = tokenize_embed(weights, cfg, query)
    levels = prompts.lang if prompts is not None and prompts.m > 0 else None

    masks = {}

    def mask_for_len(n):
        if n not in masks:
            masks[n] = T.Tensor(_pad_mask(n, query.end_pos, cfg.max_text_len))
        return masks[n]

    x = _run_stack(tok, weights.text_layers, cfg.n_heads, cfg, levels,
                   cfg.max_text_len, mask_for_len)
    x = T.layernorm(x, weights.ln_text_g, weights.ln_text_b)
    return T.take_rows(x, [query.end_pos])


def encode_text(weights: EncoderWeights, cfg: ModelConfig, query,
                prompts: PromptPack = None) -> T.Tensor:
    """Joint-space text feature (d_joint,) for a query string or
    TokenizedQuery, optionally with language prompt tokens."""
    end = text_hidden(weights, cfg, query, prompts=prompts)
    return T.reshape(T.matmul(end, weights.text_proj), (cfg.d_joint,))


def tokenize_embed(weights: EncoderWeights, cfg: ModelConfig, query) -> T.Tensor:
    """Token embeddings plus positional embeddings, shape (T, d_lang)."""
    if isinstance(query, str):
        query = tokenize(query, weights.vocab, cfg.max_text_len)
    if query.ids.shape != (cfg.max_text_len,):
        raise DimensionError(
            f"query tokenized to {query.ids.shape}, config wants ({cfg.max_text_len},)"
        )
    return T.add(T.take_rows(weights.embed, query.ids), weights.pos_text)


def patchify(img: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Non-overlapping patches, row-major over the grid, each flattened in
    (y, x, channel) order; shape (M*M, patch_size^2 * channels)."""
    side = cfg.image_side
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape != (side, side, cfg.channels):
        raise DimensionError(
            f"image shape {arr.shape} != ({side}, {side}, {cfg.channels})"
        )
    ps = cfg.patch_size
    g = cfg.patch_grid
    patches = arr.reshape(g, ps, g, ps, cfg.channels).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(patches.reshape(g * g, ps * ps * cfg.channels))


def image_hidden(weights: EncoderWeights, cfg: ModelConfig, img,
                 prompts: PromptPack = None,
                 adapter: AdapterConfig = None) -> T.Tensor:
    """Class-token row (1, d_vis) after the final layernorm, right before
    the joint projection."""
    if prompts is not None:
        _check_prompts(prompts, cfg)
    arr = np.asarray(img, dtype=np.float32)
    if adapter is not None:
        arr = adapt(arr, adapter)
    emb = T.add_bias(T.matmul(T.Tensor(patchify(arr, cfg)), weights.patch_w),
                     weights.patch_b)
    x = T.add(T.concat([weights.class_token, emb], axis=0), weights.pos_patch)
    levels = prompts.vis if prompts is not None and prompts.m > 0 else None
    base_len = cfg.patch_grid * cfg.patch_grid + 1
    x = _run_stack(x, weights.vis_layers, cfg.n_heads, cfg, levels, base_len,
                   lambda n: None)
    x = T.layernorm(x, weights.ln_vis_g, weights.ln_vis_b)
    return T.take_rows(x, [0])


def encode_image(weights: EncoderWeights, cfg: ModelConfig, img,
                 prompts: PromptPack = None,
                 adapter: AdapterConfig = None) -> T.Tensor:
    """Joint-space image feature (d_joint,), optionally smoothing the image
    first and optionally with vision prompt tokens."""
    cls = image_hidden(weights, cfg, img, prompts=prompts, adapter=adapter)
    return T.reshape(T.matmul(cls, weights.image_proj), (cfg.d_joint,))
