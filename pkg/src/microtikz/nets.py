"""Model zoo: vision encoder, program decoder, text encoder, caption adapter.

All modules are pre-LN transformers over ``d_model=64`` with 4 heads at the
defaults. The vision encoder embeds 8x8 patches of the 64x64 canvas into 64
patch vectors; the caption adapter reruns the same (frozen) encoder stack on
a trainable probe, injecting caption information through gated
cross-attention before selected layers, and emits embeddings with the same
arity so the decoder cannot tell the two sources apart.

Parameters live in flat name->Tensor maps with prefixes ``enc.``, ``dec.``,
``text.``, ``adapter.``; a :class:`ModelBundle` couples such a map with a
JSON architecture descriptor and round-trips through the checkpoint format.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dsl
from .autodiff import Tensor
from .errors import ContractError, DependencyError, DimensionError
from .rng import stream

NEG_INF = -1e30


@dataclass
class ArchConfig:
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 4
    dec_layers: int = 4
    text_layers: int = 2
    mlp_ratio: int = 4
    patch: int = 8
    canvas: int = 64
    caption_len: int = 64
    max_program: int = 96
    vocab: int = len(dsl.VOCAB)

    @property
    def n_patches(self) -> int:
        return (self.canvas // self.patch) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch

    @property
    def max_seq(self) -> int:
        # adapter prefix + caption prefix + BOS + program
        return self.n_patches + self.caption_len + 1 + self.max_program

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model, "n_heads": self.n_heads,
            "enc_layers": self.enc_layers, "dec_layers": self.dec_layers,
            "text_layers": self.text_layers, "mlp_ratio": self.mlp_ratio,
            "patch": self.patch, "canvas": self.canvas,
            "caption_len": self.caption_len, "max_program": self.max_program,
            "vocab": self.vocab,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


@dataclass
class AdapterConfig:
    interval: int = 1
    gate: str = "sigmoid"  # sigmoid | tanh | none
    with_probe: bool = True

    def to_dict(self) -> dict:
        return {"interval": self.interval, "gate": self.gate, "with_probe": self.with_probe}

    @classmethod
    def from_dict(cls, d: dict) -> "AdapterConfig":
        return cls(**d)


def insertion_layers(n_layers: int, interval: int) -> tuple:
    """Encoder layer indices that receive a cross-attention insertion."""
    if interval < 1:
        raise ContractError(f"interval must be >= 1, got {interval}")
    return tuple(range(0, n_layers, interval))


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------


def _linear(params, seed, name, d_in, d_out):
    params[f"{name}.w"] = ad.xavier_uniform(stream(seed, "init", f"{name}.w"), (d_in, d_out))
    params[f"{name}.b"] = ad.zeros_param((d_out,))


def _layernorm(params, name, d):
    params[f"{name}.g"] = ad.ones_param((d,))
    params[f"{name}.b"] = ad.zeros_param((d,))


def _block(params, seed, name, d, mlp_ratio):
    _layernorm(params, f"{name}.ln1", d)
    for proj in ("wq", "wk", "wv", "wo"):
        _linear(params, seed, f"{name}.attn.{proj}", d, d)
    _layernorm(params, f"{name}.ln2", d)
    _linear(params, seed, f"{name}.mlp.fc1", d, d * mlp_ratio)
    _linear(params, seed, f"{name}.mlp.fc2", d * mlp_ratio, d)


def init_encoder_params(cfg: ArchConfig, seed: int) -> dict:
    params = {}
    _linear(params, seed, "enc.patch_proj", cfg.patch_dim, cfg.d_model)
    params["enc.pos"] = ad.xavier_uniform(stream(seed, "init", "enc.pos"), (cfg.n_patches, cfg.d_model))
    for i in range(cfg.enc_layers):
        _block(params, seed, f"enc.blocks.{i}", cfg.d_model, cfg.mlp_ratio)
    _layernorm(params, "enc.lnf", cfg.d_model)
    return params


def init_decoder_params(cfg: ArchConfig, seed: int) -> dict:
    params = {}
    params["dec.embed"] = ad.xavier_uniform(stream(seed, "init", "dec.embed"), (cfg.vocab, cfg.d_model))
    params["dec.pos"] = ad.xavier_uniform(stream(seed, "init", "dec.pos"), (cfg.max_seq, cfg.d_model))
    _linear(params, seed, "dec.connector", cfg.d_model, cfg.d_model)
    for i in range(cfg.dec_layers):
        _block(params, seed, f"dec.blocks.{i}", cfg.d_model, cfg.mlp_ratio)
    _layernorm(params, "dec.lnf", cfg.d_model)
    _linear(params, seed, "dec.head", cfg.d_model, cfg.vocab)
    return params


def init_text_params(cfg: ArchConfig, seed: int) -> dict:
    params = {}
    params["text.embed"] = ad.xavier_uniform(stream(seed, "init", "text.embed"), (cfg.vocab, cfg.d_model))
    params["text.pos"] = ad.xavier_uniform(stream(seed, "init", "text.pos"), (cfg.caption_len, cfg.d_model))
    for i in range(cfg.text_layers):
        _block(params, seed, f"text.blocks.{i}", cfg.d_model, cfg.mlp_ratio)
    _layernorm(params, "text.lnf", cfg.d_model)
    return params


def init_adapter_params(cfg: ArchConfig, acfg: AdapterConfig, seed: int) -> dict:
    """Probe, per-insertion cross-attention, gates, plus the text encoder."""
    params = init_text_params(cfg, seed)
    if acfg.with_probe:
        params["adapter.probe"] = ad.xavier_uniform(
            stream(seed, "init", "adapter.probe"), (cfg.n_patches, cfg.d_model)
        )
    for li in insertion_layers(cfg.enc_layers, acfg.interval):
        name = f"adapter.xattn.{li}"
        _layernorm(params, f"{name}.lnq", cfg.d_model)
        for proj in ("wq", "wk", "wv", "wo"):
            _linear(params, seed, f"{name}.{proj}", cfg.d_model, cfg.d_model)
        if acfg.gate != "none":
            params[f"{name}.gate"] = ad.zeros_param(())
    return params


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

_CAUSAL_CACHE: dict = {}


def causal_mask(n: int) -> np.ndarray:
    m = _CAUSAL_CACHE.get(n)
    if m is None:
        m = np.triu(np.full((n, n), NEG_INF), k=1)
        _CAUSAL_CACHE[n] = m
    return m


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, l, d = x.shape
    return ad.swapaxes(ad.reshape(x, (b, l, n_heads, d // n_heads)), 1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, l, dh = x.shape
    return ad.reshape(ad.swapaxes(x, 1, 2), (b, l, h * dh))


def attention(params, name, q_in: Tensor, kv_in: Tensor, n_heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Multi-head attention; ``mask`` is additive over (.., Lq, Lk) scores."""
    q = _split_heads(ad.add(ad.matmul(q_in, params[f"{name}.wq.w"]), params[f"{name}.wq.b"]), n_heads)
    k = _split_heads(ad.add(ad.matmul(kv_in, params[f"{name}.wk.w"]), params[f"{name}.wk.b"]), n_heads)
    v = _split_heads(ad.add(ad.matmul(kv_in, params[f"{name}.wv.w"]), params[f"{name}.wv.b"]), n_heads)
    dh = q.shape[-1]
    # Scale folded into q: cheaper than scaling the (.., Lq, Lk) score map.
    scores = ad.matmul(ad.mul(q, 1.0 / np.sqrt(dh)), ad.swapaxes(k, -1, -2))
    attn = ad.softmax(scores, axis=-1, add_mask=mask)
    out = _merge_heads(ad.matmul(attn, v))
    return ad.add(ad.matmul(out, params[f"{name}.wo.w"]), params[f"{name}.wo.b"])


def _mlp(params, name, x: Tensor) -> Tensor:
    h = ad.gelu(ad.add(ad.matmul(x, params[f"{name}.fc1.w"]), params[f"{name}.fc1.b"]))
    return ad.add(ad.matmul(h, params[f"{name}.fc2.w"]), params[f"{name}.fc2.b"])


def _ln(params, name, x: Tensor) -> Tensor:
    return ad.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def transformer_block(params, name, x: Tensor, n_heads: int, mask=None) -> Tensor:
    normed = _ln(params, f"{name}.ln1", x)
    x = ad.add(x, attention(params, f"{name}.attn", normed, normed, n_heads, mask))
    return ad.add(x, _mlp(params, f"{name}.mlp", _ln(params, f"{name}.ln2", x)))


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B,H,W) images to (B, n_patches, patch*patch) rows, row-major patches."""
    b, h, w = images.shape
    g = h // patch
    x = images.reshape(b, g, patch, g, patch).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(x).reshape(b, g * g, patch * patch)


def encode_image(params, cfg: ArchConfig, images: np.ndarray) -> Tensor:
    """Patch embeddings of (B, canvas, canvas) float images: (B, n_patches, d)."""
    if images.ndim == 2:
        images = images[None]
    if images.shape[-2:] != (cfg.canvas, cfg.canvas):
        raise DimensionError(f"expected {cfg.canvas}x{cfg.canvas} images, got {images.shape[-2:]}")
    x = Tensor(patchify(np.asarray(images, dtype=np.float64), cfg.patch))
    h = ad.add(ad.add(ad.matmul(x, params["enc.patch_proj.w"]), params["enc.patch_proj.b"]), params["enc.pos"])
    for i in range(cfg.enc_layers):
        h = transformer_block(params, f"enc.blocks.{i}", h, cfg.n_heads)
    return _ln(params, "enc.lnf", h)


def encode_text(params, cfg: ArchConfig, caption_ids: np.ndarray, pad_mask: np.ndarray) -> Tensor:
    """Bidirectional caption encoding: (B, caption_len, d); pads masked as keys."""
    b, lc = caption_ids.shape
    h = ad.add(ad.embedding(params["text.embed"], caption_ids), ad.take_rows(params["text.pos"], lc))
    key_mask = np.where(pad_mask[:, None, None, :], 0.0, NEG_INF)  # (B,1,1,Lc)
    for i in range(cfg.text_layers):
        h = transformer_block(params, f"text.blocks.{i}", h, cfg.n_heads, mask=key_mask)
    return _ln(params, "text.lnf", h)


def gate_value(params, name: str, kind: str) -> Tensor | float:
    if kind == "sigmoid":
        return ad.sigmoid(params[f"{name}.gate"])
    if kind == "tanh":
        return ad.tanh(params[f"{name}.gate"])
    return 1.0


def encode_caption_adapter(params, cfg: ArchConfig, acfg: AdapterConfig, caption_ids: np.ndarray, pad_mask: np.ndarray) -> Tensor:
    """Adapter path: run the vision encoder on the probe, injecting caption
    information via gated cross-attention before each selected layer.

    Output has exactly ``n_patches`` vectors, making it a drop-in for
    :func:`encode_image` outputs.
    """
    if caption_ids.size == 0 or not pad_mask.any():
        raise ContractError("encode_caption_adapter requires a non-empty caption")
    b = caption_ids.shape[0]
    text_states = encode_text(params, cfg, caption_ids, pad_mask)
    key_mask = np.where(pad_mask[:, None, None, :], 0.0, NEG_INF)
    base = Tensor(np.zeros((b, cfg.n_patches, cfg.d_model)))
    if acfg.with_probe:
        base = ad.add(base, params["adapter.probe"])
    h = ad.add(base, params["enc.pos"])
    inserts = set(insertion_layers(cfg.enc_layers, acfg.interval))
    for i in range(cfg.enc_layers):
        if i in inserts:
            name = f"adapter.xattn.{i}"
            q = _ln(params, f"{name}.lnq", h)
            xatt = attention(params, name, q, text_states, cfg.n_heads, mask=key_mask)
            g = gate_value(params, name, acfg.gate)
            h = ad.add(h, xatt if g == 1.0 else ad.mul(xatt, g))
        h = transformer_block(params, f"enc.blocks.{i}", h, cfg.n_heads)
    return _ln(params, "enc.lnf", h)


def decoder_forward(
    params,
    cfg: ArchConfig,
    token_ids: np.ndarray,
    enc_prefix: Tensor | None = None,
    tok_prefix_ids: np.ndarray | None = None,
    tok_prefix_mask: np.ndarray | None = None,
) -> Tensor:
    """Causal decoder over [connected encoder prefix; token prefix; tokens].

    Returns logits (B, L, vocab) over the full sequence; CE masking picks
    out program positions. ``enc_prefix`` is in encoder space and passes
    through the modality connector.
    """
    parts = []
    prefix_len = 0
    pad_segments = []
    b = token_ids.shape[0]
    if enc_prefix is not None:
        parts.append(ad.add(ad.matmul(enc_prefix, params["dec.connector.w"]), params["dec.connector.b"]))
        pad_segments.append(np.ones((b, enc_prefix.shape[1]), dtype=bool))
        prefix_len += enc_prefix.shape[1]
    if tok_prefix_ids is not None:
        parts.append(ad.embedding(params["dec.embed"], tok_prefix_ids))
        mask = tok_prefix_mask if tok_prefix_mask is not None else np.ones(tok_prefix_ids.shape, dtype=bool)
        pad_segments.append(mask)
        prefix_len += tok_prefix_ids.shape[1]
    parts.append(ad.embedding(params["dec.embed"], token_ids))
    pad_segments.append(np.ones(token_ids.shape, dtype=bool))
    seq = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
    l = seq.shape[1]
    if l > cfg.max_seq:
        raise DimensionError(f"sequence length {l} exceeds max_seq {cfg.max_seq}")
    h = ad.add(seq, ad.take_rows(params["dec.pos"], l))
    key_valid = np.concatenate(pad_segments, axis=1)  # (B, L)
    mask = causal_mask(l)[None, None] + np.where(key_valid[:, None, None, :], 0.0, NEG_INF)
    for i in range(cfg.dec_layers):
        h = transformer_block(params, f"dec.blocks.{i}", h, cfg.n_heads, mask=mask)
    h = _ln(params, "dec.lnf", h)
    return ad.add(ad.matmul(h, params["dec.head.w"]), params["dec.head.b"])


def pool_features(params, cfg: ArchConfig, images: np.ndarray) -> np.ndarray:
    """Mean-pooled encoder features, (B, d), computed without a tape."""
    return encode_image(params, cfg, images).data.mean(axis=1)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def nucleus_filter(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Zero all but the smallest descending-probability prefix with
    cumulative mass >= top_p, then renormalize. Ties break by token id."""
    if not 0.0 < top_p <= 1.0:
        raise ContractError(f"top_p must be in (0, 1], got {top_p}")
    order = np.lexsort((np.arange(len(probs)), -probs))
    cum = np.cumsum(probs[order])
    keep_n = int(np.searchsorted(cum, top_p, side="left")) + 1
    keep_n = min(keep_n, len(probs))
    out = np.zeros_like(probs)
    kept = order[:keep_n]
    out[kept] = probs[kept]
    return out / out.sum()


def sample_token(logits: np.ndarray, temperature: float, top_p: float, gen: np.random.Generator) -> int:
    if temperature <= 0:
        raise ContractError(f"temperature must be > 0, got {temperature}")
    z = logits / temperature
    z = z - z.max()
    probs = np.exp(z)
    probs /= probs.sum()
    probs = nucleus_filter(probs, top_p)
    u = gen.random()
    cum = np.cumsum(probs)
    return int(np.searchsorted(cum, u, side="right"))


def decode_batch(
    params,
    cfg: ArchConfig,
    gens: list,
    temperature: float = 0.8,
    top_p: float = 0.95,
    enc_prefix: Tensor | None = None,
    tok_prefix_ids: np.ndarray | None = None,
    tok_prefix_mask: np.ndarray | None = None,
    max_len: int | None = None,
):
    """Sample programs for a batch in lockstep.

    Each row draws from its own generator, so the produced tokens depend
    only on (params, conditioning, that row's generator), not on batch
    composition order. Returns (token string lists, per-row sampled-token
    counts). Generation stops per row at END or at ``max_len``.
    """
    if enc_prefix is None and tok_prefix_ids is None:
        raise ContractError("decode_batch requires a conditioning prefix")
    b = enc_prefix.shape[0] if enc_prefix is not None else tok_prefix_ids.shape[0]
    if len(gens) != b:
        raise ContractError("need one generator per batch row")
    max_len = max_len or cfg.max_program
    active = np.arange(b)  # original row index of each live batch row
    tokens = np.full((b, 1), dsl.BOS_ID, dtype=np.int64)
    counts = np.zeros(b, dtype=np.int64)
    outs = [[] for _ in range(b)]
    for _ in range(max_len):
        logits = decoder_forward(
            params, cfg, tokens, enc_prefix=enc_prefix,
            tok_prefix_ids=tok_prefix_ids, tok_prefix_mask=tok_prefix_mask,
        ).data[:, -1, :]
        nxt = np.empty(len(active), dtype=np.int64)
        keep = np.ones(len(active), dtype=bool)
        for row, i in enumerate(active):
            tid = sample_token(logits[row], temperature, top_p, gens[i])
            nxt[row] = tid
            counts[i] += 1
            outs[i].append(dsl.VOCAB[tid])
            if tid == dsl.END_ID:
                keep[row] = False
        if not keep.any():
            break
        # Finished rows leave the batch; each row's math is independent.
        active = active[keep]
        tokens = np.concatenate([tokens[keep], nxt[keep][:, None]], axis=1)
        if enc_prefix is not None and not keep.all():
            enc_prefix = Tensor(enc_prefix.data[keep])
        if tok_prefix_ids is not None and not keep.all():
            tok_prefix_ids = tok_prefix_ids[keep]
            tok_prefix_mask = tok_prefix_mask[keep] if tok_prefix_mask is not None else None
    return outs, counts


def decode_program(params, cfg: ArchConfig, prefix: Tensor, temperature: float, top_p: float, gen) -> list:
    """Sample one program conditioned on patch-shaped prefix embeddings."""
    outs, _ = decode_batch(params, cfg, [gen], temperature, top_p, enc_prefix=prefix)
    return outs[0]


def decode_token_conditioned(params, cfg: ArchConfig, caption_ids: np.ndarray, caption_mask: np.ndarray, temperature: float, top_p: float, gen) -> list:
    """Sample one program conditioned on caption tokens in the decoder."""
    if caption_ids.size == 0 or not caption_mask.any():
        raise ContractError("decode_token_conditioned requires a non-empty caption")
    outs, _ = decode_batch(
        params, cfg, [gen], temperature, top_p,
        tok_prefix_ids=caption_ids, tok_prefix_mask=caption_mask,
    )
    return outs[0]


def pad_caption(ids: list, length: int):
    """Truncate/pad caption ids to a fixed length; returns (ids, valid mask)."""
    ids = list(ids)[:length]
    mask = np.zeros(length, dtype=bool)
    mask[: len(ids)] = True
    out = np.full(length, dsl.PAD_ID, dtype=np.int64)
    out[: len(ids)] = ids
    return out, mask


# ---------------------------------------------------------------------------
# bundles
# ---------------------------------------------------------------------------

VARIANTS = (
    "tikzero_cos", "tikzero_mse", "tikzero_base",
    "automatikz_llm", "automatikz_vlm", "tikzero_star",
)


@dataclass
class ModelBundle:
    params: dict
    arch: dict = field(default_factory=dict)

    def subset(self, prefix: str) -> dict:
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def save(self, path: str):
        arrays = {k: v.data.astype(np.float32) for k, v in self.params.items()}
        ad.save_checkpoint(path, arrays, arch=self.arch)

    @classmethod
    def load(cls, path: str, trainable: bool = False) -> "ModelBundle":
        arrays, arch = ad.load_checkpoint(path)
        params = {k: Tensor(a.astype(np.float64), requires_grad=trainable) for k, a in arrays.items()}
        return cls(params=params, arch=arch or {})

    def param_hash(self, prefix: str = "") -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            if name.startswith(prefix):
                h.update(name.encode())
                h.update(self.params[name].data.astype(np.float32).tobytes())
        return h.hexdigest()

    def set_trainable(self, prefix: str, trainable: bool):
        for k, v in self.params.items():
            if k.startswith(prefix):
                v.requires_grad = trainable

    def trainable_params(self) -> dict:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def arch_config(self) -> ArchConfig:
        return ArchConfig.from_dict(self.arch)

    def adapter_config(self) -> AdapterConfig:
        return AdapterConfig.from_dict(self.arch["adapter"])


def init_inverse_bundle(cfg: ArchConfig, seed: int) -> ModelBundle:
    params = {}
    params.update(init_encoder_params(cfg, seed))
    params.update(init_decoder_params(cfg, seed))
    arch = cfg.to_dict()
    arch.update({"kind": "inverse", "seed": seed})
    return ModelBundle(params, arch)


def assemble(variant: str, cfg: ArchConfig, seed: int, inverse: ModelBundle | None = None,
             adapter: ModelBundle | None = None, acfg: AdapterConfig | None = None) -> ModelBundle:
    """Wire a model variant from its prerequisite sub-bundles.

    tikzero_* variants need a trained inverse bundle plus adapter params
    (freshly initialized here when ``adapter`` is None). automatikz_vlm
    copies the trained inverse decoder; automatikz_llm starts from fresh
    weights on a variant-specific seed path. Raises
    :class:`DependencyError` when a prerequisite is missing.
    """
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}")
    params = {}
    arch = cfg.to_dict()
    arch.update({"kind": "model", "variant": variant, "seed": seed})
    if variant.startswith("tikzero"):
        if inverse is None:
            raise DependencyError(f"{variant} requires a trained inverse bundle")
        if acfg is None:
            acfg = AdapterConfig()
        if variant == "tikzero_base":
            acfg = AdapterConfig(interval=acfg.interval, gate="none", with_probe=False)
        for k, v in inverse.params.items():
            params[k] = Tensor(v.data.copy(), requires_grad=v.requires_grad)
        if adapter is not None:
            for k, v in adapter.params.items():
                if k.startswith(("adapter.", "text.")):
                    params[k] = Tensor(v.data.copy(), requires_grad=v.requires_grad)
        else:
            params.update(init_adapter_params(cfg, acfg, seed))
        arch["adapter"] = acfg.to_dict()
        arch["loss"] = {"tikzero_cos": "cos", "tikzero_mse": "mse"}.get(variant, "cos")
    elif variant == "automatikz_llm":
        dec_seed = int.from_bytes(hashlib.sha256(f"automatikz_llm/{seed}".encode()).digest()[:4], "little")
        params.update(init_decoder_params(cfg, dec_seed))
        arch["decoder_seed"] = dec_seed
    elif variant == "automatikz_vlm":
        if inverse is None:
            raise DependencyError("automatikz_vlm requires the trained inverse bundle")
        for k, v in inverse.params.items():
            if k.startswith("dec."):
                params[k] = Tensor(v.data.copy(), requires_grad=True)
    return ModelBundle(params, arch)
