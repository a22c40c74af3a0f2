"""Evaluation and analysis harness.

Scores follow the reporting convention of the system tables: all values on
a x100 scale with three decimals, every column carrying an up/down
direction flag, and the AVG column computed by per-column min-max
normalization (direction corrected) over the table's own population of
systems, then the arithmetic mean.
"""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np

from . import dsl
from ._kernels import levenshtein
from .errors import ContractError, DegenerateInputError, DslSyntaxError
from .rng import stream

# ---------------------------------------------------------------------------
# token efficiency
# ---------------------------------------------------------------------------


@dataclass
class GenerationTrace:
    """Final program size vs total tokens sampled (across resamples)."""

    final_tokens: int
    total_tokens: int
    compiled: bool = True

    def ratio(self) -> float:
        return self.final_tokens / self.total_tokens


def winsorized_mean(values, frac: float = 0.1) -> float:
    """Mean after clamping the k = floor(frac*n) extreme order statistics
    at each tail to their nearest retained neighbours."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    n = len(vals)
    k = int(np.floor(frac * n))
    if k > 0:
        vals[:k] = vals[k]
        vals[n - k :] = vals[n - k - 1]
    return float(vals.mean())


def mte(traces) -> float:
    """10% winsorized mean of final/total token ratios, in [0, 1]."""
    traces = list(traces)
    if not traces:
        raise ContractError("mte needs at least one trace")
    if any(t.total_tokens <= 0 for t in traces):
        raise ContractError("mte requires positive total token counts")
    if any(t.final_tokens > t.total_tokens or t.final_tokens < 0 for t in traces):
        raise ContractError("mte requires 0 <= final <= total")
    return winsorized_mean([t.ratio() for t in traces], 0.1)


# ---------------------------------------------------------------------------
# kernel inception distance
# ---------------------------------------------------------------------------


def kid(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased MMD^2 with the polynomial kernel (a.b/d + 1)^3.

    All three kernel matrices are shifted by a common reference value
    before averaging; the shift cancels algebraically and makes the
    estimate exactly zero on constant sets.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ContractError("kid expects (n,d) and (m,d) feature arrays")
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise ContractError("kid needs at least 2 samples per set")
    d = x.shape[1]
    kxx = (x @ x.T / d + 1.0); kxx = kxx * kxx * kxx
    kyy = (y @ y.T / d + 1.0); kyy = kyy * kyy * kyy
    kxy = (x @ y.T / d + 1.0); kxy = kxy * kxy * kxy
    ref = kxy[0, 0]
    term_x = (kxx - ref).sum() - np.trace(kxx - ref)
    term_y = (kyy - ref).sum() - np.trace(kyy - ref)
    term_xy = (kxy - ref).mean()
    return float(term_x / (n * (n - 1)) + term_y / (m * (m - 1)) - 2.0 * term_xy)


# ---------------------------------------------------------------------------
# CLIP-style caption score
# ---------------------------------------------------------------------------

CLIP_W = 2.5
BAG_DIM = 512


def clip_style_score(caption_emb: np.ndarray, image_emb: np.ndarray, w: float = CLIP_W) -> float:
    """w * max(cos, 0) between a caption and an image embedding."""
    c = np.asarray(caption_emb, dtype=np.float64)
    v = np.asarray(image_emb, dtype=np.float64)
    nc, nv = np.linalg.norm(c), np.linalg.norm(v)
    if nc < 1e-12 or nv < 1e-12:
        raise DegenerateInputError("clip_style_score on a zero embedding")
    return float(w * max(float(c @ v) / (nc * nv), 0.0))


def caption_ngram_bag(caption_tokens, dim: int = BAG_DIM, orders=(2, 3, 4)) -> np.ndarray:
    """Hashed character-n-gram bag of a caption, L2-normalized."""
    text = " ".join(caption_tokens)
    bag = np.zeros(dim)
    for n in orders:
        for i in range(len(text) - n + 1):
            h = zlib.crc32(text[i : i + n].encode("utf-8"))
            bag[h % dim] += 1.0
    norm = np.linalg.norm(bag)
    return bag / norm if norm > 0 else bag


class ClipEmbedders:
    """Toy caption/image embedders for the CLIP-style score.

    Captions hash to character-n-gram bags. Images mean-pool trained
    encoder features and map into bag space through an alignment matrix:
    either ridge-fit on the caption-image pool (default; gives the score
    genuine cross-modal text sensitivity) or a fixed random projection.
    """

    def __init__(self, alignment: np.ndarray):
        self.alignment = alignment  # (BAG_DIM, d_feat)

    def embed_caption(self, caption_tokens) -> np.ndarray:
        return caption_ngram_bag(caption_tokens)

    def embed_image_features(self, pooled: np.ndarray) -> np.ndarray:
        return self.alignment @ np.asarray(pooled, dtype=np.float64)

    @classmethod
    def fit(cls, pooled_feats: np.ndarray, captions: list, ridge: float = 1e-3) -> "ClipEmbedders":
        f = np.asarray(pooled_feats, dtype=np.float64)  # (N, d)
        bags = np.stack([caption_ngram_bag(c) for c in captions])  # (N, D)
        gram = f.T @ f + ridge * len(f) * np.eye(f.shape[1])
        w = np.linalg.solve(gram, f.T @ bags).T  # (D, d)
        return cls(w)

    @classmethod
    def random_projection(cls, d_feat: int, seed: int = 0) -> "ClipEmbedders":
        gen = stream(seed, "clip", "projection")
        return cls(gen.standard_normal((BAG_DIM, d_feat)) / np.sqrt(d_feat))


# ---------------------------------------------------------------------------
# code similarity
# ---------------------------------------------------------------------------


def ted(a_program, b_program) -> float:
    """Normalized token-level edit distance over tex-tokenized programs, [0,1]."""
    ta = dsl.tex_tokenize(dsl.program_text(a_program))
    tb = dsl.tex_tokenize(dsl.program_text(b_program))
    if not ta and not tb:
        return 0.0
    vocab = {}
    ids_a = [vocab.setdefault(t, len(vocab)) for t in ta]
    ids_b = [vocab.setdefault(t, len(vocab)) for t in tb]
    return levenshtein(ids_a, ids_b) / max(len(ta), len(tb))


def _order_ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _ngram_counts(tokens, max_order: int = 4) -> Counter:
    counts = Counter()
    for n in range(1, max_order + 1):
        counts.update(_order_ngrams(tokens, n))
    return counts


def trivially_shared_ngrams(corpus: list, k: int, max_order: int = 4) -> frozenset:
    """The k most frequent n-grams (n<=max_order) across a token corpus.

    Ties break lexicographically so the exclusion set is deterministic.
    """
    if not corpus:
        raise ContractError("exclusion corpus must be non-empty")
    counts = Counter()
    for tokens in corpus:
        counts.update(_ngram_counts(tokens, max_order))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return frozenset(g for g, _ in ranked[:k])


def crystal_bleu_style(candidate, reference, corpus=None, k: int = 500, exclusion=None, eps: float = 1e-9) -> float:
    """BLEU-4 with brevity penalty after deleting the k most frequent
    corpus n-grams from both candidate and reference multisets.

    Orders where the candidate has no n-grams left are skipped; zero
    precisions are add-epsilon smoothed. ``exclusion`` short-circuits the
    corpus scan when the caller has already computed the set.
    """
    cand = dsl.tex_tokenize(dsl.program_text(candidate))
    ref = dsl.tex_tokenize(dsl.program_text(reference))
    if exclusion is None:
        exclusion = trivially_shared_ngrams(corpus, k) if k > 0 else frozenset()
    logs = []
    for n in range(1, 5):
        c_counts = Counter({g: c for g, c in _order_ngrams(cand, n).items() if g not in exclusion})
        r_counts = Counter({g: c for g, c in _order_ngrams(ref, n).items() if g not in exclusion})
        possible = sum(c_counts.values())
        if possible == 0:
            continue
        matches = sum((c_counts & r_counts).values())
        p = matches / possible if matches > 0 else eps
        logs.append(np.log(p))
    if not logs:
        return 0.0
    geo = float(np.exp(np.mean(logs)))
    if len(cand) == 0:
        return 0.0
    bp = 1.0 if len(cand) >= len(ref) else float(np.exp(1.0 - len(ref) / len(cand)))
    return bp * geo


# ---------------------------------------------------------------------------
# slot matching
# ---------------------------------------------------------------------------


def slot_match(generated_program, slots: dsl.CaptionSlots) -> float:
    """Fraction of caption slots satisfied by the generated scene.

    Exact: maximizes over all injective assignments of caption
    descriptions to generated primitives (both capped at 6). Unparseable
    programs score 0.
    """
    total = slots.count()
    if total == 0:
        return 0.0
    try:
        prims = dsl.parse(generated_program)
    except DslSyntaxError:
        return 0.0
    kd = len(slots.prims)
    kg = len(prims)
    r = min(kd, kg)
    best = 0
    for desc_subset in combinations(range(kd), r):
        for perm in permutations(range(kg), r):
            mapping = dict(zip(desc_subset, perm))
            score = 0
            for di, d in enumerate(slots.prims):
                gi = mapping.get(di)
                if gi is None:
                    continue
                p = prims[gi]
                if p.kind == d["kind"]:
                    score += 1
                if p.color == d["color"]:
                    score += 1
                if d["pos"] is not None and dsl.coarse_position(*p.ref_point()) == d["pos"]:
                    score += 1
                if d["label"] is not None and p.kind == "TEXT" and p.label == d["label"]:
                    score += 1
            if slots.relation is not None and 0 in mapping and 1 in mapping:
                if dsl.relation_of(prims[mapping[0]], prims[mapping[1]]) == slots.relation:
                    score += 1
            best = max(best, score)
    return best / total


# ---------------------------------------------------------------------------
# table aggregation
# ---------------------------------------------------------------------------


@dataclass
class MetricTable:
    columns: list  # (name, "up" | "down")
    rows: dict = field(default_factory=dict)  # system -> [values x100]

    def add(self, system: str, values):
        values = [float(v) for v in values]
        if len(values) != len(self.columns):
            raise ContractError("row length does not match columns")
        if any(not np.isfinite(v) for v in values):
            raise ContractError(f"non-finite metric value for {system!r}")
        self.rows[system] = values

    def validate(self):
        for name, direction in self.columns:
            if direction not in ("up", "down"):
                raise ContractError(f"column {name!r} missing a direction")


def minmax_avg(table: MetricTable):
    """Per-system AVG: min-max per column over the table's systems,
    down-metrics flipped, arithmetic mean, x100.

    Returns (system -> AVG, list of constant columns that were pinned to
    1.0 for everyone).
    """
    table.validate()
    systems = list(table.rows)
    if len(systems) < 2:
        raise ContractError("minmax_avg needs at least 2 systems")
    mat = np.array([table.rows[s] for s in systems], dtype=np.float64)
    normalized = np.zeros_like(mat)
    constant_cols = []
    for j, (name, direction) in enumerate(table.columns):
        col = mat[:, j]
        lo, hi = col.min(), col.max()
        if hi == lo:
            normalized[:, j] = 1.0
            constant_cols.append(name)
            continue
        vals = (col - lo) / (hi - lo)
        normalized[:, j] = 1.0 - vals if direction == "down" else vals
    avgs = {s: float(normalized[i].mean() * 100.0) for i, s in enumerate(systems)}
    return avgs, constant_cols


def typographic_ratio(original: dict, redacted: dict):
    """Per-system redacted/original x100 (higher = less copied text).

    Systems with a zero original score are excluded and flagged.
    """
    if set(original) != set(redacted):
        raise ContractError("typographic_ratio needs matched system sets")
    ratios, excluded = {}, []
    for system, orig in original.items():
        if orig <= 0:
            excluded.append(system)
            continue
        ratios[system] = redacted[system] / orig * 100.0
    return ratios, excluded


# ---------------------------------------------------------------------------
# best-worst scaling
# ---------------------------------------------------------------------------


@dataclass
class BwsAnnotation:
    items: tuple
    best: str
    worst: str
    annotator: str = ""

    def __post_init__(self):
        if self.best == self.worst:
            raise ContractError("best and worst must differ")
        if self.best not in self.items or self.worst not in self.items:
            raise ContractError("best/worst must be members of the tuple")


def bws_scores(annotations) -> dict:
    """Per-item (best_count - worst_count) / appearances, in [-1, 1]."""
    annotations = list(annotations)
    if not annotations:
        raise ContractError("bws_scores needs annotations")
    shown = Counter()
    best = Counter()
    worst = Counter()
    for a in annotations:
        for item in a.items:
            shown[item] += 1
        best[a.best] += 1
        worst[a.worst] += 1
    return {item: (best[item] - worst[item]) / shown[item] for item in shown}


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Spearman's rho with average ranks for ties."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ContractError("spearman needs two equal-length vectors of size >= 2")
    ra, rb = _average_ranks(a), _average_ranks(b)
    sa, sb = ra.std(), rb.std()
    if sa == 0 or sb == 0:
        raise DegenerateInputError("spearman on a constant vector")
    return float(((ra - ra.mean()) * (rb - rb.mean())).mean() / (sa * sb))


def split_half_reliability(annotations, seed: int = 0, rounds: int = 20):
    """Mean Spearman's rho between scores from two random halves of the
    annotations. Degenerate rounds (constant or underpopulated halves)
    are skipped; returns (mean rho, skipped_rounds)."""
    annotations = list(annotations)
    if len(annotations) < 2:
        raise ContractError("split_half_reliability needs >= 2 annotations")
    rhos = []
    skipped = 0
    for r in range(rounds):
        gen = stream(seed, "shr", str(r))
        perm = gen.permutation(len(annotations))
        half = len(annotations) // 2
        s1 = bws_scores([annotations[i] for i in perm[:half]])
        s2 = bws_scores([annotations[i] for i in perm[half:]])
        common = sorted(set(s1) & set(s2))
        if len(common) < 2:
            skipped += 1
            continue
        v1 = [s1[i] for i in common]
        v2 = [s2[i] for i in common]
        try:
            rhos.append(spearman(v1, v2))
        except DegenerateInputError:
            skipped += 1
    if not rhos:
        raise DegenerateInputError("all split-half rounds were degenerate")
    return float(np.mean(rhos)), skipped
