"""System evaluation pipeline: decode, score, aggregate, redact, re-score.

One fixed scorer encoder (the trained inverse-graphics encoder) supplies
image features for every system so comparisons stay fair. Metric columns:

    DSIM^    pooled-feature cosine to the reference image (perceptual role)
    KID_     polynomial-kernel MMD^2 between generated and reference features
    CLIP^    caption/image score through the fitted cross-modal alignment
    SLOT^    exact caption-slot satisfaction (toy ground-truth fidelity)
    CBLEU^   BLEU-4 after dropping trivially shared corpus n-grams
    TED_     normalized token edit distance to the reference program
    MTE^     winsorized token efficiency (penalizes compile resampling)
    EMDSIM^  1 - exact EMD between patch embeddings, vs the reference

plus the min-max AVG over whatever population of systems is evaluated
together, and a redacted-text CLIP + ratio pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsl, emd as emdmod, metrics, nets
from .autodiff import Tensor
from .errors import ContractError, DependencyError, DslSyntaxError
from .rng import stream

METRIC_COLUMNS = (
    ("DSIM", "up"), ("KID", "down"), ("CLIP", "up"), ("SLOT", "up"),
    ("CBLEU", "up"), ("TED", "down"), ("MTE", "up"), ("EMDSIM", "up"),
)

CONDITIONINGS = ("adapter", "token", "adapter+token", "image", "null", "shuffled", "oracle")


@dataclass
class EvalSystem:
    name: str
    conditioning: str
    params: dict | None = None
    arch: nets.ArchConfig | None = None
    acfg: nets.AdapterConfig | None = None


@dataclass
class ItemResult:
    program: list | None
    compiled: bool
    trace: metrics.GenerationTrace


@dataclass
class EvalResult:
    table: metrics.MetricTable
    avgs: dict
    constant_columns: list
    clip_redacted: dict
    ratios: dict
    ratio_excluded: list
    outputs: dict = field(default_factory=dict)  # system -> [ItemResult]


def conditioning_for_variant(variant: str) -> str:
    if variant in ("tikzero_cos", "tikzero_mse", "tikzero_base", "tikzero_ft_i"):
        return "adapter"
    if variant in ("tikzero_ft_ii", "tikzero_star"):
        return "adapter+token"
    if variant in ("automatikz_llm", "automatikz_vlm"):
        return "token"
    raise ContractError(f"no conditioning rule for variant {variant!r}")


def system_from_bundles(name, bundle: nets.ModelBundle, inverse: nets.ModelBundle | None = None,
                        conditioning: str | None = None) -> EvalSystem:
    """Build an evaluation system; adapter-only checkpoints merge with the
    inverse bundle they were distilled against."""
    arch = bundle.arch_config()
    params = dict(bundle.params)
    kind = bundle.arch.get("kind")
    if kind == "adapter":
        if inverse is None:
            raise DependencyError(f"system {name!r} needs the inverse bundle")
        merged = dict(inverse.params)
        merged.update(params)
        params = merged
    if kind == "inverse" and conditioning is None:
        conditioning = "image"
    if conditioning is None:
        conditioning = conditioning_for_variant(bundle.arch.get("variant", bundle.arch.get("label", "")))
    acfg = nets.AdapterConfig.from_dict(bundle.arch["adapter"]) if "adapter" in bundle.arch else None
    return EvalSystem(name=name, conditioning=conditioning, params=params, arch=arch, acfg=acfg)


def control_system(name: str, conditioning: str, base: EvalSystem) -> EvalSystem:
    """A control (null prefix / shuffled captions / oracle) reusing a base
    system's weights."""
    if conditioning not in ("null", "shuffled", "oracle"):
        raise ContractError(f"not a control conditioning: {conditioning!r}")
    return EvalSystem(name=name, conditioning=conditioning, params=base.params, arch=base.arch, acfg=base.acfg)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _caption_ids(records, arch: nets.ArchConfig):
    ids = np.zeros((len(records), arch.caption_len), dtype=np.int64)
    mask = np.zeros((len(records), arch.caption_len), dtype=bool)
    for i, rec in enumerate(records):
        ids[i], mask[i] = nets.pad_caption(dsl.encode_caption(rec.caption), arch.caption_len)
    return ids, mask


def generate_outputs(system: EvalSystem, records, seed: int, temperature: float = 0.8,
                     top_p: float = 0.95, max_resamples: int = 4, batch_size: int = 64) -> list:
    """Decode one program per test record, resampling on compile errors.

    Per-item RNG streams are keyed by (seed, system, item, attempt), so
    outputs are independent of batch composition order; rows that finish
    drop out of the batch.
    """
    n = len(records)
    if system.conditioning == "oracle":
        return [
            ItemResult(rec.program, True,
                       metrics.GenerationTrace(len(rec.program), len(rec.program), True))
            for rec in records
        ]
    arch = system.arch
    cap_ids, cap_mask = _caption_ids(records, arch)
    if system.conditioning == "shuffled":
        gen = stream(seed, "shuffle", system.name)
        shift = int(gen.integers(1, n)) if n > 1 else 0
        order = (np.arange(n) + shift) % n  # derangement for n > 1
        cap_ids, cap_mask = cap_ids[order], cap_mask[order]

    results = [None] * n
    totals = np.zeros(n, dtype=np.int64)
    pending = list(range(n))
    for attempt in range(max_resamples):
        if not pending:
            break
        nxt_pending = []
        for lo in range(0, len(pending), batch_size):
            idxs = pending[lo : lo + batch_size]
            gens = [stream(seed, "decode", system.name, str(i), str(attempt)) for i in idxs]
            enc_prefix = None
            tok_ids = None
            tok_mask = None
            if system.conditioning in ("adapter", "adapter+token"):
                enc_prefix = nets.encode_caption_adapter(
                    system.params, arch, system.acfg, cap_ids[idxs], cap_mask[idxs]
                ).detach()
            if system.conditioning in ("token", "adapter+token"):
                tok_ids, tok_mask = cap_ids[idxs], cap_mask[idxs]
            if system.conditioning == "image":
                imgs = np.stack([records[i].image_u8 for i in idxs]).astype(np.float64) / 255.0
                enc_prefix = nets.encode_image(system.params, arch, imgs).detach()
            if system.conditioning == "null":
                enc_prefix = Tensor(np.zeros((len(idxs), arch.n_patches, arch.d_model)))
            outs, counts = nets.decode_batch(
                system.params, arch, gens, temperature, top_p,
                enc_prefix=enc_prefix, tok_prefix_ids=tok_ids, tok_prefix_mask=tok_mask,
            )
            for row, i in enumerate(idxs):
                totals[i] += counts[row]
                if dsl.is_valid(outs[row]):
                    results[i] = ItemResult(
                        outs[row], True,
                        metrics.GenerationTrace(len(outs[row]), int(totals[i]), True),
                    )
                else:
                    nxt_pending.append(i)
        pending = nxt_pending
    for i in pending:
        results[i] = ItemResult(None, False, metrics.GenerationTrace(0, int(totals[i]), False))
    return results


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


class Scorer:
    """Holds the fixed feature encoder, CLIP embedders, and reference data."""

    def __init__(self, inverse: nets.ModelBundle, records, train_programs, clip_embedders, batch_size: int = 64):
        self.params = inverse.params
        self.arch = inverse.arch_config()
        self.records = records
        self.clip = clip_embedders
        self.batch_size = batch_size
        self.exclusion = metrics.trivially_shared_ngrams(
            [dsl.tex_tokenize(dsl.program_text(p)) for p in train_programs], k=500
        )
        self.ref_images = np.stack([r.image_u8 for r in records]).astype(np.float64) / 255.0
        self.ref_patches = self.patch_embeddings(self.ref_images)
        self.ref_pooled = self.ref_patches.mean(axis=1)
        self.caption_bags = np.stack([self.clip.embed_caption(r.caption) for r in records])
        self.slots = [dsl.extract_slots(r.caption) for r in records]

    def patch_embeddings(self, images: np.ndarray) -> np.ndarray:
        out = []
        for lo in range(0, len(images), self.batch_size):
            out.append(nets.encode_image(self.params, self.arch, images[lo : lo + self.batch_size]).data)
        return np.concatenate(out, axis=0)

    def render_outputs(self, outputs) -> np.ndarray:
        blank = np.zeros((self.arch.canvas, self.arch.canvas))
        imgs = []
        for res in outputs:
            imgs.append(dsl.rasterize(res.program) if res.compiled else blank)
        return np.stack(imgs)

    def score_system(self, outputs, gen_images=None):
        """Metric row (x100 scale) for one system's outputs."""
        records = self.records
        if gen_images is None:
            gen_images = self.render_outputs(outputs)
        gen_patches = self.patch_embeddings(gen_images)
        gen_pooled = gen_patches.mean(axis=1)

        def pooled_cos(a, b):
            na = np.linalg.norm(a, axis=1)
            nb = np.linalg.norm(b, axis=1)
            return (a * b).sum(axis=1) / np.maximum(na * nb, 1e-12)

        dsim = float(pooled_cos(gen_pooled, self.ref_pooled).mean())
        kid_v = metrics.kid(gen_pooled, self.ref_pooled)
        clip_scores = [
            metrics.clip_style_score(self.caption_bags[i], self.clip.embed_image_features(gen_pooled[i]))
            for i in range(len(records))
        ]
        slot_scores = [
            metrics.slot_match(res.program, self.slots[i]) if res.compiled else 0.0
            for i, res in enumerate(outputs)
        ]
        cbleu_scores = [
            metrics.crystal_bleu_style(res.program, records[i].program, exclusion=self.exclusion)
            if res.compiled else 0.0
            for i, res in enumerate(outputs)
        ]
        ted_scores = [
            metrics.ted(res.program, records[i].program) if res.compiled else 1.0
            for i, res in enumerate(outputs)
        ]
        mte_v = metrics.mte([res.trace for res in outputs])
        emdsim_scores = []
        for i, res in enumerate(outputs):
            if not res.compiled:
                emdsim_scores.append(0.0)
                continue
            value, _ = emdmod.emd(self.ref_patches[i], gen_patches[i], "cos_dist")
            emdsim_scores.append(1.0 - value)
        row = {
            "DSIM": dsim * 100.0,
            "KID": kid_v * 100.0,
            "CLIP": float(np.mean(clip_scores)) * 100.0,
            "SLOT": float(np.mean(slot_scores)) * 100.0,
            "CBLEU": float(np.mean(cbleu_scores)) * 100.0,
            "TED": float(np.mean(ted_scores)) * 100.0,
            "MTE": mte_v * 100.0,
            "EMDSIM": float(np.mean(emdsim_scores)) * 100.0,
        }
        return row

    def clip_redacted(self, outputs) -> float:
        """Mean CLIP score after ROT13-redacting visible text in outputs."""
        blank = np.zeros((self.arch.canvas, self.arch.canvas))
        imgs = []
        for res in outputs:
            imgs.append(dsl.rasterize(dsl.rot13_redact(res.program)) if res.compiled else blank)
        pooled = self.patch_embeddings(np.stack(imgs)).mean(axis=1)
        scores = [
            metrics.clip_style_score(self.caption_bags[i], self.clip.embed_image_features(pooled[i]))
            for i in range(len(outputs))
        ]
        return float(np.mean(scores)) * 100.0


def evaluate_systems(systems: list, scorer: Scorer, seed: int, temperature: float = 0.8,
                     top_p: float = 0.95, max_resamples: int = 4) -> EvalResult:
    """Full evaluation: decode, score, min-max AVG, redaction pass."""
    table = metrics.MetricTable(list(METRIC_COLUMNS))
    outputs = {}
    clip_orig = {}
    clip_red = {}
    for system in systems:
        outs = generate_outputs(system, scorer.records, seed, temperature, top_p, max_resamples)
        outputs[system.name] = outs
        row = scorer.score_system(outs)
        table.add(system.name, [row[name] for name, _ in METRIC_COLUMNS])
        clip_orig[system.name] = row["CLIP"]
        clip_red[system.name] = scorer.clip_redacted(outs)
    avgs, constant_cols = metrics.minmax_avg(table)
    ratios, excluded = metrics.typographic_ratio(clip_orig, clip_red)
    return EvalResult(
        table=table, avgs=avgs, constant_columns=constant_cols,
        clip_redacted=clip_red, ratios=ratios, ratio_excluded=excluded,
        outputs=outputs,
    )
