"""Training procedures: inverse-graphics pretraining, adapter distillation,
fine-tuning stages, token-conditioned baselines, decontamination, grid runs.

The zero-shot data contract is enforced mechanically: every record access
during training goes through a :class:`~microtikz.data.DataAudit`, and the
union of fields read by ``train_inverse`` and ``distill_adapter`` is checked
to contain no record from which both a caption and a program were read.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import data as datamod
from . import dsl, nets
from .autodiff import Tensor
from .errors import ContractError, DependencyError, TrainingDivergedError
from .rng import stream

GRID_FRACTIONS = (1.0, 0.5, 0.25, 0.125)
GRID_INTERVALS = (1, 2, 4, 8)


@dataclass
class TrainConfig:
    epochs: int = 1
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    loss: str = "cos"  # cos | mse
    data_fraction: float = 1.0
    interval: int = 1
    stage: str = "none"  # none | i | ii | iii
    max_steps: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.loss not in ("cos", "mse"):
            raise ContractError(f"unknown loss kind {self.loss!r}")
        if not any(abs(self.data_fraction - f) < 1e-12 for f in GRID_FRACTIONS):
            raise ContractError(f"data_fraction must be one of {GRID_FRACTIONS}")
        if self.interval not in GRID_INTERVALS:
            raise ContractError(f"interval must be one of {GRID_INTERVALS}")
        if self.stage not in ("none", "i", "ii", "iii"):
            raise ContractError(f"unknown stage {self.stage!r}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "lr": self.lr, "batch_size": self.batch_size,
            "seed": self.seed, "loss": self.loss, "data_fraction": self.data_fraction,
            "interval": self.interval, "stage": self.stage, "max_steps": self.max_steps,
        }


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: str | None = None
    init_snapshot: str | None = None
    extra: dict = field(default_factory=dict)

    def save(self, path: str):
        payload = {
            "losses": [float(v) for v in self.losses],
            "wall_time": self.wall_time,
            "checkpoint": self.checkpoint,
            "init_snapshot": self.init_snapshot,
            "extra": self.extra,
        }
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
        os.replace(tmp, path)


def batched_indices(gen: np.random.Generator, n: int, batch_size: int, lengths=None) -> list:
    """Seeded shuffle, optional length bucketing, shuffled batch order."""
    perm = gen.permutation(n)
    if lengths is not None:
        order = sorted(range(n), key=lambda j: (lengths[perm[j]], j))
        seq = [int(perm[j]) for j in order]
    else:
        seq = [int(i) for i in perm]
    batches = [np.array(seq[i : i + batch_size]) for i in range(0, n, batch_size)]
    return [batches[i] for i in gen.permutation(len(batches))]


def program_batch(id_lists: list):
    """Pack program id lists into (inputs, targets, weights).

    Inputs are [BOS, p1..p_{n-1}] padded; targets are [p1..p_n] so the
    model predicts every token including END.
    """
    t = max(len(p) for p in id_lists)
    b = len(id_lists)
    inp = np.full((b, t), dsl.PAD_ID, dtype=np.int64)
    tgt = np.full((b, t), dsl.PAD_ID, dtype=np.int64)
    w = np.zeros((b, t))
    for i, ids in enumerate(id_lists):
        n = len(ids)
        inp[i, 0] = dsl.BOS_ID
        inp[i, 1:n] = ids[: n - 1]
        tgt[i, :n] = ids
        w[i, :n] = 1.0
    return inp, tgt, w


def _ce_over_sequence(logits: Tensor, prefix_len: int, tgt: np.ndarray, w: np.ndarray) -> Tensor:
    b, t = tgt.shape
    full_t = np.concatenate([np.zeros((b, prefix_len), dtype=np.int64), tgt], axis=1)
    full_w = np.concatenate([np.zeros((b, prefix_len)), w], axis=1)
    return ad.cross_entropy(logits, full_t, full_w)


def _check_finite(loss_value: float, step: int):
    if not np.isfinite(loss_value):
        raise TrainingDivergedError(f"non-finite loss at step {step}")


def _caption_matrix(records, indices, pool, audit, caption_len):
    ids = np.zeros((len(indices), caption_len), dtype=np.int64)
    mask = np.zeros((len(indices), caption_len), dtype=bool)
    for row, idx in enumerate(indices):
        cap = audit.get(pool, int(idx), "caption")
        ids[row], mask[row] = nets.pad_caption(dsl.encode_caption(cap), caption_len)
    return ids, mask


# ---------------------------------------------------------------------------
# inverse-graphics pretraining
# ---------------------------------------------------------------------------


def train_inverse(pools: dict, cfg: TrainConfig, outdir: str, arch: nets.ArchConfig | None = None):
    """Joint vision-encoder + connector + decoder training on
    (rasterize(program) -> program); captions are never read.

    Saves the pre-training init snapshot needed by fine-tuning stage iii.
    """
    arch = arch or nets.ArchConfig()
    os.makedirs(outdir, exist_ok=True)
    audit = datamod.DataAudit()
    items = []  # (pool, idx)
    for pool_name in ("prog", "pair"):
        pool = pools[pool_name]
        items += [(pool, i) for i in range(len(pool.records))]
    programs = [audit.get(pool, i, "program") for pool, i in items]
    prog_ids = [dsl.encode_program(p) for p in programs]
    images = np.stack([dsl.image_to_u8(dsl.rasterize(p)) for p in programs])
    lengths = [len(p) for p in prog_ids]

    bundle = nets.init_inverse_bundle(arch, cfg.seed)
    init_path = os.path.join(outdir, "inverse_init.ckpt")
    bundle.save(init_path)
    opt = ad.Adam(bundle.params, lr=cfg.lr)
    report = TrainReport(init_snapshot=init_path)
    t0 = time.time()
    step = 0
    for epoch in range(cfg.epochs):
        gen = stream(cfg.seed, "epochs", "inverse", str(epoch))
        for batch in batched_indices(gen, len(items), cfg.batch_size, lengths):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            imgs = images[batch].astype(np.float64) / 255.0
            inp, tgt, w = program_batch([prog_ids[i] for i in batch])
            with ad.Tape() as tape:
                emb = nets.encode_image(bundle.params, arch, imgs)
                logits = nets.decoder_forward(bundle.params, arch, inp, enc_prefix=emb)
                loss = _ce_over_sequence(logits, arch.n_patches, tgt, w)
                _check_finite(loss.item(), step)
                opt.zero_grad()
                tape.backward(loss)
            opt.step()
            report.losses.append(loss.item())
            step += 1
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    report.wall_time = time.time() - t0
    ckpt = os.path.join(outdir, "inverse.ckpt")
    bundle.arch.update({"kind": "inverse", "train_config": cfg.to_dict()})
    bundle.save(ckpt)
    report.checkpoint = ckpt
    report.extra["fields_read"] = sorted(audit.fields_read())
    report.extra["pools_read"] = sorted({p for p, _ in audit.reads})
    report.save(os.path.join(outdir, "inverse_report.json"))
    return bundle, report, audit


# ---------------------------------------------------------------------------
# adapter distillation
# ---------------------------------------------------------------------------


def distillation_loss(student: Tensor, teacher: Tensor, kind: str) -> Tensor:
    """Mean per-patch distance between student and teacher embeddings."""
    if kind == "cos":
        sims = ad.cosine_sim(student, teacher, axis=-1)
        return ad.sub(Tensor(1.0), ad.tmean(sims))
    return ad.mse(student, teacher)


def distill_adapter(
    pools: dict,
    inverse: nets.ModelBundle,
    cfg: TrainConfig,
    outdir: str,
    gate: str = "sigmoid",
    with_probe: bool = True,
    label: str | None = None,
):
    """Distill the caption adapter onto frozen-encoder patch embeddings.

    Only probe, gates, cross-attention, and text-encoder parameters are
    updated; the decoder is not part of the training graph at all. The
    held-out distillation loss is measured on the test pool's
    caption/image pairs (programs unread).
    """
    arch = inverse.arch_config()
    for name, p in inverse.params.items():
        if name.startswith("enc.") and p.requires_grad:
            raise ContractError(f"unfrozen teacher parameter {name!r}; freeze the encoder first")
    os.makedirs(outdir, exist_ok=True)
    acfg = nets.AdapterConfig(interval=cfg.interval, gate=gate, with_probe=with_probe)
    label = label or ("tikzero_base" if not with_probe else f"tikzero_{cfg.loss}")
    audit = datamod.DataAudit()
    pool = pools["capimg"]
    n_used = int(len(pool.records) * cfg.data_fraction)
    indices = list(range(n_used))

    enc_frozen = {k: Tensor(v.data, requires_grad=False) for k, v in inverse.params.items() if k.startswith("enc.")}
    student_params = nets.init_adapter_params(arch, acfg, cfg.seed)
    graph_params = dict(enc_frozen)
    graph_params.update(student_params)
    assert not any(k.startswith("dec.") for k in graph_params)
    enc_hash_before = nets.ModelBundle(enc_frozen).param_hash("enc.")

    caps = [audit.get(pool, i, "caption") for i in indices]
    cap_ids = np.zeros((n_used, arch.caption_len), dtype=np.int64)
    cap_mask = np.zeros((n_used, arch.caption_len), dtype=bool)
    for i, cap in enumerate(caps):
        cap_ids[i], cap_mask[i] = nets.pad_caption(dsl.encode_caption(cap), arch.caption_len)
    images = np.stack([audit.get(pool, i, "image") for i in indices])

    held = pools["test"]
    held_audit = datamod.DataAudit()
    held_ids = np.zeros((len(held.records), arch.caption_len), dtype=np.int64)
    held_mask = np.zeros((len(held.records), arch.caption_len), dtype=bool)
    for i in range(len(held.records)):
        held_ids[i], held_mask[i] = nets.pad_caption(
            dsl.encode_caption(held_audit.get(held, i, "caption")), arch.caption_len
        )
    held_imgs = np.stack([held_audit.get(held, i, "image") for i in range(len(held.records))])

    def heldout_loss() -> float:
        total, count = 0.0, 0
        for lo in range(0, len(held.records), cfg.batch_size):
            hi = min(lo + cfg.batch_size, len(held.records))
            imgs = held_imgs[lo:hi].astype(np.float64) / 255.0
            teacher = nets.encode_image(graph_params, arch, imgs).detach()
            student = nets.encode_caption_adapter(graph_params, arch, acfg, held_ids[lo:hi], held_mask[lo:hi])
            total += distillation_loss(student, teacher, cfg.loss).item() * (hi - lo)
            count += hi - lo
        return total / count

    opt = ad.Adam(student_params, lr=cfg.lr)
    report = TrainReport()
    report.extra["heldout_init"] = heldout_loss()
    t0 = time.time()
    step = 0
    for epoch in range(cfg.epochs):
        gen = stream(cfg.seed, "epochs", label, str(epoch))
        for batch in batched_indices(gen, n_used, cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            imgs = images[batch].astype(np.float64) / 255.0
            teacher = nets.encode_image(graph_params, arch, imgs).detach()
            with ad.Tape() as tape:
                student = nets.encode_caption_adapter(graph_params, arch, acfg, cap_ids[batch], cap_mask[batch])
                loss = distillation_loss(student, teacher, cfg.loss)
                _check_finite(loss.item(), step)
                opt.zero_grad()
                tape.backward(loss)
            opt.step()
            report.losses.append(loss.item())
            step += 1
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    report.wall_time = time.time() - t0
    report.extra["heldout_final"] = heldout_loss()
    enc_hash_after = nets.ModelBundle(enc_frozen).param_hash("enc.")
    report.extra["encoder_hash_unchanged"] = enc_hash_before == enc_hash_after
    report.extra["trained_params"] = sorted(student_params)
    report.extra["graph_params"] = sorted(graph_params)
    report.extra["items_consumed"] = n_used
    report.extra["fields_read"] = sorted(audit.fields_read())

    adapter_bundle = nets.ModelBundle(
        student_params,
        {**arch.to_dict(), "kind": "adapter", "adapter": acfg.to_dict(), "loss": cfg.loss,
         "seed": cfg.seed, "train_config": cfg.to_dict(), "label": label},
    )
    ckpt = os.path.join(outdir, f"{label}.ckpt")
    adapter_bundle.save(ckpt)
    report.checkpoint = ckpt
    report.save(os.path.join(outdir, f"{label}_report.json"))
    return adapter_bundle, report, audit


# ---------------------------------------------------------------------------
# fine-tuning stages and token-conditioned baselines
# ---------------------------------------------------------------------------


def _supervised_caption_training(
    bundle: nets.ModelBundle,
    pools: dict,
    cfg: TrainConfig,
    label: str,
    use_adapter_prefix: bool,
    use_token_prefix: bool,
    trainable_prefixes: tuple,
):
    """Caption -> program cross-entropy training on the pair pool."""
    arch = bundle.arch_config()
    audit = datamod.DataAudit()
    pool = pools["pair"]
    n = len(pool.records)
    cap_ids, cap_mask = _caption_matrix(pool.records, range(n), pool, audit, arch.caption_len)
    prog_ids = [dsl.encode_program(audit.get(pool, i, "program")) for i in range(n)]
    lengths = [len(p) for p in prog_ids]

    bundle.set_trainable("", False)
    for prefix in trainable_prefixes:
        bundle.set_trainable(prefix, True)
    trainable = bundle.trainable_params()
    acfg = nets.AdapterConfig.from_dict(bundle.arch["adapter"]) if use_adapter_prefix else None
    opt = ad.Adam(trainable, lr=cfg.lr)
    report = TrainReport()
    t0 = time.time()
    step = 0
    for epoch in range(cfg.epochs):
        gen = stream(cfg.seed, "epochs", label, str(epoch))
        for batch in batched_indices(gen, n, cfg.batch_size, lengths):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            inp, tgt, w = program_batch([prog_ids[i] for i in batch])
            with ad.Tape() as tape:
                enc_prefix = None
                prefix_len = 0
                if use_adapter_prefix:
                    enc_prefix = nets.encode_caption_adapter(bundle.params, arch, acfg, cap_ids[batch], cap_mask[batch])
                    prefix_len += arch.n_patches
                tok_prefix = cap_ids[batch] if use_token_prefix else None
                tok_mask = cap_mask[batch] if use_token_prefix else None
                if use_token_prefix:
                    prefix_len += arch.caption_len
                logits = nets.decoder_forward(
                    bundle.params, arch, inp, enc_prefix=enc_prefix,
                    tok_prefix_ids=tok_prefix, tok_prefix_mask=tok_mask,
                )
                loss = _ce_over_sequence(logits, prefix_len, tgt, w)
                _check_finite(loss.item(), step)
                opt.zero_grad()
                tape.backward(loss)
            opt.step()
            report.losses.append(loss.item())
            step += 1
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    report.wall_time = time.time() - t0
    report.extra["fields_read"] = sorted(audit.fields_read())
    report.extra["pools_read"] = sorted({p for p, _ in audit.reads})
    report.extra["trained_params"] = sorted(trainable)
    bundle.set_trainable("", True)
    return report, audit


STAGE_DEFAULTS = {
    "i": {"epochs": 1, "lr": 1e-4},
    "ii": {"epochs": 1, "lr": 1e-4},
    "iii": {"epochs": 5, "lr": 5e-4},
}


def finetune(bundle: nets.ModelBundle, pools: dict, stage: str, cfg: TrainConfig, outdir: str,
             init_snapshot: str | None = None):
    """Fine-tuning stages over the aligned pair pool.

    (i) end-to-end CE with the adapter path active; (ii) adds the caption
    tokens as a second decoder prefix; (iii) resets the decoder to the
    init snapshot recorded by train_inverse, then trains with the inverse
    recipe. Stages are incremental: iii includes ii's caption path.
    """
    if stage not in ("i", "ii", "iii"):
        raise ContractError(f"unknown fine-tuning stage {stage!r}")
    if "adapter" not in bundle.arch:
        raise DependencyError("fine-tuning requires an assembled adapter model")
    os.makedirs(outdir, exist_ok=True)
    label = {"i": "tikzero_ft_i", "ii": "tikzero_ft_ii", "iii": "tikzero_star"}[stage]
    reset_hash = None
    if stage == "iii":
        if init_snapshot is None or not os.path.exists(init_snapshot or ""):
            raise DependencyError("stage iii requires the train_inverse init snapshot")
        arrays, _ = ad.load_checkpoint(init_snapshot)
        snap_dec = {k: v for k, v in arrays.items() if k.startswith("dec.")}
        for k, v in snap_dec.items():
            bundle.params[k] = Tensor(v.astype(np.float64), requires_grad=True)
        reset_hash = bundle.param_hash("dec.")
    report, audit = _supervised_caption_training(
        bundle, pools, cfg, label,
        use_adapter_prefix=True,
        use_token_prefix=stage in ("ii", "iii"),
        trainable_prefixes=("",),
    )
    if reset_hash is not None:
        report.extra["decoder_reset_hash"] = reset_hash
    bundle.arch.update({"variant": label, "stage": stage, "train_config": cfg.to_dict()})
    ckpt = os.path.join(outdir, f"{label}.ckpt")
    bundle.save(ckpt)
    report.checkpoint = ckpt
    report.save(os.path.join(outdir, f"{label}_report.json"))
    return bundle, report, audit


def train_e2e(init_kind: str, pools: dict, cfg: TrainConfig, outdir: str,
              inverse: nets.ModelBundle | None = None, arch: nets.ArchConfig | None = None):
    """Token-conditioned caption -> program training on the pair pool only."""
    if init_kind not in ("llm", "vlm"):
        raise ContractError(f"init must be llm or vlm, got {init_kind!r}")
    arch = arch or (inverse.arch_config() if inverse is not None else nets.ArchConfig())
    os.makedirs(outdir, exist_ok=True)
    variant = f"automatikz_{init_kind}"
    bundle = nets.assemble(variant, arch, cfg.seed, inverse=inverse)
    report, audit = _supervised_caption_training(
        bundle, pools, cfg, variant,
        use_adapter_prefix=False,
        use_token_prefix=True,
        trainable_prefixes=("dec.",),
    )
    bundle.arch["train_config"] = cfg.to_dict()
    ckpt = os.path.join(outdir, f"{variant}.ckpt")
    bundle.save(ckpt)
    report.checkpoint = ckpt
    report.save(os.path.join(outdir, f"{variant}_report.json"))
    return bundle, report, audit


# ---------------------------------------------------------------------------
# decontamination
# ---------------------------------------------------------------------------


def decontaminate(test_records: list, train_pools: list, n: int = 8, cutoff: int | None = None):
    """Drop test items sharing any program n-gram with training programs,
    or created at/before the cutoff. Returns (kept, report dict)."""
    if n < 2:
        raise ContractError("decontamination n-gram size must be >= 2")
    shingles = set()
    for pool in train_pools:
        for rec in pool.records:
            if rec.program:
                shingles |= dsl.program_ngrams(tuple(rec.program), n)
    kept = []
    removed_ngram = 0
    removed_cutoff = 0
    for rec in test_records:
        if cutoff is not None and rec.created_at <= cutoff:
            removed_cutoff += 1
            continue
        grams = dsl.program_ngrams(tuple(rec.program), n) if rec.program else set()
        if grams & shingles:
            removed_ngram += 1
            continue
        kept.append(rec)
    report = {
        "input": len(test_records),
        "kept": len(kept),
        "removed_ngram": removed_ngram,
        "removed_cutoff": removed_cutoff,
        "ngram": n,
    }
    return kept, report


# ---------------------------------------------------------------------------
# low-resource grid
# ---------------------------------------------------------------------------


def run_grid(pools: dict, inverse: nets.ModelBundle, base_cfg: TrainConfig, outdir: str,
             evaluate=None, fractions=GRID_FRACTIONS, intervals=GRID_INTERVALS):
    """Train one adapter per (data fraction, interval) cell and optionally
    evaluate each. Cells are independent given (seed, cell), so a parallel
    runner produces identical results; this loop runs them in order."""
    os.makedirs(outdir, exist_ok=True)
    cells = {}
    for frac in fractions:
        for k in intervals:
            cell_cfg = TrainConfig(
                epochs=base_cfg.epochs, lr=base_cfg.lr, batch_size=base_cfg.batch_size,
                seed=base_cfg.seed, loss=base_cfg.loss, data_fraction=frac, interval=k,
                max_steps=base_cfg.max_steps,
            )
            cell_dir = os.path.join(outdir, f"cell_d{frac}_k{k}")
            label = f"grid_d{frac}_k{k}"
            adapter, report, _ = distill_adapter(pools, inverse, cell_cfg, cell_dir, label=label)
            cell = {"report": report, "checkpoint": report.checkpoint, "adapter": adapter}
            if evaluate is not None:
                cell["metrics"] = evaluate(adapter, cell_cfg)
            cells[(frac, k)] = cell
    return cells
