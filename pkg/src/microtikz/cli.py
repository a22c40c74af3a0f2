"""Command-line front door.

Subcommands: gen-data, train, finetune, eval, grid, bws-score, redact, emd.
Every run echoes its effective config into the output directory and writes
a manifest (config hash, content hashes of inputs, output paths, wall
time) atomically at the end. All randomness flows from --seed through
named substreams. Exit codes: 0 success, 1 usage/contract, 2 missing
dependency, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import data as datamod
from . import dsl, harness, metrics, nets, train
from . import emd as emdmod
from .errors import ContractError, DependencyError, MicrotikzError

# ---------------------------------------------------------------------------
# manifests / hashing / config plumbing
# ---------------------------------------------------------------------------


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_manifest(outdir: str, command: str, config: dict, inputs: dict, outputs: list,
                   wall_time: float, predecessors: list | None = None) -> str:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {name: {"path": p, "sha256": _sha256_file(p)} for name, p in inputs.items() if p},
        "outputs": {os.path.basename(p): {"path": p, "sha256": _sha256_file(p)} for p in outputs},
        "wall_time": wall_time,
    }
    if predecessors:
        manifest["predecessors"] = predecessors
    path = os.path.join(outdir, f"manifest_{command.replace('-', '_')}.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    os.replace(tmp, path)
    return path


def echo_config(outdir: str, command: str, config: dict):
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, f"config_{command.replace('-', '_')}.json"), "w") as fh:
        json.dump(config, fh, sort_keys=True, indent=1)


def merge_config(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    path = getattr(args, "config", None)
    if path:
        with open(path) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key in defaults:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            merged[key] = value
    return merged


def workers_from_env() -> int:
    try:
        return max(1, int(os.environ.get("MICROTIKZ_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# SVG emission (textual, dependency-free)
# ---------------------------------------------------------------------------


def svg_loss_curve(losses, path: str, title: str = "training loss"):
    w, h, pad = 640, 320, 40
    n = max(len(losses), 2)
    lo, hi = min(losses), max(losses)
    span = (hi - lo) or 1.0
    pts = " ".join(
        f"{pad + i * (w - 2 * pad) / (n - 1):.1f},{h - pad - (v - lo) * (h - 2 * pad) / span:.1f}"
        for i, v in enumerate(losses)
    )
    body = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'
        f'<rect width="{w}" height="{h}" fill="white"/>'
        f'<text x="{w/2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>'
        f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{pts}"/>'
        f'<text x="{pad}" y="{h-10}" font-size="11">min {lo:.4f}</text>'
        f'<text x="{w-pad}" y="{h-10}" text-anchor="end" font-size="11">max {hi:.4f}</text>'
        "</svg>"
    )
    with open(path, "w") as fh:
        fh.write(body)


def svg_bar_chart(labels, values, path: str, title: str = "AVG"):
    w, h, pad = 640, 320, 50
    n = len(labels)
    hi = max(max(values), 1e-9)
    bw = (w - 2 * pad) / max(n, 1)
    bars = []
    for i, (label, v) in enumerate(zip(labels, values)):
        bh = (h - 2 * pad) * v / hi
        x = pad + i * bw
        bars.append(
            f'<rect x="{x+3:.1f}" y="{h-pad-bh:.1f}" width="{bw-6:.1f}" height="{bh:.1f}" fill="steelblue"/>'
            f'<text x="{x+bw/2:.1f}" y="{h-pad-bh-4:.1f}" text-anchor="middle" font-size="10">{v:.1f}</text>'
            f'<text x="{x+bw/2:.1f}" y="{h-pad+12:.1f}" text-anchor="middle" font-size="9">{label}</text>'
        )
    body = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'
        f'<rect width="{w}" height="{h}" fill="white"/>'
        f'<text x="{w/2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>'
        + "".join(bars)
        + "</svg>"
    )
    with open(path, "w") as fh:
        fh.write(body)


def svg_heatmap(values: np.ndarray, row_labels, col_labels, path: str, title: str):
    cell, pad = 90, 70
    rows, cols = values.shape
    w, h = pad + cols * cell + 20, pad + rows * cell + 20
    lo, hi = values.min(), values.max()
    span = (hi - lo) or 1.0
    cells = []
    for i in range(rows):
        for j in range(cols):
            t = (values[i, j] - lo) / span
            shade = int(245 - 160 * t)
            x, y = pad + j * cell, pad + i * cell
            cells.append(
                f'<rect x="{x}" y="{y}" width="{cell-2}" height="{cell-2}" fill="rgb({shade},{shade},255)"/>'
                f'<text x="{x+cell/2:.0f}" y="{y+cell/2:.0f}" text-anchor="middle" font-size="12">{values[i,j]:.1f}</text>'
            )
    for j, cl in enumerate(col_labels):
        cells.append(f'<text x="{pad+j*cell+cell/2:.0f}" y="{pad-10}" text-anchor="middle" font-size="11">{cl}</text>')
    for i, rl in enumerate(row_labels):
        cells.append(f'<text x="{pad-8}" y="{pad+i*cell+cell/2:.0f}" text-anchor="end" font-size="11">{rl}</text>')
    body = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'
        f'<rect width="{w}" height="{h}" fill="white"/>'
        f'<text x="{w/2:.0f}" y="24" text-anchor="middle" font-size="14">{title}</text>'
        + "".join(cells)
        + "</svg>"
    )
    with open(path, "w") as fh:
        fh.write(body)


# ---------------------------------------------------------------------------
# shared pipeline helpers
# ---------------------------------------------------------------------------


def _require(path: str | None, what: str, hint: str) -> str:
    if not path or not os.path.exists(path):
        raise DependencyError(f"missing {what} ({path!r}); run `{hint}` first")
    return path


def load_corpus(data_dir: str) -> dict:
    _require(os.path.join(data_dir, "prog.jsonl"), "dataset", "microtikz gen-data")
    return datamod.load_pools(data_dir)


def fit_clip_embedders(inverse: nets.ModelBundle, pools: dict, n_items: int, cache_path: str | None = None):
    """Fit (or load) the image->caption-bag alignment on the capimg pool."""
    if cache_path and os.path.exists(cache_path):
        return metrics.ClipEmbedders(np.load(cache_path)["alignment"])
    arch = inverse.arch_config()
    records = pools["capimg"].records[:n_items]
    images = np.stack([r.image_u8 for r in records]).astype(np.float64) / 255.0
    pooled = []
    for lo in range(0, len(images), 64):
        pooled.append(nets.encode_image(inverse.params, arch, images[lo : lo + 64]).data.mean(axis=1))
    pooled = np.concatenate(pooled, axis=0)
    embedders = metrics.ClipEmbedders.fit(pooled, [r.caption for r in records])
    if cache_path:
        np.savez(cache_path, alignment=embedders.alignment)
    return embedders


def build_scorer(inverse: nets.ModelBundle, pools: dict, test_records, clip_fit_items: int,
                 clip_cache: str | None = None) -> harness.Scorer:
    train_programs = [r.program for r in pools["prog"].records] + [r.program for r in pools["pair"].records]
    embedders = fit_clip_embedders(inverse, pools, clip_fit_items, clip_cache)
    return harness.Scorer(inverse, test_records, train_programs, embedders)


def eval_table_csv(result: harness.EvalResult, order: list) -> str:
    cols = [name for name, _ in harness.METRIC_COLUMNS]
    lines = ["system," + ",".join(cols) + ",AVG,CLIP_RED,RATIO"]
    for name in order:
        row = result.table.rows[name]
        ratio = f"{result.ratios[name]:.3f}" if name in result.ratios else ""
        lines.append(
            name + "," + ",".join(f"{v:.3f}" for v in row)
            + f",{result.avgs[name]:.3f},{result.clip_redacted[name]:.3f},{ratio}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

GEN_DEFAULTS = {"seed": 0, "n_prog": 10000, "n_capimg": 10000, "n_pair": 1000, "n_test": 500}


def cmd_gen_data(args) -> int:
    cfg = merge_config(GEN_DEFAULTS, args)
    outdir = args.out
    echo_config(outdir, "gen-data", cfg)
    t0 = time.time()
    pools = datamod.gen_corpus(
        datamod.CorpusConfig(cfg["n_prog"], cfg["n_capimg"], cfg["n_pair"], cfg["n_test"]),
        cfg["seed"],
    )
    paths = datamod.write_pools(pools, outdir)
    for name in ("prog", "capimg", "pair", "test"):
        print(f"{name}: {len(pools[name].records)} records -> {paths[name]}")
    print(f"cutoff: {pools['cutoff']}")
    write_manifest(outdir, "gen-data", cfg, {}, list(paths.values()), time.time() - t0)
    return 0


TRAIN_DEFAULTS = {
    "seed": 0, "phase": "inverse", "epochs": None, "lr": None, "batch_size": 64,
    "loss": "cos", "interval": 1, "fraction": 1.0, "init": "llm", "max_steps": None,
    "base_variant": False,
}
PHASE_RECIPES = {"inverse": (5, 5e-4), "adapter": (3, 1e-3), "e2e": (5, 5e-4)}


def cmd_train(args) -> int:
    cfg = merge_config(TRAIN_DEFAULTS, args)
    phase = cfg["phase"]
    if phase not in PHASE_RECIPES:
        raise ContractError(f"unknown phase {phase!r}")
    epochs, lr = PHASE_RECIPES[phase]
    cfg["epochs"] = cfg["epochs"] or epochs
    cfg["lr"] = cfg["lr"] or lr
    outdir = args.out
    echo_config(outdir, "train", cfg)
    pools = load_corpus(args.data)
    tc = train.TrainConfig(
        epochs=cfg["epochs"], lr=cfg["lr"], batch_size=cfg["batch_size"], seed=cfg["seed"],
        loss=cfg["loss"], data_fraction=cfg["fraction"], interval=cfg["interval"],
        max_steps=cfg["max_steps"],
    )
    t0 = time.time()
    inputs = {name: os.path.join(args.data, f"{name}.jsonl") for name in ("prog", "capimg", "pair", "test")}
    if phase == "inverse":
        bundle, report, _ = train.train_inverse(pools, tc, outdir)
        label = "inverse"
    else:
        inverse_path = args.inverse or os.path.join(outdir, "inverse.ckpt")
        _require(inverse_path, "inverse checkpoint", "microtikz train --phase inverse")
        inverse = nets.ModelBundle.load(inverse_path)
        inputs["inverse"] = inverse_path
        if phase == "adapter":
            bundle, report, _ = train.distill_adapter(
                pools, inverse, tc, outdir,
                gate="none" if cfg["base_variant"] else "sigmoid",
                with_probe=not cfg["base_variant"],
            )
            label = bundle.arch["label"]
        else:
            if cfg["init"] == "vlm":
                bundle, report, _ = train.train_e2e("vlm", pools, tc, outdir, inverse=inverse)
            else:
                bundle, report, _ = train.train_e2e("llm", pools, tc, outdir, inverse=inverse)
            label = f"automatikz_{cfg['init']}"
    svg = os.path.join(outdir, f"{label}_loss.svg")
    svg_loss_curve(report.losses, svg, title=f"{label} loss")
    outputs = [report.checkpoint, svg]
    if report.init_snapshot:
        outputs.append(report.init_snapshot)
    write_manifest(outdir, "train", cfg, inputs, outputs, time.time() - t0)
    print(f"trained {label}: final loss {report.losses[-1]:.4f} -> {report.checkpoint}")
    return 0


FINETUNE_DEFAULTS = {"seed": 0, "stage": "i", "epochs": None, "lr": None, "batch_size": 64, "max_steps": None}


def cmd_finetune(args) -> int:
    cfg = merge_config(FINETUNE_DEFAULTS, args)
    stage = cfg["stage"]
    if stage not in train.STAGE_DEFAULTS:
        raise ContractError(f"unknown stage {stage!r}")
    cfg["epochs"] = cfg["epochs"] or train.STAGE_DEFAULTS[stage]["epochs"]
    cfg["lr"] = cfg["lr"] or train.STAGE_DEFAULTS[stage]["lr"]
    outdir = args.out
    echo_config(outdir, "finetune", cfg)
    pools = load_corpus(args.data)
    inverse_path = _require(args.inverse, "inverse checkpoint", "microtikz train --phase inverse")
    adapter_path = _require(args.adapter, "adapter checkpoint", "microtikz train --phase adapter")
    snapshot = args.snapshot or os.path.join(os.path.dirname(inverse_path), "inverse_init.ckpt")
    inverse = nets.ModelBundle.load(inverse_path, trainable=True)
    adapter = nets.ModelBundle.load(adapter_path, trainable=True)
    arch = inverse.arch_config()
    acfg = adapter.adapter_config()
    bundle = nets.assemble("tikzero_cos", arch, cfg["seed"], inverse=inverse, adapter=adapter, acfg=acfg)
    bundle.set_trainable("", True)
    tc = train.TrainConfig(
        epochs=cfg["epochs"], lr=cfg["lr"], batch_size=cfg["batch_size"], seed=cfg["seed"],
        stage=stage, max_steps=cfg["max_steps"],
    )
    t0 = time.time()
    bundle, report, _ = train.finetune(
        bundle, pools, stage, tc, outdir,
        init_snapshot=snapshot if stage == "iii" else None,
    )
    label = bundle.arch["variant"]
    svg = os.path.join(outdir, f"{label}_loss.svg")
    svg_loss_curve(report.losses, svg, title=f"{label} loss")
    predecessors = []
    for prior in ("i", "ii", "iii"):
        if prior == stage:
            break
        prior_label = {"i": "tikzero_ft_i", "ii": "tikzero_ft_ii"}[prior]
        prior_ckpt = os.path.join(outdir, f"{prior_label}.ckpt")
        if os.path.exists(prior_ckpt):
            predecessors.append(prior_ckpt)
    inputs = {"inverse": inverse_path, "adapter": adapter_path}
    if stage == "iii":
        inputs["snapshot"] = snapshot
    write_manifest(outdir, "finetune", cfg, inputs, [report.checkpoint, svg], time.time() - t0,
                   predecessors=predecessors)
    print(f"fine-tuned stage {stage} -> {label}: {report.checkpoint}")
    return 0


EVAL_DEFAULTS = {
    "seed": 0, "temperature": 0.8, "top_p": 0.95, "max_resamples": 4,
    "items": None, "clip_fit_items": 4000,
}


def load_systems(path: str):
    with open(path) as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or not entries:
        raise ContractError("systems file must be a non-empty JSON array")
    return entries


def build_systems(entries, default_inverse: str | None):
    systems = []
    by_name = {}
    inverse_cache = {}

    def load_inverse(path):
        if path not in inverse_cache:
            inverse_cache[path] = nets.ModelBundle.load(_require(path, "inverse checkpoint", "microtikz train --phase inverse"))
        return inverse_cache[path]

    for entry in entries:
        name = entry["name"]
        kind = entry.get("kind", "bundle")
        if kind == "bundle":
            ckpt = _require(entry.get("checkpoint"), f"checkpoint for {name}", "microtikz train")
            bundle = nets.ModelBundle.load(ckpt)
            inverse = None
            if bundle.arch.get("kind") == "adapter":
                inverse = load_inverse(entry.get("inverse") or default_inverse)
            system = harness.system_from_bundles(name, bundle, inverse=inverse,
                                                 conditioning=entry.get("conditioning"))
        elif kind in ("null", "shuffled", "oracle"):
            base_name = entry.get("base")
            if kind == "oracle" and base_name is None:
                base = systems[0] if systems else None
            else:
                base = by_name.get(base_name)
            if base is None:
                raise ContractError(f"control {name!r} references unknown base {base_name!r}")
            system = harness.control_system(name, kind, base)
        else:
            raise ContractError(f"unknown system kind {kind!r}")
        systems.append(system)
        by_name[name] = system
    return systems


def cmd_eval(args) -> int:
    cfg = merge_config(EVAL_DEFAULTS, args)
    outdir = args.out
    echo_config(outdir, "eval", cfg)
    pools = load_corpus(args.data)
    entries = load_systems(args.systems)
    inverse_path = args.inverse or next(
        (e.get("inverse") for e in entries if e.get("inverse")), None
    )
    inverse = nets.ModelBundle.load(
        _require(inverse_path, "inverse checkpoint (scorer)", "microtikz train --phase inverse")
    )
    systems = build_systems(entries, inverse_path)
    t0 = time.time()
    kept, decon_report = train.decontaminate(
        pools["test"].records, [pools["prog"], pools["pair"]], n=8, cutoff=pools["cutoff"]
    )
    if cfg["items"]:
        kept = kept[: cfg["items"]]
    scorer = build_scorer(inverse, pools, kept, cfg["clip_fit_items"],
                          clip_cache=os.path.join(outdir, "clip_alignment.npz"))
    result = harness.evaluate_systems(
        systems, scorer, cfg["seed"], cfg["temperature"], cfg["top_p"], cfg["max_resamples"]
    )
    order = [s.name for s in systems]
    csv_text = eval_table_csv(result, order)
    csv_path = os.path.join(outdir, "eval_report.csv")
    with open(csv_path, "w") as fh:
        fh.write(csv_text)
    json_path = os.path.join(outdir, "eval_report.json")
    payload = {
        "columns": [list(c) for c in result.table.columns],
        "rows": result.table.rows,
        "avg": result.avgs,
        "clip_redacted": result.clip_redacted,
        "ratio": result.ratios,
        "ratio_excluded": result.ratio_excluded,
        "constant_columns": result.constant_columns,
        "decontamination": decon_report,
        "items": len(kept),
    }
    with open(json_path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    svg = os.path.join(outdir, "eval_avg.svg")
    svg_bar_chart(order, [result.avgs[n] for n in order], svg, title="min-max AVG (x100)")
    write_manifest(
        outdir, "eval", cfg,
        {"systems": args.systems, "inverse": inverse_path},
        [csv_path, json_path, svg], time.time() - t0,
    )
    print(csv_text, end="")
    return 0


GRID_DEFAULTS = {
    "seed": 0, "epochs": 3, "lr": 1e-3, "batch_size": 64, "loss": "cos",
    "eval_items": 150, "clip_fit_items": 4000, "max_steps": None,
    "temperature": 0.8, "top_p": 0.95, "max_resamples": 4,
}


def _grid_cell_payload(data_dir, inverse_path, outdir, cfg, frac, interval):
    return {
        "data": data_dir, "inverse": inverse_path, "outdir": outdir,
        "cfg": cfg, "fraction": frac, "interval": interval,
    }


def _grid_cell_worker(payload: dict) -> dict:
    cfg = payload["cfg"]
    pools = datamod.load_pools(payload["data"])
    inverse = nets.ModelBundle.load(payload["inverse"])
    frac, interval = payload["fraction"], payload["interval"]
    cell_dir = os.path.join(payload["outdir"], f"cell_d{frac}_k{interval}")
    tc = train.TrainConfig(
        epochs=cfg["epochs"], lr=cfg["lr"], batch_size=cfg["batch_size"], seed=cfg["seed"],
        loss=cfg["loss"], data_fraction=frac, interval=interval, max_steps=cfg["max_steps"],
    )
    label = f"grid_d{frac}_k{interval}"
    adapter, report, _ = train.distill_adapter(pools, inverse, tc, cell_dir, label=label)
    kept, _ = train.decontaminate(pools["test"].records, [pools["prog"], pools["pair"]],
                                  n=8, cutoff=pools["cutoff"])
    kept = kept[: cfg["eval_items"]]
    scorer = build_scorer(inverse, pools, kept, cfg["clip_fit_items"],
                          clip_cache=os.path.join(payload["outdir"], "clip_alignment.npz"))
    system = harness.system_from_bundles(label, adapter, inverse=inverse, conditioning="adapter")
    outs = harness.generate_outputs(system, kept, cfg["seed"], cfg["temperature"],
                                    cfg["top_p"], cfg["max_resamples"])
    row = scorer.score_system(outs)
    return {"fraction": frac, "interval": interval, "metrics": row,
            "checkpoint": report.checkpoint, "items_consumed": report.extra["items_consumed"]}


def cmd_grid(args) -> int:
    cfg = merge_config(GRID_DEFAULTS, args)
    outdir = args.out
    echo_config(outdir, "grid", cfg)
    inverse_path = _require(args.inverse, "inverse checkpoint", "microtikz train --phase inverse")
    _require(os.path.join(args.data, "prog.jsonl"), "dataset", "microtikz gen-data")
    t0 = time.time()
    # Fit the CLIP alignment once; cells reuse the cached file.
    pools = datamod.load_pools(args.data)
    inverse = nets.ModelBundle.load(inverse_path)
    fit_clip_embedders(inverse, pools, cfg["clip_fit_items"],
                       cache_path=os.path.join(outdir, "clip_alignment.npz"))
    payloads = [
        _grid_cell_payload(args.data, inverse_path, outdir, cfg, frac, interval)
        for frac in train.GRID_FRACTIONS
        for interval in train.GRID_INTERVALS
    ]
    workers = workers_from_env()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_grid_cell_worker, payloads))
    else:
        cells = [_grid_cell_worker(p) for p in payloads]
    table = metrics.MetricTable(list(harness.METRIC_COLUMNS))
    for cell in cells:
        name = f"d{cell['fraction']}_k{cell['interval']}"
        table.add(name, [cell["metrics"][c] for c, _ in harness.METRIC_COLUMNS])
    avgs, constant_cols = metrics.minmax_avg(table)
    rows = sorted({c["fraction"] for c in cells}, reverse=True)
    kcols = sorted({c["interval"] for c in cells})
    heat = np.array([[avgs[f"d{fr}_k{k}"] for k in kcols] for fr in rows])
    csv_lines = ["fraction,interval," + ",".join(c for c, _ in harness.METRIC_COLUMNS) + ",AVG"]
    for cell in cells:
        name = f"d{cell['fraction']}_k{cell['interval']}"
        csv_lines.append(
            f"{cell['fraction']},{cell['interval']},"
            + ",".join(f"{cell['metrics'][c]:.3f}" for c, _ in harness.METRIC_COLUMNS)
            + f",{avgs[name]:.3f}"
        )
    csv_path = os.path.join(outdir, "grid_report.csv")
    with open(csv_path, "w") as fh:
        fh.write("\n".join(csv_lines) + "\n")
    json_path = os.path.join(outdir, "grid_report.json")
    with open(json_path, "w") as fh:
        json.dump({"cells": cells, "avg": avgs, "constant_columns": constant_cols},
                  fh, sort_keys=True, indent=1, default=str)
    svg = os.path.join(outdir, "grid_avg.svg")
    svg_heatmap(heat, [f"{fr*100:g}%" for fr in rows], [f"k={k}" for k in kcols], svg,
                "AVG by data fraction x cross-attention interval")
    write_manifest(outdir, "grid", cfg, {"inverse": inverse_path},
                   [csv_path, json_path, svg], time.time() - t0)
    print("\n".join(csv_lines))
    return 0


BWS_DEFAULTS = {"seed": 0, "rounds": 20}


def cmd_bws_score(args) -> int:
    cfg = merge_config(BWS_DEFAULTS, args)
    outdir = args.out
    echo_config(outdir, "bws-score", cfg)
    annotations = []
    with open(args.annotations) as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                annotations.append(metrics.BwsAnnotation(
                    items=tuple(obj["tuple"]), best=obj["best"], worst=obj["worst"],
                    annotator=str(obj.get("annotator", "")),
                ))
    t0 = time.time()
    scores = metrics.bws_scores(annotations)
    shr, skipped = metrics.split_half_reliability(annotations, seed=cfg["seed"], rounds=cfg["rounds"])
    out_path = os.path.join(outdir, "bws_scores.json")
    with open(out_path, "w") as fh:
        json.dump({"scores": scores, "shr": shr, "skipped_rounds": skipped}, fh, sort_keys=True, indent=1)
    for item in sorted(scores):
        print(f"{item}: {scores[item]:+.4f}")
    print(f"SHR: {shr:.4f} ({skipped} degenerate rounds skipped)")
    write_manifest(outdir, "bws-score", cfg, {"annotations": args.annotations}, [out_path], time.time() - t0)
    return 0


def cmd_redact(args) -> int:
    pool = datamod.read_pool(args.input)
    redacted = []
    for rec in pool.records:
        new = datamod.Record(caption=rec.caption, program=rec.program, image_u8=rec.image_u8,
                             created_at=rec.created_at)
        if rec.program is not None:
            new.program = dsl.rot13_redact(rec.program)
            if rec.image_u8 is not None:
                new.image_u8 = dsl.image_to_u8(dsl.rasterize(new.program))
        redacted.append(new)
    datamod.write_pool(datamod.Pool("redacted", redacted), args.output)
    print(f"redacted {len(redacted)} records -> {args.output}")
    return 0


def cmd_emd(args) -> int:
    def load_vectors(path):
        with open(path) as fh:
            arr = np.asarray(json.load(fh), dtype=np.float64)
        if arr.ndim != 2:
            raise ContractError(f"{path}: expected a JSON array of float vectors")
        return arr

    x = load_vectors(args.x)
    y = load_vectors(args.y)
    value, flow = emdmod.emd(x, y, args.mode)
    print(f"{value:.9f}")
    if args.flow_out:
        np.savetxt(args.flow_out, flow, delimiter=",", fmt="%.9g")
        print(f"flow -> {args.flow_out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # Exit code 1 for usage errors (argparse defaults to 2, reserved here
        # for missing dependencies).
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="microtikz", description="text-guided micro graphics-program synthesis")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_data=True):
        p.add_argument("--config", help="JSON config file; flags override file values")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")
        if with_data:
            p.add_argument("--data", required=True, help="dataset directory from gen-data")

    p = sub.add_parser("gen-data", help="generate the four dataset pools")
    common(p, with_data=False)
    for flag in ("n-prog", "n-capimg", "n-pair", "n-test"):
        p.add_argument(f"--{flag}", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train inverse model, adapter, or e2e baseline")
    common(p)
    p.add_argument("--phase", choices=("inverse", "adapter", "e2e"))
    p.add_argument("--loss", choices=("cos", "mse"))
    p.add_argument("--init", choices=("llm", "vlm"))
    p.add_argument("--inverse", help="inverse checkpoint (adapter/e2e phases)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--interval", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--base-variant", action="store_const", const=True,
                   help="train the no-probe/no-gate adapter ablation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune the assembled adapter model on pairs")
    common(p)
    p.add_argument("--stage", choices=("i", "ii", "iii"))
    p.add_argument("--adapter", required=True, help="trained adapter checkpoint")
    p.add_argument("--inverse", required=True, help="trained inverse checkpoint")
    p.add_argument("--snapshot", help="inverse init snapshot (stage iii)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate systems on the held-out test set")
    common(p)
    p.add_argument("--systems", required=True, help="JSON array of system specs")
    p.add_argument("--inverse", help="scorer inverse checkpoint")
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-p", dest="top_p", type=float)
    p.add_argument("--max-resamples", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--clip-fit-items", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="low-resource grid: data fraction x interval")
    common(p)
    p.add_argument("--inverse", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--loss", choices=("cos", "mse"))
    p.add_argument("--eval-items", type=int)
    p.add_argument("--clip-fit-items", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("bws-score", help="score best-worst-scaling annotations")
    common(p, with_data=False)
    p.add_argument("--annotations", required=True, help="JSONL of {tuple,best,worst,annotator}")
    p.add_argument("--rounds", type=int)
    p.set_defaults(func=cmd_bws_score)

    p = sub.add_parser("redact", help="ROT13-redact TEXT labels in a dataset file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_redact)

    p = sub.add_parser("emd", help="exact EMD between two embedding files")
    p.add_argument("--x", required=True, help="JSON array of float vectors")
    p.add_argument("--y", required=True)
    p.add_argument("--mode", choices=emdmod.MODES, default="cos_dist")
    p.add_argument("--flow-out", help="write the optimal flow as CSV")
    p.set_defaults(func=cmd_emd)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MicrotikzError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
