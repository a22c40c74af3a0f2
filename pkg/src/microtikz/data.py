"""Corpus generation and JSONL dataset I/O.

Four pools are emitted, disjoint by scene identity:

* ``prog``    - programs only (inverse-graphics training).
* ``capimg``  - caption + image only (adapter distillation).
* ``pair``    - caption + program + image (the aligned intersection).
* ``test``    - held-out caption + program + image; synthetic timestamps
  exceed the training cut-off and no program 8-gram occurs in any
  training program.

Dataset files are JSON Lines with fields ``caption`` / ``program`` /
``image`` (base64 of row-major u8 intensities) / ``created_at``; exactly
the pool-appropriate fields are non-null.
"""

from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import dsl
from .errors import GenerationError
from .rng import stream

NGRAM_DEFAULT = 8
_MAX_ROUNDS = 500


@dataclass
class Record:
    caption: list | None = None
    program: list | None = None
    image_u8: np.ndarray | None = None
    created_at: int = 0


@dataclass
class Pool:
    name: str
    records: list


@dataclass
class CorpusConfig:
    n_prog: int = 10000
    n_capimg: int = 10000
    n_pair: int = 1000
    n_test: int = 500
    ngram: int = NGRAM_DEFAULT


def random_scene(gen: np.random.Generator) -> list:
    """Sample a 1..6 primitive scene; TEXT labels stay fully on canvas."""
    k = int(gen.choice(np.arange(1, 7), p=[0.25, 0.25, 0.2, 0.15, 0.1, 0.05]))
    scale = dsl.CANVAS // dsl.GRID
    prims = []
    for _ in range(k):
        kind = str(gen.choice(dsl.COMMANDS, p=[0.30, 0.25, 0.25, 0.20]))
        color = str(gen.choice(dsl.COLORS))
        if kind == "LINE":
            x1, y1, x2, y2 = (int(v) for v in gen.integers(0, dsl.GRID, 4))
            prims.append(dsl.Primitive(kind, (x1, y1, x2, y2), color))
        elif kind == "RECT":
            x1 = int(gen.integers(0, dsl.GRID - 1))
            y1 = int(gen.integers(0, dsl.GRID - 1))
            x2 = int(gen.integers(x1 + 1, dsl.GRID))
            y2 = int(gen.integers(y1 + 1, dsl.GRID))
            prims.append(dsl.Primitive(kind, (x1, y1, x2, y2), color))
        elif kind == "CIRCLE":
            r = int(gen.integers(1, 5))
            cx = int(gen.integers(0, dsl.GRID))
            cy = int(gen.integers(0, dsl.GRID))
            prims.append(dsl.Primitive(kind, (cx, cy, r), color))
        else:
            length = int(gen.integers(1, 5))
            xmax = (dsl.CANVAS - 6 * length) // scale
            x = int(gen.integers(0, xmax + 1))
            y = int(gen.integers(0, (dsl.CANVAS - 7) // scale + 1))
            label = "".join(gen.choice(list(dsl.LABEL_CHARS), length))
            prims.append(dsl.Primitive(kind, (x, y), color, label))
    return prims


def _canon(scene) -> str:
    return " ".join(dsl.serialize(scene))


def gen_corpus(cfg: CorpusConfig, seed: int) -> dict:
    """Generate all four pools.

    Scenes are proposed from per-(pool, index, round) streams and resolved
    in index order, so a parallel proposer agrees bit-exactly with this
    serial loop. Raises :class:`GenerationError` when the requested sizes
    cannot be met at the requested diversity.
    """
    for name, n in (("prog", cfg.n_prog), ("capimg", cfg.n_capimg), ("pair", cfg.n_pair), ("test", cfg.n_test)):
        if n <= 0:
            raise GenerationError(f"pool {name} must have positive size, got {n}")
    seen = set()
    train_shingles = set()
    pools = {}

    def fill(pool_name, count, *, want_clean=False):
        scenes = [None] * count
        pending = list(range(count))
        rnd = 0
        while pending:
            if rnd >= _MAX_ROUNDS:
                raise GenerationError(
                    f"pool {pool_name!r}: could not place {len(pending)} items after {rnd} rounds"
                )
            still = []
            for i in pending:
                gen = stream(seed, "corpus", pool_name, str(i), str(rnd))
                scene = random_scene(gen)
                canon = _canon(scene)
                ok = canon not in seen
                if ok and want_clean:
                    toks = tuple(dsl.serialize(scene))
                    grams = dsl.program_ngrams(toks, cfg.ngram)
                    ok = not (grams & train_shingles)
                if ok:
                    seen.add(canon)
                    scenes[i] = scene
                else:
                    still.append(i)
            pending = still
            rnd += 1
        return scenes

    def make_records(pool_name, scenes, *, caption, program, image, timestamps):
        out = []
        for i, scene in enumerate(scenes):
            gen = stream(seed, "caption", pool_name, str(i))
            rec = Record(created_at=timestamps(i, gen))
            if program:
                rec.program = dsl.serialize(scene)
            if caption:
                rec.caption = dsl.caption_of(scene, gen)
            if image:
                rec.image_u8 = dsl.image_to_u8(dsl.rasterize(scene))
            out.append(rec)
        return out

    def train_ts(i, gen):
        return int(gen.integers(0, 1_000_000))

    prog_scenes = fill("prog", cfg.n_prog)
    capimg_scenes = fill("capimg", cfg.n_capimg)
    pair_scenes = fill("pair", cfg.n_pair)
    for scene in prog_scenes + pair_scenes:
        train_shingles |= dsl.program_ngrams(tuple(dsl.serialize(scene)), cfg.ngram)
    test_scenes = fill("test", cfg.n_test, want_clean=True)

    pools["prog"] = Pool("prog", make_records("prog", prog_scenes, caption=False, program=True, image=False, timestamps=train_ts))
    pools["capimg"] = Pool("capimg", make_records("capimg", capimg_scenes, caption=True, program=False, image=True, timestamps=train_ts))
    pools["pair"] = Pool("pair", make_records("pair", pair_scenes, caption=True, program=True, image=True, timestamps=train_ts))
    cutoff = max(r.created_at for p in ("prog", "capimg", "pair") for r in pools[p].records) + 1
    pools["test"] = Pool(
        "test",
        make_records("test", test_scenes, caption=True, program=True, image=True, timestamps=lambda i, gen: 2_000_000 + i),
    )
    pools["cutoff"] = cutoff
    return pools


# ---------------------------------------------------------------------------
# JSONL I/O
# ---------------------------------------------------------------------------


def _rec_to_json(rec: Record) -> dict:
    img = None
    if rec.image_u8 is not None:
        img = base64.b64encode(rec.image_u8.tobytes()).decode("ascii")
    return {"caption": rec.caption, "program": rec.program, "image": img, "created_at": rec.created_at}


def _rec_from_json(obj: dict) -> Record:
    img = None
    if obj.get("image") is not None:
        raw = np.frombuffer(base64.b64decode(obj["image"]), dtype=np.uint8)
        img = raw.reshape(dsl.CANVAS, dsl.CANVAS)
    return Record(
        caption=obj.get("caption"),
        program=obj.get("program"),
        image_u8=img,
        created_at=int(obj.get("created_at", 0)),
    )


def write_pool(pool: Pool, path: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        for rec in pool.records:
            fh.write(json.dumps(_rec_to_json(rec), sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_pool(path: str, name: str | None = None) -> Pool:
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(_rec_from_json(json.loads(line)))
    return Pool(name or os.path.splitext(os.path.basename(path))[0], records)


def write_pools(pools: dict, outdir: str) -> dict:
    os.makedirs(outdir, exist_ok=True)
    paths = {}
    for name in ("prog", "capimg", "pair", "test"):
        path = os.path.join(outdir, f"{name}.jsonl")
        write_pool(pools[name], path)
        paths[name] = path
    with open(os.path.join(outdir, "corpus_meta.json"), "w") as fh:
        json.dump({"cutoff": pools["cutoff"]}, fh, sort_keys=True)
    return paths


def load_pools(outdir: str) -> dict:
    pools = {}
    for name in ("prog", "capimg", "pair", "test"):
        pools[name] = read_pool(os.path.join(outdir, f"{name}.jsonl"), name)
    with open(os.path.join(outdir, "corpus_meta.json")) as fh:
        pools["cutoff"] = json.load(fh)["cutoff"]
    return pools


# ---------------------------------------------------------------------------
# field-read audit (zero-shot data contract)
# ---------------------------------------------------------------------------


@dataclass
class DataAudit:
    """Records which fields each training phase read from which record."""

    reads: dict = field(default_factory=dict)

    def get(self, pool: Pool, idx: int, field_name: str):
        self.reads.setdefault((pool.name, idx), set()).add(field_name)
        return getattr(pool.records[idx], {"image": "image_u8"}.get(field_name, field_name))

    def fields_read(self) -> set:
        out = set()
        for fields in self.reads.values():
            out |= fields
        return out

    def merged(self, other: "DataAudit") -> "DataAudit":
        merged = DataAudit()
        for audit in (self, other):
            for key, fields in audit.reads.items():
                merged.reads.setdefault(key, set()).update(fields)
        return merged

    def caption_program_cooccurrence(self) -> list:
        """Records from which both a caption and a program were read."""
        return [key for key, fields in self.reads.items() if {"caption", "program"} <= fields]
