"""microtikz: desk-scale text-guided graphics-program synthesis.

Subsystems:

* ``autodiff``  - reverse-mode tensor engine (numpy f64) with Adam and a
  binary checkpoint format.
* ``dsl``       - the micro graphics DSL: tokenizer, parser, rasterizer,
  caption templater, TeX-style tokenizer, ROT13 redaction.
* ``data``      - corpus generation (program / caption-image / paired pools
  plus a decontaminated test split) and JSONL I/O.
* ``nets``      - vision encoder, program decoder, text encoder, and the
  gated cross-attention caption adapter; model bundle assembly.
* ``train``     - inverse-graphics pretraining, adapter distillation,
  fine-tuning stages, end-to-end baselines, decontamination, grid runs.
* ``emd``       - exact earth mover's distance over patch embeddings and
  the derived rewards / best-of-n reranker.
* ``metrics``   - evaluation harness (MTE, KID, CLIP-style, TED,
  CrystalBLEU-style, slot matching, min-max AVG, BWS, SHR).
* ``cli``       - the ``microtikz`` command-line front door.
"""

__version__ = "0.1.0"


def _tune_allocator():
    # Large transformer temporaries (tens of MB) are allocated and freed
    # every step; with glibc's default mmap threshold each one page-faults
    # from scratch, which dominates runtime on this workload. Raising the
    # threshold keeps the blocks on the heap for reuse. No-op off glibc.
    import ctypes
    import sys

    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except OSError:
        pass


_tune_allocator()
