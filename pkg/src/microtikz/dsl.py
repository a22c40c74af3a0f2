"""The micro graphics DSL standing in for a real graphics language.

A program is a flat token sequence over a closed vocabulary::

    LINE x1 y1 x2 y2 color ;
    RECT x1 y1 x2 y2 color ;          (x2 > x1, y2 > y1)
    CIRCLE cx cy r color ;            (r >= 1)
    TEXT x y color " c1 ... ck " ;    (1..8 chars from [A-Za-z0-9])
    END

Coordinates live on a GRID x GRID logical grid and rasterize onto a
CANVAS x CANVAS grayscale image (4 pixels per cell at the defaults).
Colors map to fixed gray levels, so images stay single channel while the
color stays inferable. Rasterization is a pure function of the program.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DslSyntaxError

GRID = 16
CANVAS = 64
PATCH = 8
MAX_PRIMS = 6
MAX_LABEL = 8
MAX_PROGRAM_TOKENS = 96

COMMANDS = ("LINE", "RECT", "CIRCLE", "TEXT")
COLORS = ("red", "green", "blue", "yellow", "cyan", "magenta", "orange", "gray")
SEP = ";"
QUOTE = '"'
END = "END"
LABEL_CHARS = (
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "abcdefghijklmnopqrstuvwxyz"
    "0123456789"
)

# Gray level for color index i; background stays 0.
_COLOR_LEVEL = {c: (i + 1) / 8.0 for i, c in enumerate(COLORS)}


@dataclass(frozen=True)
class Primitive:
    kind: str
    coords: tuple  # LINE/RECT: (x1,y1,x2,y2); CIRCLE: (cx,cy,r); TEXT: (x,y)
    color: str
    label: str = ""

    def ref_point(self):
        """Grid reference point used for coarse position and relations."""
        if self.kind == "LINE" or self.kind == "RECT":
            x1, y1, x2, y2 = self.coords
            return ((x1 + x2) // 2, (y1 + y2) // 2)
        if self.kind == "CIRCLE":
            return (self.coords[0], self.coords[1])
        return (self.coords[0], self.coords[1])


# ---------------------------------------------------------------------------
# parse / serialize
# ---------------------------------------------------------------------------


def _expect_coord(tokens, i):
    if i >= len(tokens):
        raise DslSyntaxError("truncated command", len(tokens))
    tok = tokens[i]
    if not tok.isdigit() or not 0 <= int(tok) < GRID:
        raise DslSyntaxError(f"expected coordinate, got {tok!r}", i)
    return int(tok)


def _expect_color(tokens, i):
    if i >= len(tokens):
        raise DslSyntaxError("truncated command", len(tokens))
    if tokens[i] not in _COLOR_LEVEL:
        raise DslSyntaxError(f"expected color, got {tokens[i]!r}", i)
    return tokens[i]


def _expect(tokens, i, tok):
    if i >= len(tokens):
        raise DslSyntaxError("truncated command", len(tokens))
    if tokens[i] != tok:
        raise DslSyntaxError(f"expected {tok!r}, got {tokens[i]!r}", i)


def parse(tokens) -> list[Primitive]:
    """Parse a token sequence into primitives.

    Total over token lists: every failure raises :class:`DslSyntaxError`
    carrying the offending token index, nothing else escapes.
    """
    tokens = list(tokens)
    prims = []
    i = 0
    while True:
        if i >= len(tokens):
            raise DslSyntaxError("missing END", len(tokens))
        tok = tokens[i]
        if tok == END:
            if i != len(tokens) - 1:
                raise DslSyntaxError("tokens after END", i + 1)
            return prims
        if len(prims) >= MAX_PRIMS:
            raise DslSyntaxError(f"more than {MAX_PRIMS} primitives", i)
        if tok == "LINE" or tok == "RECT":
            x1 = _expect_coord(tokens, i + 1)
            y1 = _expect_coord(tokens, i + 2)
            x2 = _expect_coord(tokens, i + 3)
            y2 = _expect_coord(tokens, i + 4)
            color = _expect_color(tokens, i + 5)
            _expect(tokens, i + 6, SEP)
            if tok == "RECT" and (x2 <= x1 or y2 <= y1):
                raise DslSyntaxError("RECT needs positive extent", i + 3)
            prims.append(Primitive(tok, (x1, y1, x2, y2), color))
            i += 7
        elif tok == "CIRCLE":
            cx = _expect_coord(tokens, i + 1)
            cy = _expect_coord(tokens, i + 2)
            r = _expect_coord(tokens, i + 3)
            color = _expect_color(tokens, i + 4)
            _expect(tokens, i + 5, SEP)
            if r < 1:
                raise DslSyntaxError("CIRCLE radius must be >= 1", i + 3)
            prims.append(Primitive(tok, (cx, cy, r), color))
            i += 6
        elif tok == "TEXT":
            x = _expect_coord(tokens, i + 1)
            y = _expect_coord(tokens, i + 2)
            color = _expect_color(tokens, i + 3)
            _expect(tokens, i + 4, QUOTE)
            j = i + 5
            chars = []
            while j < len(tokens) and tokens[j] != QUOTE:
                if len(tokens[j]) != 1 or tokens[j] not in LABEL_CHARS:
                    raise DslSyntaxError(f"bad label char {tokens[j]!r}", j)
                chars.append(tokens[j])
                j += 1
            if j >= len(tokens):
                raise DslSyntaxError("unterminated label", len(tokens))
            if not 1 <= len(chars) <= MAX_LABEL:
                raise DslSyntaxError("label must have 1..8 chars", j)
            _expect(tokens, j + 1, SEP)
            prims.append(Primitive(tok, (x, y), color, "".join(chars)))
            i = j + 2
        else:
            raise DslSyntaxError(f"unknown token {tok!r}", i)


def serialize(prims) -> list[str]:
    """Canonical token sequence for a primitive list."""
    out = []
    for p in prims:
        if p.kind == "TEXT":
            out += ["TEXT", str(p.coords[0]), str(p.coords[1]), p.color, QUOTE]
            out += list(p.label)
            out += [QUOTE, SEP]
        else:
            out += [p.kind, *[str(c) for c in p.coords], p.color, SEP]
    out.append(END)
    return out


def is_valid(tokens) -> bool:
    try:
        parse(tokens)
        return True
    except DslSyntaxError:
        return False


# ---------------------------------------------------------------------------
# rasterizer
# ---------------------------------------------------------------------------

# 5x7 bitmap font; one 5-bit mask per row, MSB = leftmost pixel.
_FONT = {
    "A": (0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "B": (0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E),
    "C": (0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E),
    "D": (0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C),
    "E": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F),
    "F": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10),
    "G": (0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F),
    "H": (0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "I": (0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "J": (0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C),
    "K": (0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11),
    "L": (0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F),
    "M": (0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11),
    "N": (0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11),
    "O": (0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "P": (0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10),
    "Q": (0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D),
    "R": (0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11),
    "S": (0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E),
    "T": (0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04),
    "U": (0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "V": (0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04),
    "W": (0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A),
    "X": (0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11),
    "Y": (0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04),
    "Z": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F),
    "a": (0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F),
    "b": (0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E),
    "c": (0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E),
    "d": (0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F),
    "e": (0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E),
    "f": (0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08),
    "g": (0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E),
    "h": (0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11),
    "i": (0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E),
    "j": (0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C),
    "k": (0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12),
    "l": (0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "m": (0x00, 0x00, 0x1A, 0x15, 0x15, 0x15, 0x15),
    "n": (0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11),
    "o": (0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E),
    "p": (0x00, 0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10),
    "q": (0x00, 0x0D, 0x13, 0x11, 0x0F, 0x01, 0x01),
    "r": (0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10),
    "s": (0x00, 0x00, 0x0F, 0x10, 0x0E, 0x01, 0x1E),
    "t": (0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06),
    "u": (0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D),
    "v": (0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04),
    "w": (0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0A),
    "x": (0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11),
    "y": (0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E),
    "z": (0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F),
    "0": (0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E),
    "1": (0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "2": (0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F),
    "3": (0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E),
    "4": (0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02),
    "5": (0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E),
    "6": (0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E),
    "7": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08),
    "8": (0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E),
    "9": (0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C),
}


def _plot(img, x, y, level):
    h, w = img.shape
    if 0 <= x < w and 0 <= y < h:
        img[y, x] = level


def _draw_line(img, x1, y1, x2, y2, level):
    # Integer midpoint (Bresenham) walk.
    dx = abs(x2 - x1)
    sx = 1 if x1 < x2 else -1
    dy = -abs(y2 - y1)
    sy = 1 if y1 < y2 else -1
    err = dx + dy
    x, y = x1, y1
    while True:
        _plot(img, x, y, level)
        if x == x2 and y == y2:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def _draw_circle(img, cx, cy, r, level):
    # Integer midpoint circle, 1px outline.
    x, y, p = r, 0, 1 - r
    while x >= y:
        for px, py in (
            (cx + x, cy + y), (cx - x, cy + y), (cx + x, cy - y), (cx - x, cy - y),
            (cx + y, cy + x), (cx - y, cy + x), (cx + y, cy - x), (cx - y, cy - x),
        ):
            _plot(img, px, py, level)
        y += 1
        if p < 0:
            p += 2 * y + 1
        else:
            x -= 1
            p += 2 * (y - x) + 1


def _draw_text(img, x, y, label, level):
    for ci, ch in enumerate(label):
        rows = _FONT[ch]
        gx = x + 6 * ci  # 5px glyph + 1px spacing
        for ry, mask in enumerate(rows):
            for rx in range(5):
                if mask & (1 << (4 - rx)):
                    _plot(img, gx + rx, y + ry, level)


def rasterize(program, grid: int = GRID, canvas: int = CANVAS) -> np.ndarray:
    """Deterministically render a program to a (canvas, canvas) float image.

    ``program`` may be a token sequence or a primitive list. Later
    primitives overdraw earlier ones. Parse errors propagate.
    """
    if program and isinstance(program[0], Primitive):
        prims = program
    else:
        prims = parse(program)
    img = np.zeros((canvas, canvas), dtype=np.float64)
    scale = canvas // grid
    off = scale // 2
    for p in prims:
        level = _COLOR_LEVEL[p.color]
        if p.kind == "LINE":
            x1, y1, x2, y2 = p.coords
            _draw_line(img, x1 * scale + off, y1 * scale + off, x2 * scale + off, y2 * scale + off, level)
        elif p.kind == "RECT":
            x1, y1, x2, y2 = p.coords
            px1, py1 = x1 * scale + off, y1 * scale + off
            px2, py2 = x2 * scale + off, y2 * scale + off
            _draw_line(img, px1, py1, px2, py1, level)
            _draw_line(img, px2, py1, px2, py2, level)
            _draw_line(img, px2, py2, px1, py2, level)
            _draw_line(img, px1, py2, px1, py1, level)
        elif p.kind == "CIRCLE":
            cx, cy, r = p.coords
            _draw_circle(img, cx * scale + off, cy * scale + off, r * scale, level)
        else:
            x, y = p.coords
            _draw_text(img, x * scale, y * scale, p.label, level)
    return img


def image_to_u8(img: np.ndarray) -> np.ndarray:
    return np.round(img * 255.0).astype(np.uint8)


def image_from_u8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# ROT13 redaction
# ---------------------------------------------------------------------------


def _rot13_char(ch: str) -> str:
    if "a" <= ch <= "z":
        return chr((ord(ch) - 97 + 13) % 26 + 97)
    if "A" <= ch <= "Z":
        return chr((ord(ch) - 65 + 13) % 26 + 65)
    return ch


def rot13_redact(program_tokens) -> list[str]:
    """ROT13-substitute letters inside TEXT labels; everything else untouched."""
    prims = parse(program_tokens)
    redacted = [
        Primitive(p.kind, p.coords, p.color, "".join(_rot13_char(c) for c in p.label))
        if p.kind == "TEXT"
        else p
        for p in prims
    ]
    return serialize(redacted)


# ---------------------------------------------------------------------------
# TeX-style tokenizer (metric-facing)
# ---------------------------------------------------------------------------


def tex_tokenize(s: str) -> list[str]:
    """Split into command words, letter runs, numbers, quoted strings, and
    single punctuation; whitespace-insensitive and total."""
    out = []
    i = 0
    n = len(s)
    while i < n:
        ch = s[i]
        if ch.isspace():
            i += 1
        elif ch == "\\":
            j = i + 1
            while j < n and s[j].isalpha():
                j += 1
            out.append(s[i:j] if j > i + 1 else s[i])
            i = j if j > i + 1 else i + 1
        elif ch.isalpha():
            j = i
            while j < n and s[j].isalpha():
                j += 1
            out.append(s[i:j])
            i = j
        elif ch.isdigit():
            j = i
            while j < n and s[j].isdigit():
                j += 1
            out.append(s[i:j])
            i = j
        elif ch == '"':
            j = s.find('"', i + 1)
            if j == -1:
                out.append(s[i:])
                i = n
            else:
                out.append(s[i : j + 1])
                i = j + 1
        else:
            out.append(ch)
            i += 1
    return out


def program_text(tokens) -> str:
    return " ".join(tokens)


def program_ngrams(tokens, n: int) -> set:
    """All n-token shingles of a program token sequence."""
    toks = tuple(tokens)
    return {toks[i : i + n] for i in range(len(toks) - n + 1)}


# ---------------------------------------------------------------------------
# caption templater
# ---------------------------------------------------------------------------

_OPENERS = (
    (),
    ("the", "image", "shows"),
    ("a", "drawing", "of"),
    ("this", "picture", "contains"),
)
_KIND_WORDS = {
    "LINE": ("line", "stroke", "segment"),
    "RECT": ("rectangle", "box"),
    "CIRCLE": ("circle", "disc"),
    "TEXT": ("label", "text"),
}
_KIND_OF_WORD = {w: k for k, ws in _KIND_WORDS.items() for w in ws}
_LABEL_VERBS = ("reading", "saying", "showing")
_POS_PREPS = ("in", "at")
_POS_WORDS = {
    "tl": ("top", "left"),
    "t": ("top",),
    "tr": ("top", "right"),
    "l": ("left",),
    "c": ("center",),
    "r": ("right",),
    "bl": ("bottom", "left"),
    "b": ("bottom",),
    "br": ("bottom", "right"),
}
_CENTER_SYNONYMS = ("center", "middle")
_RELATIONS = ("left-of", "right-of", "above", "below", "near")
_RELATION_WORDS = {
    "left-of": ("left", "of"),
    "right-of": ("right", "of"),
    "above": ("above",),
    "below": ("below",),
    "near": ("near",),
}


def coarse_position(x: int, y: int, grid: int = GRID) -> str:
    """Map a grid point to one of nine coarse cells."""
    third = grid // 3  # 5 at the default grid
    col = "l" if x <= third - 1 else ("r" if x >= grid - third else "c")
    row = "t" if y <= third - 1 else ("b" if y >= grid - third else "c")
    if row == "c" and col == "c":
        return "c"
    if row == "c":
        return col
    if col == "c":
        return row
    return row + col


def relation_of(a: Primitive, b: Primitive) -> str:
    """Relation of primitive ``a`` relative to ``b`` (dominant axis)."""
    ax, ay = a.ref_point()
    bx, by = b.ref_point()
    dx, dy = ax - bx, ay - by
    if dx == 0 and dy == 0:
        return "near"
    if abs(dx) >= abs(dy):
        return "left-of" if dx < 0 else "right-of"
    return "above" if dy < 0 else "below"


def caption_of(prims, gen) -> list[str]:
    """Template-based caption for a scene; determined by (scene, generator).

    Enumerates each primitive's kind, color, and coarse position, quotes
    TEXT labels verbatim, and states the relation of the first two
    primitives. Synonym choices come from ``gen``.
    """
    words = list(_OPENERS[int(gen.integers(0, len(_OPENERS)))])
    for idx, p in enumerate(prims):
        if idx > 0:
            words.append("and")
        kind_word = _KIND_WORDS[p.kind][int(gen.integers(0, len(_KIND_WORDS[p.kind])))]
        words += ["a", p.color, kind_word]
        if p.kind == "TEXT":
            verb = _LABEL_VERBS[int(gen.integers(0, len(_LABEL_VERBS)))]
            words += [verb, f'"{p.label}"']
        pos = coarse_position(*p.ref_point())
        pos_words = _POS_WORDS[pos]
        if pos == "c":
            pos_words = (_CENTER_SYNONYMS[int(gen.integers(0, 2))],)
        prep = _POS_PREPS[int(gen.integers(0, 2))]
        words += [prep, "the", *pos_words]
    if len(prims) >= 2:
        rel = relation_of(prims[0], prims[1])
        words += ["the", "first", "shape", "is", *_RELATION_WORDS[rel], "the", "second"]
    return words


@dataclass
class CaptionSlots:
    """Checkable facts recovered from a templated caption."""

    prims: list  # dicts: {kind, color, pos, label}
    relation: str | None

    def count(self) -> int:
        n = 0
        for d in self.prims:
            n += 2  # kind, color
            if d["pos"] is not None:
                n += 1
            if d["label"] is not None:
                n += 1
        if self.relation is not None:
            n += 1
        return n


def extract_slots(caption_tokens) -> CaptionSlots:
    """Invert :func:`caption_of` templates back into slot constraints."""
    toks = list(caption_tokens)
    prims = []
    relation = None
    i = 0
    n = len(toks)
    while i < n:
        # Relation clause: "the first shape is <rel words> the second".
        if toks[i] == "the" and i + 1 < n and toks[i + 1] == "first":
            j = i + 4  # skip "the first shape is"
            for rel, ws in _RELATION_WORDS.items():
                if tuple(toks[j : j + len(ws)]) == ws:
                    relation = rel
                    break
            break
        if toks[i] == "a" and i + 2 < n and toks[i + 1] in _COLOR_LEVEL and toks[i + 2] in _KIND_OF_WORD:
            color = toks[i + 1]
            kind = _KIND_OF_WORD[toks[i + 2]]
            j = i + 3
            label = None
            if j < n and toks[j] in _LABEL_VERBS:
                label = toks[j + 1].strip('"')
                j += 2
            pos = None
            if j < n and toks[j] in _POS_PREPS and j + 1 < n and toks[j + 1] == "the":
                j += 2
                two = tuple(toks[j : j + 2])
                one = tuple(toks[j : j + 1])
                if two in _POS_WORDS.values():
                    pos = next(k for k, v in _POS_WORDS.items() if v == two)
                    j += 2
                elif one == ("middle",):
                    pos = "c"
                    j += 1
                elif one in _POS_WORDS.values():
                    pos = next(k for k, v in _POS_WORDS.items() if v == one)
                    j += 1
            prims.append({"kind": kind, "color": color, "pos": pos, "label": label})
            i = j
        else:
            i += 1
    return CaptionSlots(prims=prims, relation=relation)


# ---------------------------------------------------------------------------
# shared vocabulary (programs + captions)
# ---------------------------------------------------------------------------

PAD, BOS, UNK = "<pad>", "<bos>", "<unk>"

_CAPTION_WORDS = (
    "the", "image", "shows", "a", "drawing", "of", "this", "picture",
    "contains", "and", "line", "stroke", "segment", "rectangle", "box",
    "circle", "disc", "label", "text", "reading", "saying", "showing",
    "in", "at", "top", "bottom", "left", "right", "center", "middle",
    "first", "shape", "is", "above", "below", "near", "second",
)


def _build_vocab():
    toks = [PAD, BOS, UNK]
    seen = set(toks)
    for t in (
        *COMMANDS,
        *(str(i) for i in range(GRID)),
        *COLORS,
        SEP,
        QUOTE,
        END,
        *LABEL_CHARS,
        *_CAPTION_WORDS,
    ):
        if t not in seen:
            toks.append(t)
            seen.add(t)
    return tuple(toks)


VOCAB = _build_vocab()
TOK2ID = {t: i for i, t in enumerate(VOCAB)}
PAD_ID = TOK2ID[PAD]
BOS_ID = TOK2ID[BOS]
UNK_ID = TOK2ID[UNK]
END_ID = TOK2ID[END]
PROGRAM_TOKEN_IDS = frozenset(
    TOK2ID[t]
    for t in (*COMMANDS, *(str(i) for i in range(GRID)), *COLORS, SEP, QUOTE, END, *LABEL_CHARS)
)


def encode_program(tokens) -> list[int]:
    return [TOK2ID.get(t, UNK_ID) for t in tokens]


def encode_caption(caption_tokens) -> list[int]:
    """Caption words to ids; quoted label tokens expand to char ids."""
    ids = []
    for t in caption_tokens:
        if len(t) >= 2 and t[0] == '"' and t[-1] == '"':
            ids.append(TOK2ID[QUOTE])
            ids.extend(TOK2ID.get(c, UNK_ID) for c in t[1:-1])
            ids.append(TOK2ID[QUOTE])
        else:
            ids.append(TOK2ID.get(t, UNK_ID))
    return ids


def decode_ids(ids) -> list[str]:
    return [VOCAB[i] for i in ids]
