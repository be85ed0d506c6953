"""Text tokens, acoustic frames and the 1:2 interleaved text/audio schedule.

Every text token in an interleaved stream is followed by exactly two coarse
(level-0) acoustic codes.  When audio outlasts the transcript the text side is
continued with pad tokens so the schedule never stalls.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO, Union

import numpy as np

from .errors import EmptyInput, MalformedSequence, RatioError

PAD_ID = 0
EOS_ID = 1
CODES_PER_TEXT = 2


@dataclass(frozen=True)
class TextToken:
    id: int
    is_pad: bool = False
    is_eos: bool = False

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"token id must be non-negative, got {self.id}")
        if self.is_pad and self.is_eos:
            raise ValueError("a token cannot be both pad and eos")


PAD = TextToken(PAD_ID, is_pad=True)
EOS = TextToken(EOS_ID, is_eos=True)


def text_token(token_id: int) -> TextToken:
    """Build a token, flagging the designated pad/eos ids."""
    token_id = int(token_id)
    return TextToken(token_id, is_pad=token_id == PAD_ID, is_eos=token_id == EOS_ID)


@dataclass(frozen=True)
class Code:
    """A coarse acoustic code item inside an interleaved sequence."""

    value: int


@dataclass(frozen=True)
class AcousticCode:
    level: int
    value: int

    def check(self, n_levels: int, vocab: int) -> None:
        if not 0 <= self.level < n_levels:
            raise ValueError(f"level {self.level} outside [0, {n_levels})")
        if not 0 <= self.value < vocab:
            raise ValueError(f"value {self.value} outside [0, {vocab})")


@dataclass(frozen=True)
class AcousticFrame:
    """All N RVQ indices for one time step; ``codes[j]`` is the level-j index."""

    codes: tuple

    def __post_init__(self):
        object.__setattr__(self, "codes", tuple(int(c) for c in self.codes))

    def __len__(self):
        return len(self.codes)

    def __getitem__(self, level):
        return self.codes[level]

    @property
    def coarse(self) -> int:
        return self.codes[0]

    def check(self, n_levels: int, vocab: int) -> None:
        if len(self.codes) != n_levels:
            raise ValueError(f"frame has {len(self.codes)} levels, expected {n_levels}")
        for c in self.codes:
            if not 0 <= c < vocab:
                raise ValueError(f"code {c} outside [0, {vocab})")


Item = Union[TextToken, Code]


@dataclass(frozen=True)
class InterleavedSequence:
    items: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]


def frames_to_array(frames: Iterable) -> np.ndarray:
    """Stack frames (AcousticFrame or int sequences) into an (L, N) int64 array."""
    rows = [f.codes if isinstance(f, AcousticFrame) else tuple(f) for f in frames]
    if not rows:
        return np.zeros((0, 0), dtype=np.int64)
    return np.asarray(rows, dtype=np.int64)


def array_to_frames(codes: np.ndarray) -> list:
    return [AcousticFrame(row) for row in np.asarray(codes).tolist()]


def interleave(
    text: Sequence[TextToken],
    codes: Sequence[int],
    *,
    pad: TextToken = PAD,
    truncated: bool = False,
) -> InterleavedSequence:
    """Merge text tokens and coarse codes into the 1:2 schedule.

    Text is extended with ``pad`` when there are more than two codes per
    token.  With ``truncated=True`` the final group may hold a single code,
    which is how a stream cut short by end-of-generation looks.
    """
    codes = [int(c) for c in codes]
    if not codes:
        raise EmptyInput("interleave needs at least one coarse code")
    text = list(text)
    needed = 2 * len(text) - (1 if truncated else 0)
    if len(codes) < needed:
        raise RatioError(
            f"{len(codes)} codes cannot cover {len(text)} text tokens at 1:2"
        )
    n_groups = -(-len(codes) // CODES_PER_TEXT)
    text.extend([pad] * (n_groups - len(text)))
    items: list = []
    for g, tok in enumerate(text):
        items.append(tok)
        items.extend(Code(c) for c in codes[CODES_PER_TEXT * g : CODES_PER_TEXT * (g + 1)])
    return InterleavedSequence(items)


def _groups(seq: Iterable[Item]):
    """Yield (text_token, [codes]) groups; raise MalformedSequence on a leading code."""
    current = None
    group: list = []
    for item in seq:
        if isinstance(item, TextToken):
            if current is not None:
                yield current, group
            current, group = item, []
        elif isinstance(item, Code):
            if current is None:
                raise MalformedSequence("coarse code precedes any text token")
            group.append(item.value)
        else:
            raise MalformedSequence(f"unknown item {item!r}")
    if current is not None:
        yield current, group


def validate_ratio(seq: Iterable[Item]) -> bool:
    """True iff every text token is followed by exactly two codes (last group may hold one)."""
    try:
        groups = list(_groups(seq))
    except MalformedSequence:
        return False
    for k, (_, group) in enumerate(groups):
        last = k == len(groups) - 1
        if len(group) == CODES_PER_TEXT:
            continue
        if last and len(group) == 1:
            continue
        return False
    return True


def deinterleave(seq: Iterable[Item]) -> tuple:
    """Split a valid interleaved sequence into (text tokens, coarse codes)."""
    items = list(seq)
    if not validate_ratio(items):
        raise MalformedSequence("sequence violates the 1:2 schedule")
    text, codes = [], []
    for tok, group in _groups(items):
        text.append(tok)
        codes.extend(group)
    return text, codes


# --- text serialization -------------------------------------------------------

def dump_sequence(seq: Iterable[Item], fp: TextIO) -> None:
    for item in seq:
        if isinstance(item, TextToken):
            fp.write(f"T {item.id}\n")
        else:
            fp.write(f"A {item.value}\n")


def dumps_sequence(seq: Iterable[Item]) -> str:
    buf = io.StringIO()
    dump_sequence(seq, buf)
    return buf.getvalue()


def load_sequence(fp: TextIO) -> InterleavedSequence:
    items: list = []
    for lineno, line in enumerate(fp, 1):
        line = line.strip()
        if not line:
            continue
        tag, _, value = line.partition(" ")
        try:
            v = int(value)
        except ValueError:
            raise MalformedSequence(f"line {lineno}: bad value {value!r}") from None
        if tag == "T":
            items.append(text_token(v))
        elif tag == "A":
            items.append(Code(v))
        else:
            raise MalformedSequence(f"line {lineno}: unknown record tag {tag!r}")
    return InterleavedSequence(items)


def loads_sequence(text: str) -> InterleavedSequence:
    return load_sequence(io.StringIO(text))


def dump_codes(codes, fp: TextIO) -> None:
    """Write frames frame-major, one line of N integers per frame."""
    for row in frames_to_array(codes):
        fp.write(" ".join(str(int(c)) for c in row) + "\n")


def load_codes(fp: TextIO) -> np.ndarray:
    rows = [line.split() for line in fp if line.strip()]
    if not rows:
        return np.zeros((0, 0), dtype=np.int64)
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise MalformedSequence(f"ragged code file, line widths {sorted(widths)}")
    return np.asarray(rows, dtype=np.int64)
