"""Symbols, finite words, and the dynamical metric on sequence space.

Points of the ambient system are one-sided infinite sequences over the
alphabet {1, ..., l}. Two sequences that first differ at (0-based) position c
are at distance e^(-c). The time-n metric is the maximum distance between the
two orbits over the first n shifts, which works out to a simple function of
the common prefix length (see dn_distance). Open and closed balls in the
time-n metric at radius e^(-m) are cylinder sets, so every ball is described
by a finite word; ball_cylinder_length gives the word length.

Finite words are tuples of ints in 1..l, written as digit strings ("121")
wherever a compact text form is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

Word = tuple  # tuple of ints in 1..l; the empty tuple is the root word


@dataclass(frozen=True)
class Alphabet:
    """The symbol set {1, ..., size}; at least two symbols."""

    size: int

    def __post_init__(self):
        if not isinstance(self.size, int) or self.size < 2:
            raise DomainError(f"alphabet size must be at least 2, got {self.size!r}")

    @property
    def symbols(self) -> range:
        return range(1, self.size + 1)

    def check_word(self, word: Word) -> None:
        for sym in word:
            if not isinstance(sym, int) or not 1 <= sym <= self.size:
                raise DomainError(
                    f"symbol {sym!r} outside alphabet 1..{self.size} in word {word!r}"
                )


class ScaleIndex(int):
    """Radius exponent m >= 1; the ball radius is e^(-m)."""

    def __new__(cls, value):
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise DomainError(f"scale index must be an integer >= 1, got {value!r}")
        return super().__new__(cls, value)


def check_scale(scale: int) -> int:
    """Validate a scale index given as a plain int."""
    return int(ScaleIndex(scale))


def word_from_string(text: str) -> Word:
    """Parse a digit-string word like "121" (empty string is the root)."""
    word = []
    for ch in text.strip():
        if not ch.isdigit() or ch == "0":
            raise DomainError(f"word string {text!r} must use digits 1-9 only")
        word.append(int(ch))
    return tuple(word)


def word_to_string(word: Word) -> str:
    for sym in word:
        if not 1 <= sym <= 9:
            raise DomainError(
                f"word {word!r} has symbols above 9; digit-string form unavailable"
            )
    return "".join(str(sym) for sym in word)


def common_prefix_length(x: Word, y: Word) -> int:
    c = 0
    for a, b in zip(x, y):
        if a != b:
            break
        c += 1
    return c


def dn_distance(x: Word, y: Word, n: int) -> float:
    """Distance between the orbits of x and y over the first n time steps.

    Equals max over 0 <= k < n of e^(-(common prefix length of the k-shifted
    sequences)). With c the common prefix length of x and y this collapses to
    e^(-(c - n + 1)) when c >= n - 1 and to 1.0 otherwise; two equal words
    are at distance 0. The inputs must determine the value: both words need
    at least n symbols, and words that agree on their whole overlap must have
    equal length (otherwise the distance depends on unseen symbols).
    """
    if n < 1:
        raise DomainError(f"time horizon n must be >= 1, got {n}")
    if len(x) < n or len(y) < n:
        raise DomainError(
            f"insufficient prefix: need at least n={n} symbols, "
            f"got lengths {len(x)} and {len(y)}"
        )
    if x == y:
        return 0.0
    c = common_prefix_length(x, y)
    if c == min(len(x), len(y)) and len(x) != len(y):
        raise DomainError(
            "insufficient prefix: one word is a proper prefix of the other, "
            "so the distance is not determined"
        )
    if c >= n - 1:
        return math.exp(-(c - n + 1))
    return 1.0


def ball_cylinder_length(n: int, scale: int, kind: str = "open") -> int:
    """Word length of the time-n ball of radius e^(-scale) around any point.

    The open ball is the cylinder of length n + scale; the closed ball is the
    cylinder of length n + scale - 1.
    """
    if n < 1:
        raise DomainError(f"time horizon n must be >= 1, got {n}")
    check_scale(scale)
    if kind == "open":
        return n + scale
    if kind == "closed":
        return n + scale - 1
    raise DomainError(f"ball kind must be 'open' or 'closed', got {kind!r}")


@dataclass(frozen=True)
class BowenBallSpec:
    """A time-n ball of radius e^(-scale) centred on the cylinder of a word.

    The center word must be at least as long as the cylinder that the ball
    collapses to, so the ball is fully determined.
    """

    center: Word
    n: int
    scale: int
    kind: str = "open"

    def __post_init__(self):
        length = ball_cylinder_length(self.n, self.scale, self.kind)
        if len(self.center) < length:
            raise DomainError(
                f"insufficient prefix: ball center has {len(self.center)} symbols "
                f"but its cylinder needs {length}"
            )

    @property
    def cylinder_length(self) -> int:
        return ball_cylinder_length(self.n, self.scale, self.kind)

    @property
    def radius(self) -> float:
        return math.exp(-self.scale)

    def cylinder(self) -> Word:
        return tuple(self.center[: self.cylinder_length])


@dataclass(frozen=True)
class FrequencyConstraint:
    """Target symbol frequencies with a tolerance band.

    A depth-D word satisfies the constraint when, for every symbol i, its
    count k_i lies in [ceil((p_i - delta) * D), floor((p_i + delta) * D)].
    """

    targets: tuple
    delta: float

    def __post_init__(self):
        if len(self.targets) < 2:
            raise DomainError("frequency targets must cover an alphabet of size >= 2")
        if any(p < 0.0 or p > 1.0 for p in self.targets):
            raise DomainError(f"frequency targets must lie in [0, 1]: {self.targets}")
        if abs(sum(self.targets) - 1.0) > 1e-9:
            raise DomainError(
                f"frequency targets must sum to 1, got sum {sum(self.targets)!r}"
            )
        if not self.delta >= 0.0:
            raise DomainError(
                f"frequency tolerance delta must be >= 0, got {self.delta}"
            )

    def count_windows(self, depth: int) -> list:
        """Per-symbol closed integer count windows [lo_i, hi_i] at the given depth."""
        windows = []
        for p in self.targets:
            lo = max(0, math.ceil((p - self.delta) * depth - 1e-12))
            hi = min(depth, math.floor((p + self.delta) * depth + 1e-12))
            windows.append((lo, hi))
        return windows
