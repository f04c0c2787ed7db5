"""Overlap-pattern algebra.

An overlap pattern is a nonempty subset of the K objective clusters; an
observation carrying pattern ``{1, 3}`` draws its mean from clusters 1 and 3
jointly. The full pattern set over K clusters has 2**K - 1 members and indexes
the mixture components everywhere downstream, always in one canonical order
(by cardinality, then lexicographically) so that mixing weights,
responsibilities, and serialized output line up across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

from .errors import DataValidationError, SizeLimitError

MAX_K = 12


@dataclass(frozen=True, order=True)
class OverlapPattern:
    """Nonempty, strictly increasing tuple of cluster indices in 1..K."""

    members: tuple[int, ...]

    def __post_init__(self):
        if len(self.members) == 0:
            raise DataValidationError("overlap pattern must have at least one member")
        ms = tuple(int(m) for m in self.members)
        if any(m < 1 for m in ms):
            raise DataValidationError(f"pattern members must be >= 1, got {ms}")
        if any(a >= b for a, b in zip(ms, ms[1:])):
            raise DataValidationError(f"pattern members must be strictly increasing, got {ms}")
        object.__setattr__(self, "members", ms)

    def __contains__(self, k: int) -> bool:
        return k in self.members

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def label(self) -> str:
        """Compact name: "13" for {1,3} when all members are single digits,
        "1-13" style with dashes otherwise."""
        if self.members[-1] <= 9:
            return "".join(str(m) for m in self.members)
        return "-".join(str(m) for m in self.members)

    @classmethod
    def from_label(cls, text: str) -> "OverlapPattern":
        text = text.strip()
        if not text:
            raise DataValidationError("empty pattern label")
        if "-" in text:
            parts = text.split("-")
        else:
            parts = list(text)
        try:
            members = tuple(int(p) for p in parts)
        except ValueError:
            raise DataValidationError(f"cannot parse pattern label {text!r}") from None
        return cls(members)

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class PatternSet:
    """All 2**K - 1 overlap patterns over clusters 1..K in canonical order."""

    K: int
    patterns: tuple[OverlapPattern, ...] = field(default=())

    def __post_init__(self):
        if self.K < 1:
            raise DataValidationError(f"K must be >= 1, got {self.K}")
        expected = tuple(_canonical_patterns(self.K))
        if self.patterns == ():
            object.__setattr__(self, "patterns", expected)
        elif tuple(self.patterns) != expected:
            raise DataValidationError("patterns are not the canonical enumeration for K")

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self):
        return iter(self.patterns)

    def __getitem__(self, i: int) -> OverlapPattern:
        return self.patterns[i]

    def index(self, pattern: OverlapPattern) -> int:
        try:
            return self.patterns.index(pattern)
        except ValueError:
            raise DataValidationError(f"pattern {pattern} not valid for K={self.K}") from None

    def containing(self, k: int) -> list[int]:
        """Indices of all patterns whose member set includes cluster k."""
        if not 1 <= k <= self.K:
            raise DataValidationError(f"cluster index {k} outside 1..{self.K}")
        return [i for i, p in enumerate(self.patterns) if k in p]

    def singleton_indices(self) -> list[int]:
        return [i for i, p in enumerate(self.patterns) if len(p) == 1]


def _canonical_patterns(K: int):
    for size in range(1, K + 1):
        for combo in combinations(range(1, K + 1), size):
            yield OverlapPattern(combo)


@lru_cache(maxsize=None)
def enumerate_patterns(K: int) -> PatternSet:
    """All nonempty subsets of {1..K}, ordered by cardinality then lexicographically.

    K is capped at 12: the pattern count 2**K - 1 is exponential and larger K
    is never a sane model size.
    """
    if not isinstance(K, (int,)) or isinstance(K, bool):
        raise DataValidationError(f"K must be an integer, got {type(K).__name__}")
    if K < 1 or K > MAX_K:
        raise SizeLimitError(f"K must be in 1..{MAX_K}, got {K}")
    return PatternSet(K=K)
