"""Per-value modification markers.

Every pipeline stage that changes or derives a value records it with a flag.
Flags are only ever added. The closed vocabulary below can be extended with
namespaced custom flags of the form ``namespace:name``.
"""

from __future__ import annotations

import re
from enum import Enum
from typing import AbstractSet, Iterable, Union


class MarkerFlag(str, Enum):
    INTERPOLATED = "interpolated"
    OWN_CALCULATION = "own_calculation"
    IMPLAUSIBLE = "implausible"
    SUMMED_FROM_COMPONENTS = "summed_from_components"

    def __str__(self) -> str:
        return self.value


Flag = Union[MarkerFlag, str]
Markers = AbstractSet[Flag]

NO_MARKERS: frozenset = frozenset()

# custom flags used by this package
UNMAPPED_TERM = "gridforge:unmapped_term"
INCOMPLETE_SUM = "gridforge:incomplete"
AMBIGUOUS_MATCH = "gridforge:ambiguous_match"

_CUSTOM = re.compile(r"^[a-z][a-z0-9_]*:[a-z][a-z0-9_]*$")
_KNOWN = {f.value for f in MarkerFlag}


def flag_name(flag: Flag) -> str:
    return flag.value if isinstance(flag, MarkerFlag) else str(flag)


def is_valid_flag(name: str) -> bool:
    return name in _KNOWN or bool(_CUSTOM.match(name))


def coerce_flag(name: str) -> Flag:
    """Map a rendered flag name back to a flag; raises ValueError for unknown names."""
    if name in _KNOWN:
        return MarkerFlag(name)
    if _CUSTOM.match(name):
        return name
    raise ValueError(f"unknown marker flag {name!r}")


def render_markers(flags: Iterable[Flag]) -> str:
    return ";".join(sorted({flag_name(f) for f in flags}))


def parse_markers(text: str) -> frozenset:
    if not text:
        return NO_MARKERS
    return frozenset(coerce_flag(part) for part in text.split(";"))
