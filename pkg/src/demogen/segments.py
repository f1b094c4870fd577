"""Motion/skill segment index shared by the parser, the adapter and the store."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

MOTION = "motion"
SKILL = "skill"


@dataclass(frozen=True)
class Segment:
    kind: str
    object_id: int
    t_start: int
    t_end: int  # inclusive; t_end == t_start - 1 marks an empty interval

    @property
    def length(self):
        return self.t_end - self.t_start + 1

    @property
    def empty(self):
        return self.length <= 0

    def frames(self):
        return range(self.t_start, self.t_end + 1)

    def to_list(self):
        return [self.kind, self.object_id, self.t_start, self.t_end]

    @classmethod
    def from_list(cls, row):
        kind, obj, a, b = row
        return cls(str(kind), int(obj), int(a), int(b))


@dataclass(frozen=True)
class SegmentIndex:
    """Per-arm ordered segments ``(motion_1, skill_1, ..., motion_K, skill_K)``."""

    arms: Tuple[Tuple[Segment, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(tuple(a) for a in self.arms))

    @classmethod
    def single(cls, segments):
        return cls((tuple(segments),))

    def __getitem__(self, arm) -> Tuple[Segment, ...]:
        return self.arms[arm]

    def __len__(self):
        return len(self.arms)

    def skills(self, arm=0) -> List[Segment]:
        return [s for s in self.arms[arm] if s.kind == SKILL]

    def skill_of(self, object_id):
        """(arm, segment) of the skill that manipulates ``object_id``."""
        for a, segs in enumerate(self.arms):
            for s in segs:
                if s.kind == SKILL and s.object_id == object_id:
                    return a, s
        raise KeyError(object_id)

    def problems(self, length) -> List[str]:
        """Tiling / alternation violations against a trajectory of ``length`` frames."""
        out = []
        for a, segs in enumerate(self.arms):
            cursor = 0
            for i, s in enumerate(segs):
                expected = MOTION if i % 2 == 0 else SKILL
                if s.kind != expected:
                    out.append(f"arm {a}: segment {i} is {s.kind}, expected {expected}")
                if s.t_end < s.t_start - 1:
                    out.append(f"arm {a}: malformed interval [{s.t_start}, {s.t_end}]")
                if s.t_start != cursor:
                    prev = segs[i - 1] if i else None
                    if prev is not None and s.t_start < cursor:
                        out.append(f"arm {a}: interval [{prev.t_start}, {prev.t_end}] overlaps "
                                   f"[{s.t_start}, {s.t_end}]")
                    else:
                        out.append(f"arm {a}: gap before interval [{s.t_start}, {s.t_end}]")
                cursor = max(cursor, s.t_end + 1)
            if segs and cursor != length:
                out.append(f"arm {a}: segments cover [0, {cursor - 1}] but trajectory has {length} frames")
        return out

    def to_json(self):
        return [[s.to_list() for s in segs] for segs in self.arms]

    @classmethod
    def from_json(cls, data):
        return cls(tuple(tuple(Segment.from_list(r) for r in segs) for segs in data))
