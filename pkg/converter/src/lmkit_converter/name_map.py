"""Framework-to-canonical name mapping with layout directives.

A NameMap is an ordered list of entries (framework name -> canonical name),
each optionally carrying a `transpose` (axis order) and/or `reshape`
directive applied in that order on export. Directives preserve element
count and are invertible, so the framework tensor can be recovered
bit-exactly from the exported one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from lmkit.arch import weight_schema
from lmkit.config import ModelConfig


class NameMapError(ValueError):
    pass


@dataclass(frozen=True)
class MapEntry:
    src: str
    dst: str
    transpose: tuple[int, ...] | None = None
    reshape: tuple[int, ...] | None = None

    def apply(self, value: np.ndarray) -> np.ndarray:
        out = value
        if self.transpose is not None:
            if sorted(self.transpose) != list(range(out.ndim)):
                raise NameMapError(f"{self.src}: transpose {self.transpose} does not "
                                   f"permute axes of rank-{out.ndim} tensor")
            out = np.ascontiguousarray(out.transpose(self.transpose))
        if self.reshape is not None:
            if int(np.prod(self.reshape)) != out.size:
                raise NameMapError(f"{self.src}: reshape {self.reshape} changes element "
                                   f"count ({out.size} -> {int(np.prod(self.reshape))})")
            out = out.reshape(self.reshape)
        return out

    def invert(self, value: np.ndarray, original_shape) -> np.ndarray:
        out = value
        if self.reshape is not None:
            inter = original_shape if self.transpose is None else \
                tuple(original_shape[a] for a in self.transpose)
            out = out.reshape(inter)
        if self.transpose is not None:
            inverse = np.argsort(self.transpose)
            out = np.ascontiguousarray(out.transpose(inverse))
        return out


@dataclass
class NameMap:
    entries: list[MapEntry] = field(default_factory=list)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def canonical_names(self) -> list[str]:
        return [e.dst for e in self.entries]

    def check_surjective(self, config: ModelConfig) -> None:
        want = set(weight_schema(config))
        have = set(self.canonical_names())
        missing = sorted(want - have)
        if missing:
            raise NameMapError(f"map does not cover the canonical scheme; missing {missing[:5]}"
                               + ("..." if len(missing) > 5 else ""))

    def save(self, path) -> None:
        records = []
        for e in self.entries:
            rec = {"src": e.src, "dst": e.dst}
            if e.transpose is not None:
                rec["transpose"] = list(e.transpose)
            if e.reshape is not None:
                rec["reshape"] = list(e.reshape)
            records.append(rec)
        with open(path, "w") as f:
            json.dump(records, f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "NameMap":
        with open(path) as f:
            records = json.load(f)
        entries = [MapEntry(src=r["src"], dst=r["dst"],
                            transpose=tuple(r["transpose"]) if "transpose" in r else None,
                            reshape=tuple(r["reshape"]) if "reshape" in r else None)
                   for r in records]
        return cls(entries)


def default_name_map(config: ModelConfig) -> NameMap:
    """Map for the bundled torch twin: ParameterDict keys (dots sanitized to
    `__` under a `params.` prefix) back to canonical names; layouts already
    agree, so no directives."""
    entries = [MapEntry(src=f"params.{name.replace('.', '__')}", dst=name)
               for name in weight_schema(config)]
    return NameMap(entries)
