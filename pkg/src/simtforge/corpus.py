"""Access to the bundled kernel corpus and its manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .ir import Module
from .parser import parse_module


def corpus_dir() -> Path:
    return Path(str(resources.files("simtforge") / "corpus"))


@dataclass
class CorpusEntry:
    """Manifest record for one corpus file.

    ``skip`` names why the kernel is kept out of differential runs (for
    instance it is expected to fail lowering).  ``expect`` holds facts that
    tests check, such as clone or duplication counts.
    """

    name: str
    args: dict[str, int] = field(default_factory=dict)
    launch: str = "kernel"
    skip: str | None = None
    expect: dict = field(default_factory=dict)

    @property
    def runnable(self) -> bool:
        return self.skip is None and self.launch == "kernel"


@lru_cache(maxsize=1)
def load_manifest() -> dict:
    with open(corpus_dir() / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


def entries() -> list[CorpusEntry]:
    raw = load_manifest()["kernels"]
    listed = {p.stem for p in corpus_dir().glob("*.vir")}
    missing = listed - set(raw)
    if missing:
        raise KeyError(f"corpus files without a manifest entry: {sorted(missing)}")
    return [CorpusEntry(name, **spec) for name, spec in sorted(raw.items())]


def entry(name: str) -> CorpusEntry:
    for e in entries():
        if e.name == name:
            return e
    raise KeyError(f"no corpus kernel named {name!r}")


def runnable_names() -> list[str]:
    return [e.name for e in entries() if e.runnable]


def load_text(name: str) -> str:
    return (corpus_dir() / f"{name}.vir").read_text(encoding="utf-8")


def load_kernel(name: str) -> Module:
    return parse_module(load_text(name))


def fixture(role: str) -> str:
    """Name of the corpus kernel playing ``role`` (for example ``"ternary"``)."""
    return load_manifest()["fixtures"][role]


def hazard_fixtures() -> dict[str, dict]:
    return load_manifest()["hazards"]
