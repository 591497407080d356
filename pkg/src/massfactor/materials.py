"""Material vocabulary, free-text parsing, frozen embeddings, rule densities.

The vocabulary is a fixed list of coarse material categories with aliases and
literature density ranges. Free text is matched against it token-wise; any
text that matches nothing resolves to a dedicated "unknown" id so the
pipeline never fails on out-of-vocabulary descriptions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ConfigError, UnknownMaterialError
from .nn import LayerNormParams, layernorm_forward
from .rng import Rng, derive_seed

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> tuple[str, ...]:
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class MaterialEntry:
    name: str
    aliases: tuple[str, ...]
    rho_lo: float
    rho_hi: float


class MaterialVocab:
    """Ordered material entries; the unknown id sits one past the last entry."""

    def __init__(self, entries: list[MaterialEntry]):
        if not entries:
            raise ConfigError("material vocabulary must not be empty")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate canonical material names")
        seen_aliases: set[str] = set()
        for e in entries:
            if not (0.0 < e.rho_lo <= e.rho_hi):
                raise ConfigError(f"bad density range for {e.name!r}: [{e.rho_lo}, {e.rho_hi}]")
            for a in e.aliases:
                if a in seen_aliases:
                    raise ConfigError(f"alias {a!r} appears in more than one entry")
                seen_aliases.add(a)
        self.entries = list(entries)
        self._index = {e.name: i for i, e in enumerate(entries)}

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def unknown_id(self) -> int:
        return len(self.entries)

    def id_of(self, name: str) -> int:
        return self._index[name]

    def name_of(self, material_id: int) -> str:
        if material_id == self.unknown_id:
            return "unknown"
        return self.entries[material_id].name


def _phrase_in(tokens: tuple[str, ...], phrase: tuple[str, ...]) -> bool:
    k = len(phrase)
    return any(tokens[i:i + k] == phrase for i in range(len(tokens) - k + 1))


def parse_material(text: str, vocab: MaterialVocab) -> int:
    """Resolve free text to a material id; canonical names win over aliases."""
    if vocab is None or len(vocab) == 0:
        raise ConfigError("material vocabulary must not be empty")
    toks = _tokens(text)
    for i, entry in enumerate(vocab.entries):
        if _phrase_in(toks, _tokens(entry.name)):
            return i
    for i, entry in enumerate(vocab.entries):
        for alias in entry.aliases:
            if _phrase_in(toks, _tokens(alias)):
                return i
    return vocab.unknown_id


def rule_based_density(material_id: int, vocab: MaterialVocab) -> float:
    """Midpoint of the material's canonical density range, kg/m^3."""
    if material_id == vocab.unknown_id:
        raise UnknownMaterialError("no density rule for unknown material")
    if not (0 <= material_id < len(vocab)):
        raise UnknownMaterialError(f"material id {material_id} out of range")
    e = vocab.entries[material_id]
    return 0.5 * (e.rho_lo + e.rho_hi)


def parse_vocab_lines(lines) -> MaterialVocab:
    entries = []
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) != 4:
            raise ConfigError(f"bad vocabulary line: {line!r}")
        name, alias_field, lo, hi = parts
        aliases = tuple(a.strip() for a in alias_field.split(",") if a.strip())
        entries.append(MaterialEntry(name.strip(), aliases, float(lo), float(hi)))
    return MaterialVocab(entries)


def load_vocab(path) -> MaterialVocab:
    with open(path, encoding="utf-8") as fh:
        return parse_vocab_lines(fh)


def default_vocab() -> MaterialVocab:
    text = resources.files("massfactor.data").joinpath("materials.txt").read_text("utf-8")
    return parse_vocab_lines(text.splitlines())


@dataclass
class MaterialEmbedding:
    """Frozen embedding table: one row per material plus one for unknown.

    The table is never registered with the optimizer, so its rows stay
    bit-identical across training.
    """

    table: np.ndarray  # (len(vocab) + 1, D)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def checksum(self) -> int:
        return hash(self.table.tobytes())


def make_material_embedding(vocab: MaterialVocab, dim: int, seed: int) -> MaterialEmbedding:
    rng = Rng(derive_seed(seed, "material-embedding"))
    rows = len(vocab) + 1
    table = rng.normals(rows * dim).reshape(rows, dim)
    return MaterialEmbedding(table)


def embed_material(emb: MaterialEmbedding, material_id: int, norm: LayerNormParams) -> np.ndarray:
    """LayerNorm of the frozen row; gradients must never reach the table."""
    if not (0 <= material_id < emb.table.shape[0]):
        raise IndexError(f"material id {material_id} outside embedding table")
    return layernorm_forward(norm, emb.table[material_id])
