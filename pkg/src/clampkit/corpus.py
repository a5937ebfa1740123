"""Crystal-text pair manifests, integrity validation, splits, batches and a synthetic corpus."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cifparse import CifError, parse_file, to_structure
from .crystal import CrystalStructure, DegenerateCellError, Lattice, wrap_frac
from .elements import ElementError, atomic_number, name as element_name, symbol
from .rng import SplitMix64, derive_seed

log = logging.getLogger(__name__)

STATUSES = ("ok", "parse-error", "degenerate-cell", "partial-occupancy-flag", "element-unresolved")


class ManifestError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class PairRecord:
    id: str
    cif: str
    text: str
    labels: list[str] | None = None
    root: Path = field(default=Path("."), repr=False, compare=False)

    @property
    def cif_path(self) -> Path:
        return self.root / self.cif

    def to_json(self) -> str:
        obj = {"id": self.id, "cif": self.cif, "text": self.text}
        if self.labels is not None:
            obj["labels"] = self.labels
        return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def load_manifest(path) -> list[PairRecord]:
    """Read a JSON-lines manifest; CIF paths resolve relative to its directory."""
    path = Path(path)
    root = path.parent
    records: list[PairRecord] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"malformed JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise ManifestError("expected a JSON object", lineno)
            for key in ("id", "cif", "text"):
                if key not in obj:
                    raise ManifestError(f"missing required key {key!r}", lineno)
                if not isinstance(obj[key], str):
                    raise ManifestError(f"key {key!r} must be a string", lineno)
            if not obj["text"].strip():
                raise ManifestError("empty text", lineno)
            labels = obj.get("labels")
            if labels is not None and not (isinstance(labels, list) and all(isinstance(x, str) for x in labels)):
                raise ManifestError("labels must be a list of strings", lineno)
            if obj["id"] in seen:
                raise ManifestError(f"duplicate id {obj['id']!r} (first seen on line {seen[obj['id']]})", lineno)
            seen[obj["id"]] = lineno
            records.append(PairRecord(obj["id"], obj["cif"], obj["text"], labels, root))
    return records


def write_manifest(records: Iterable[PairRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationPolicy:
    exclude_partial: bool = False

    def excludes(self, status: str) -> bool:
        if status == "ok":
            return False
        if status == "partial-occupancy-flag":
            return self.exclude_partial
        return True


def load_structure(record: PairRecord) -> CrystalStructure:
    return to_structure(parse_file(record.cif_path))


def record_status(record: PairRecord) -> tuple[str, str]:
    try:
        structure = load_structure(record)
    except ElementError as exc:
        return "element-unresolved", str(exc)
    except DegenerateCellError as exc:
        return "degenerate-cell", str(exc)
    except (CifError, OSError, UnicodeDecodeError, ValueError) as exc:
        return "parse-error", f"{type(exc).__name__}: {exc}"
    if structure.partial_occupancy:
        return "partial-occupancy-flag", "site occupancy below 1"
    return "ok", ""


def validate(records: Sequence[PairRecord], policy: ValidationPolicy = ValidationPolicy()):
    """Check every referenced CIF. Returns ``(report, passed)``; records are not modified."""
    counts = Counter({s: 0 for s in STATUSES})
    per_record = {}
    failures = []
    passed = []
    for r in records:
        status, message = record_status(r)
        counts[status] += 1
        excluded = policy.excludes(status)
        per_record[r.id] = status
        if excluded:
            failures.append({"id": r.id, "cif": r.cif, "status": status, "message": message})
        else:
            passed.append(r)
    report = {
        "total": len(records),
        "passed": len(passed),
        "excluded": len(failures),
        "counts": dict(counts),
        "policy": {"exclude_partial": policy.exclude_partial},
        "failures": sorted(failures, key=lambda f: f["id"]),
        "status": dict(sorted(per_record.items())),
    }
    return report, passed


# ---------------------------------------------------------------------------
# splitting and batching


@dataclass(frozen=True)
class SplitSpec:
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie strictly between 0 and 1")


def hash_unit(seed: int, record_id: str) -> float:
    """blake2b-64 of the id keyed by the seed, mapped to [0, 1)."""
    h = hashlib.blake2b(record_id.encode("utf-8"), digest_size=8,
                        key=(seed & (2**64 - 1)).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little") / 2.0**64


def split(records: Sequence[PairRecord], spec: SplitSpec):
    if len(records) < 2:
        raise ValueError("need at least two records to split")
    train, val = [], []
    for r in records:
        (val if hash_unit(spec.seed, r.id) < spec.val_fraction else train).append(r)
    if not val:
        raise ValueError("empty val split; raise val_fraction")
    if not train:
        raise ValueError("empty train split; lower val_fraction")
    return train, val


def batches(train: Sequence[PairRecord], batch_size: int, seed: int, epoch: int) -> list[list[str]]:
    """Shuffled id batches; a record repeating a text already in the batch waits for the next one."""
    if batch_size < 2:
        raise ValueError("batch size must be at least 2")
    if len(train) < batch_size:
        raise ValueError(f"{len(train)} usable records is fewer than batch size {batch_size}")
    order = SplitMix64(derive_seed(seed, "batches", epoch)).permutation(len(train))
    pending = [train[i] for i in order]
    out = []
    while len(pending) >= batch_size:
        batch, texts, rest = [], set(), []
        for k, r in enumerate(pending):
            if len(batch) == batch_size:
                rest.extend(pending[k:])
                break
            if r.text in texts:
                rest.append(r)
            else:
                batch.append(r)
                texts.add(r.text)
        if len(batch) < batch_size:
            break
        out.append([r.id for r in batch])
        pending = rest
    return out


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SynthClass:
    name: str
    keyword: str
    elements: tuple[str, ...]


DEFAULT_CLASSES = (
    SynthClass("photocatalyst", "photocatalyst", ("Zn", "O", "Ti", "S", "Se", "Cd", "Au")),
    SynthClass("cathode", "cathode", ("Li", "Co", "Mn", "Ni", "P", "F", "Rb")),
    SynthClass("superconductor", "superconductor", ("Nb", "Sn", "Y", "Ba", "Cu", "Hg", "Tc")),
    SynthClass("magnet", "magnet", ("Fe", "Nd", "B", "Sm", "Gd", "Cr", "Ho")),
    SynthClass("thermoelectric", "thermoelectric", ("Bi", "Te", "Pb", "Sb", "Ge", "Ag", "Tm")),
    SynthClass("ferroelectric", "ferroelectric", ("K", "Na", "Ta", "Zr", "Hf", "Sr", "U")),
    SynthClass("adsorbent", "adsorbent", ("Si", "Al", "Ca", "Mg", "C", "H", "Th")),
    SynthClass("electrocatalyst", "electrocatalyst", ("Pt", "Pd", "Ru", "Rh", "Ir", "Mo", "Pm")),
    SynthClass("semiconductor", "semiconductor", ("Ga", "As", "In", "N", "Cl", "Be", "Po")),
    SynthClass("scintillator", "scintillator", ("Cs", "I", "La", "Br", "Lu", "Ce", "Ac")),
    SynthClass("refractory", "refractory", ("W", "Re", "Os", "V", "Sc", "Tl", "Pa")),
    SynthClass("phosphor", "phosphor", ("Eu", "Tb", "Dy", "Er", "Yb", "Pr", "Np")),
)

_ANCHORS = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.5, 0.0, 0.5], [0.0, 0.5, 0.0]])
_JITTER = 0.08
_DENSITY_WORDS = ((0.015, "open"), (0.025, "moderate"), (np.inf, "dense"))


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 8
    n_per_class: int = 64
    seed: int = 42
    classes: tuple[SynthClass, ...] = DEFAULT_CLASSES
    id_prefix: str = "syn"

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if not 1 <= self.n_classes <= len(self.classes):
            raise ValueError(f"n_classes must lie in [1, {len(self.classes)}]")
        used = [atomic_number(e) for c in self.active for e in c.elements]
        if len(used) != len(set(used)):
            raise ValueError("class element sets must be disjoint")

    @property
    def active(self) -> tuple[SynthClass, ...]:
        return self.classes[: self.n_classes]


def density_word(structure: CrystalStructure) -> str:
    rho = len(structure) / structure.lattice.volume
    return next(word for limit, word in _DENSITY_WORDS if rho < limit)


def describe(cls: SynthClass, elements: Sequence[int], density: str) -> str:
    """Record text: element names in class order, then density and keyword."""
    order = {atomic_number(e): k for k, e in enumerate(cls.elements)}
    names = " ".join(element_name(z) for z in sorted(elements, key=lambda z: order[z]))
    return f"contains {names}; a {density} {cls.keyword} candidate"


def class_prompt(cls: SynthClass) -> str:
    names = " ".join(element_name(atomic_number(e)) for e in cls.elements)
    return f"contains {names}; a {cls.keyword} candidate"


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def structure_cif(block: str, lattice: Lattice, elements: Sequence[int], frac: np.ndarray) -> str:
    lines = [f"data_{block}", "_symmetry_space_group_name_H-M 'P 1'"]
    for tag, v in zip(("a", "b", "c"), lattice.parameters[:3]):
        lines.append(f"_cell_length_{tag} {_fmt(v)}")
    for tag, v in zip(("alpha", "beta", "gamma"), lattice.parameters[3:]):
        lines.append(f"_cell_angle_{tag} {_fmt(v)}")
    lines += ["loop_", "_symmetry_equiv_pos_as_xyz", "'x, y, z'",
              "loop_", "_atom_site_label", "_atom_site_type_symbol",
              "_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z", "_atom_site_occupancy"]
    for k, (z, f) in enumerate(zip(elements, frac)):
        sym = symbol(int(z))
        lines.append(f"{sym}{k + 1} {sym} {_fmt(f[0])} {_fmt(f[1])} {_fmt(f[2])} 1.0")
    return "\n".join(lines) + "\n"


def synth_corpus(spec: SyntheticSpec, out_dir) -> list[PairRecord]:
    """Write ``manifest.jsonl``, ``cif/*.cif``, ``prompts.txt`` and ``labels.txt`` under ``out_dir``.

    Output depends only on ``spec``; re-running produces identical bytes.
    """
    out = Path(out_dir)
    (out / "cif").mkdir(parents=True, exist_ok=True)
    records = []
    for c_idx, cls in enumerate(spec.active):
        zs = np.array([atomic_number(e) for e in cls.elements])
        for k in range(spec.n_per_class):
            rid = f"{spec.id_prefix}-{cls.name}-{k:04d}"
            rng = SplitMix64(derive_seed(spec.seed, "synth", cls.name, k))
            lengths = rng.uniform(3, low=3.0, high=8.0)
            lattice = Lattice(*[round(float(x), 6) for x in lengths], 90.0, 90.0, 90.0)
            n_sites = min(int(rng.integers(2, 5)), len(zs))  # elements are distinct within a structure
            elements = zs[np.sort(rng.permutation(len(zs))[:n_sites])]
            frac = wrap_frac(_ANCHORS[:n_sites] + rng.uniform((n_sites, 3), -_JITTER, _JITTER))
            frac = np.round(frac, 6) % 1.0
            structure = CrystalStructure(lattice, elements, frac, None)
            text = describe(cls, elements.tolist(), density_word(structure))
            cif_rel = f"cif/{rid}.cif"
            (out / cif_rel).write_text(structure_cif(rid, lattice, elements, frac), encoding="utf-8")
            records.append(PairRecord(rid, cif_rel, text, [cls.name], out))
    write_manifest(records, out / "manifest.jsonl")
    (out / "prompts.txt").write_text("".join(class_prompt(c) + "\n" for c in spec.active), encoding="utf-8")
    (out / "labels.txt").write_text("".join(c.name + "\n" for c in spec.active), encoding="utf-8")
    return records
