"""CIF 1.1 reader for the subset of tags needed to build a crystal structure.

Only the first ``data_`` block is read. Save frames and ``global_``/``stop_``
constructs are rejected rather than skipped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

from .crystal import CrystalStructure, DegenerateCellError, Lattice, wrap_frac
from .elements import ElementError, atomic_number

__all__ = [
    "CifError", "CifSyntaxError", "CifMissingDataError", "CifDocument", "Loop", "SymmetryOp",
    "parse", "parse_file", "parse_symop", "cif_float", "to_structure", "format_cif",
    "DegenerateCellError", "ElementError",
]

CELL_TAGS = ("_cell_length_a", "_cell_length_b", "_cell_length_c",
             "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma")
SYMOP_TAGS = ("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz")
DEFAULT_DEDUP_TOL = 0.01


class CifError(ValueError):
    pass


class CifSyntaxError(CifError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CifMissingDataError(CifError):
    pass


@dataclass
class Loop:
    tags: list[str]
    rows: list[list[str | None]]

    def column(self, tag: str) -> list[str | None]:
        k = self.tags.index(tag)
        return [r[k] for r in self.rows]


@dataclass
class CifDocument:
    block: str
    items: dict[str, str | None] = field(default_factory=dict)
    loops: list[Loop] = field(default_factory=list)

    def find_loop(self, tag: str) -> Loop | None:
        for loop in self.loops:
            if tag in loop.tags:
                return loop
        return None

    def values(self, tag: str) -> list[str | None] | None:
        """Column of ``tag`` whether it is a scalar item or a loop column."""
        if tag in self.items:
            return [self.items[tag]]
        loop = self.find_loop(tag)
        return loop.column(tag) if loop is not None else None


# ---------------------------------------------------------------------------
# tokenizer

@dataclass
class _Token:
    text: str
    line: int
    quoted: bool  # quoted strings and text fields are never reserved words or nulls


def _tokenize(text: str):
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    n = 0
    while n < len(lines):
        line = lines[n]
        lineno = n + 1
        if line.startswith(";"):
            body = [line[1:]]
            n += 1
            while n < len(lines) and not lines[n].startswith(";"):
                body.append(lines[n])
                n += 1
            if n >= len(lines):
                raise CifSyntaxError("unterminated semicolon text field", lineno)
            value = "\n".join(body[1:] if body[0].strip() == "" else body)
            yield _Token(value, lineno, True)
            # anything after the closing ';' on that line is tokenized normally
            line = lines[n][1:]
            lineno = n + 1
        pos = 0
        while pos < len(line):
            ch = line[pos]
            if ch.isspace():
                pos += 1
                continue
            if ch == "#":
                break
            if ch in "'\"":
                end = pos + 1
                while True:
                    end = line.find(ch, end)
                    if end < 0:
                        raise CifSyntaxError("unterminated quoted string", lineno)
                    if end + 1 == len(line) or line[end + 1].isspace():
                        break
                    end += 1
                yield _Token(line[pos + 1:end], lineno, True)
                pos = end + 1
                continue
            end = pos
            while end < len(line) and not line[end].isspace():
                end += 1
            yield _Token(line[pos:end], lineno, False)
            pos = end
        n += 1


def _is_reserved(tok: _Token, word: str) -> bool:
    return not tok.quoted and tok.text.lower().startswith(word)


def _is_tag(tok: _Token) -> bool:
    return not tok.quoted and tok.text.startswith("_")


def _value(tok: _Token) -> str | None:
    if not tok.quoted and tok.text in ("?", "."):
        return None
    return tok.text


def parse(text: str) -> CifDocument:
    """Parse the first data block of CIF source text."""
    tokens = list(_tokenize(text))
    pos = 0
    while pos < len(tokens) and not _is_reserved(tokens[pos], "data_"):
        tok = tokens[pos]
        if _is_reserved(tok, "save_") or _is_reserved(tok, "global_"):
            raise CifSyntaxError(f"unsupported construct {tok.text!r}", tok.line)
        pos += 1
    if pos >= len(tokens):
        raise CifMissingDataError("no data_ block found")
    doc = CifDocument(tokens[pos].text[5:])
    pos += 1
    seen: set[str] = set()

    def claim(tag: str, line: int):
        key = tag.lower()
        if key in seen:
            raise CifSyntaxError(f"duplicate tag {tag}", line)
        seen.add(key)
        return key

    while pos < len(tokens):
        tok = tokens[pos]
        if _is_reserved(tok, "data_"):
            break
        if _is_reserved(tok, "save_") or _is_reserved(tok, "global_") or _is_reserved(tok, "stop_"):
            raise CifSyntaxError(f"unsupported construct {tok.text!r}", tok.line)
        if _is_reserved(tok, "loop_") and tok.text.lower() == "loop_":
            start_line = tok.line
            pos += 1
            tags = []
            while pos < len(tokens) and _is_tag(tokens[pos]):
                tags.append(claim(tokens[pos].text, tokens[pos].line))
                pos += 1
            if not tags:
                raise CifSyntaxError("loop_ without tags", start_line)
            cells = []
            while pos < len(tokens):
                t = tokens[pos]
                if _is_tag(t) or (not t.quoted and (t.text.lower() == "loop_" or
                                                    t.text.lower().startswith(("data_", "save_", "global_", "stop_")))):
                    break
                cells.append(_value(t))
                pos += 1
            if len(cells) % len(tags):
                raise CifSyntaxError(
                    f"loop of {len(tags)} tags has {len(cells)} values (not a multiple)", start_line)
            rows = [cells[k:k + len(tags)] for k in range(0, len(cells), len(tags))]
            doc.loops.append(Loop(tags, rows))
            continue
        if _is_tag(tok):
            key = claim(tok.text, tok.line)
            if pos + 1 >= len(tokens):
                raise CifSyntaxError(f"tag {tok.text} has no value", tok.line)
            val = tokens[pos + 1]
            if _is_tag(val) or (not val.quoted and val.text.lower() == "loop_"):
                raise CifSyntaxError(f"tag {tok.text} has no value", tok.line)
            doc.items[key] = _value(val)
            pos += 2
            continue
        raise CifSyntaxError(f"unexpected value {tok.text!r} outside a loop", tok.line)
    return doc


def parse_file(path) -> CifDocument:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(?:\(\d+\))?$")


def cif_float(value: str | None) -> float:
    """Numeric CIF value; a trailing standard uncertainty '(12)' is dropped."""
    if value is None:
        raise CifError("numeric value is missing (? or .)")
    m = _NUMBER.match(value.strip())
    if not m:
        raise CifError(f"not a number: {value!r}")
    return float(m.group(1))


def _needs_quotes(value: str) -> bool:
    return (value == "" or any(c.isspace() for c in value) or value[0] in "_#$'\";[]"
            or value in ("?", ".") or value.lower().startswith(("data_", "loop_", "save_", "global_", "stop_")))


def _format_value(value: str | None) -> str:
    if value is None:
        return "?"
    if "\n" in value:
        return f"\n;\n{value}\n;\n"
    if not _needs_quotes(value):
        return value
    for q in ("'", '"'):
        if f"{q} " not in value and f"{q}\t" not in value and not value.endswith(q):
            return f"{q}{value}{q}"
    return f"\n;\n{value}\n;\n"


def format_cif(doc: CifDocument) -> str:
    """Serialise a document in a form :func:`parse` reads back identically."""
    out = [f"data_{doc.block}"]
    for tag, value in doc.items.items():
        out.append(f"{tag} {_format_value(value)}")
    for loop in doc.loops:
        out.append("loop_")
        out.extend(loop.tags)
        for row in loop.rows:
            out.append(" ".join(_format_value(v) for v in row))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# symmetry


@dataclass(frozen=True)
class SymmetryOp:
    rotation: tuple[tuple[int, int, int], ...]
    translation: tuple[Fraction, Fraction, Fraction]

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.rotation, dtype=np.float64)

    @property
    def shift(self) -> np.ndarray:
        return np.array([float(t) for t in self.translation])

    def apply(self, frac) -> np.ndarray:
        """Image of fractional coordinates (rows) under the operation, unwrapped."""
        return np.asarray(frac, dtype=np.float64) @ self.matrix.T + self.shift


IDENTITY = SymmetryOp(((1, 0, 0), (0, 1, 0), (0, 0, 1)), (Fraction(0), Fraction(0), Fraction(0)))

_TERM = re.compile(r"\s*([+-]?)\s*(?:(\d+(?:\.\d*)?|\.\d+)(?:\s*/\s*(\d+))?\s*(\*?\s*[xyz])?|([xyz]))\s*")


def _parse_component(expr: str, original: str):
    coeffs = [0, 0, 0]
    const = Fraction(0)
    s = expr.strip().lower()
    if not s:
        raise CifError(f"empty component in symmetry operation {original!r}")
    pos = 0
    first = True
    while pos < len(s):
        m = _TERM.match(s, pos)
        if not m or m.end() == pos:
            raise CifError(f"cannot parse symmetry operation {original!r}")
        sign_txt, num, den, num_var, bare_var = m.groups()
        if not sign_txt and not first:
            raise CifError(f"missing operator in symmetry operation {original!r}")
        sign = -1 if sign_txt == "-" else 1
        if bare_var or num_var:
            var = (bare_var or num_var.replace("*", "").strip())
            k = "xyz".index(var)
            scale = 1 if num is None else Fraction(num) / (int(den) if den else 1)
            if scale != 1:
                raise CifError(f"non-unit coefficient in symmetry operation {original!r}")
            coeffs[k] += sign
        else:
            if den is not None:
                value = Fraction(int(num), int(den)) if "." not in num else Fraction(num) / int(den)
            else:
                value = Fraction(num).limit_denominator(24)
            const += sign * value
        pos = m.end()
        first = False
    if any(abs(c) > 1 for c in coeffs):
        raise CifError(f"rotation entry outside {{-1, 0, 1}} in {original!r}")
    return coeffs, const


def parse_symop(expr: str) -> SymmetryOp:
    """Parse an operation such as ``'x,-y+1/2,z'`` into rotation + translation."""
    parts = expr.strip().strip("'\"").split(",")
    if len(parts) != 3:
        raise CifError(f"symmetry operation needs three components: {expr!r}")
    rows, trans = [], []
    for part in parts:
        coeffs, const = _parse_component(part, expr)
        rows.append(tuple(coeffs))
        trans.append(const - (const.numerator // const.denominator))  # reduce into [0, 1)
    det = round(np.linalg.det(np.array(rows, dtype=float)))
    if det not in (-1, 1):
        raise CifError(f"symmetry operation {expr!r} has determinant {det}")
    return SymmetryOp(tuple(rows), tuple(trans))


# ---------------------------------------------------------------------------
# structure


def _site_element(loop: Loop, row: list) -> int:
    cols = loop.tags
    if "_atom_site_type_symbol" in cols and row[cols.index("_atom_site_type_symbol")] is not None:
        return atomic_number(row[cols.index("_atom_site_type_symbol")])
    if "_atom_site_label" in cols and row[cols.index("_atom_site_label")] is not None:
        return atomic_number(row[cols.index("_atom_site_label")])
    raise ElementError("atom site has neither _atom_site_type_symbol nor _atom_site_label")


_SHIFTS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=np.float64)


def _min_periodic_distance(lattice: Lattice, f: np.ndarray, others: np.ndarray) -> float:
    """Smallest periodic Cartesian distance from ``f`` to any row of ``others``."""
    d = f[None, :] - others
    d -= np.round(d)
    cart = (d[:, None, :] + _SHIFTS[None, :, :]) @ lattice.matrix
    return float(np.sqrt((cart * cart).sum(axis=-1)).min())


def symmetry_ops(doc: CifDocument) -> list[SymmetryOp]:
    for tag in SYMOP_TAGS:
        values = doc.values(tag)
        if values:
            return [parse_symop(v) for v in values if v is not None] or [IDENTITY]
    return [IDENTITY]


def to_structure(doc: CifDocument, tol: float = DEFAULT_DEDUP_TOL) -> CrystalStructure:
    """Expand the asymmetric unit by the listed symmetry operations.

    Sites of the same element closer than ``tol`` angstrom (periodically) are
    merged, keeping the first one generated.
    """
    cell = []
    for tag in CELL_TAGS:
        if doc.items.get(tag) is None:
            raise CifMissingDataError(f"missing cell parameter {tag}")
        cell.append(cif_float(doc.items[tag]))
    lattice = Lattice(*cell)

    loop = doc.find_loop("_atom_site_fract_x")
    if loop is None or not {"_atom_site_fract_y", "_atom_site_fract_z"} <= set(loop.tags):
        raise CifMissingDataError("no _atom_site_fract_{x,y,z} loop")
    ops = symmetry_ops(doc)
    cols = loop.tags
    has_occ = "_atom_site_occupancy" in cols

    elements, frac, occupancy, labels = [], [], [], []
    accepted: dict[int, list[np.ndarray]] = {}
    for row in loop.rows:
        z = _site_element(loop, row)
        xyz = np.array([cif_float(row[cols.index(t)]) for t in
                        ("_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z")])
        occ_raw = row[cols.index("_atom_site_occupancy")] if has_occ else None
        occ = 1.0 if occ_raw is None else cif_float(occ_raw)
        label = row[cols.index("_atom_site_label")] if "_atom_site_label" in cols else None
        same = accepted.setdefault(z, [])
        for f in wrap_frac(np.stack([op.apply(xyz) for op in ops])):
            if same and _min_periodic_distance(lattice, f, np.asarray(same)) < tol:
                continue
            same.append(f)
            elements.append(z)
            frac.append(f)
            occupancy.append(occ)
            labels.append(label)
    if not elements:
        raise CifMissingDataError("structure has zero sites")
    return CrystalStructure(lattice, np.array(elements), np.array(frac), np.array(occupancy), labels)
