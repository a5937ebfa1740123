"""Element symbols and names for Z = 1..103."""

import re

SYMBOLS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni "
    "Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe "
    "Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg "
    "Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr"
).split()

NAMES = (
    "hydrogen helium lithium beryllium boron carbon nitrogen oxygen fluorine neon "
    "sodium magnesium aluminium silicon phosphorus sulfur chlorine argon potassium "
    "calcium scandium titanium vanadium chromium manganese iron cobalt nickel copper "
    "zinc gallium germanium arsenic selenium bromine krypton rubidium strontium "
    "yttrium zirconium niobium molybdenum technetium ruthenium rhodium palladium "
    "silver cadmium indium tin antimony tellurium iodine xenon caesium barium "
    "lanthanum cerium praseodymium neodymium promethium samarium europium gadolinium "
    "terbium dysprosium holmium erbium thulium ytterbium lutetium hafnium tantalum "
    "tungsten rhenium osmium iridium platinum gold mercury thallium lead bismuth "
    "polonium astatine radon francium radium actinium thorium protactinium uranium "
    "neptunium plutonium americium curium berkelium californium einsteinium fermium "
    "mendelevium nobelium lawrencium"
).split()

assert len(SYMBOLS) == len(NAMES) == 103

Z_MAX = 103
_BY_SYMBOL = {s: z for z, s in enumerate(SYMBOLS, start=1)}
_LEADING = re.compile(r"[A-Za-z]{1,2}")


class ElementError(ValueError):
    pass


def atomic_number(token: str) -> int:
    """Resolve a CIF type symbol or label ('Zn2+', 'O1', 'CL') to Z.

    Case is normalised (first letter upper, second lower); trailing charges,
    digits and label suffixes are ignored. A two-letter match is preferred,
    then a one-letter one.
    """
    m = _LEADING.match(token.strip())
    if not m:
        raise ElementError(f"unresolvable element symbol {token!r}")
    letters = m.group(0)
    two = letters[0].upper() + letters[1:].lower()
    if len(two) == 2 and two in _BY_SYMBOL:
        return _BY_SYMBOL[two]
    one = letters[0].upper()
    if one in _BY_SYMBOL:
        return _BY_SYMBOL[one]
    raise ElementError(f"unresolvable element symbol {token!r}")


def symbol(z: int) -> str:
    return SYMBOLS[z - 1]


def name(z: int) -> str:
    return NAMES[z - 1]
