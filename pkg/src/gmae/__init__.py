"""Classification, reduction and singular solutions of generalized
Monge-Ampere systems ``z_xx = a z_xy, z_xy = a z_yy``."""

from gmae.symexpr import Expr, parse, diff, evaluate, is_identically_zero
from gmae.model import AlphaSystem, GeneralGmas, JetPoint, OneForm

__all__ = [
    "Expr",
    "parse",
    "diff",
    "evaluate",
    "is_identically_zero",
    "AlphaSystem",
    "GeneralGmas",
    "JetPoint",
    "OneForm",
]

__version__ = "0.1.0"
