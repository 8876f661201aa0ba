"""A tower of Rust-like core languages (levels 0-3) with fractional region capabilities."""

from .syntax import OxideError, Fraction, fresh_region, frac_halve, frac_merge, level_admits
from .parser import SourceProgram, parse, pretty

__all__ = ["OxideError", "Fraction", "fresh_region", "frac_halve", "frac_merge",
           "level_admits", "SourceProgram", "parse", "pretty"]
