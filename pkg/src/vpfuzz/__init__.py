"""Coverage-guided fuzzing of firmware on a small RV32I virtual prototype."""

__version__ = "0.1.0"
