"""Semi-supervised feature selection with a self-supervised pretext task
and batch attention. See README.md for the command-line workflow."""

__version__ = "0.1.0"
