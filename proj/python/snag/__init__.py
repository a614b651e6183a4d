"""Python face of the snag core library.

The heavy lifting lives in the snag_core extension; this package re-exports
its operations under a stable name.
"""

from snag_core import (
    __version__,
    apply_dropout,
    apply_gmnm,
    eval_alignment,
    fuse,
    resolve_seed,
    rotate_scores,
    run_cli,
    similarity_matrix,
    summarize_ranks,
)

__all__ = [
    "__version__",
    "apply_dropout",
    "apply_gmnm",
    "eval_alignment",
    "fuse",
    "resolve_seed",
    "rotate_scores",
    "run_cli",
    "similarity_matrix",
    "summarize_ranks",
]
