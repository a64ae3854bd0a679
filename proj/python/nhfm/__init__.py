"""Neural hierarchical factorization machine for sequential event prediction.

The heavy lifting lives in the C++ extension; this package re-exports it.
"""

from ._core import (
    Checkpoint,
    DataError,
    Dataset,
    DimensionError,
    FormatError,
    NumericalError,
    UsageError,
    auc,
    evaluate,
    load_checkpoint,
    load_dataset,
    mean_ci,
    predict,
    run,
    spauc,
    top_wide_features,
    ttest_ind,
)

__all__ = [
    "Checkpoint",
    "DataError",
    "Dataset",
    "DimensionError",
    "FormatError",
    "NumericalError",
    "UsageError",
    "auc",
    "evaluate",
    "load_checkpoint",
    "load_dataset",
    "main",
    "mean_ci",
    "predict",
    "run",
    "spauc",
    "top_wide_features",
    "ttest_ind",
]


def main(argv=None):
    """Console entry point mirroring the `nhfm` executable."""
    import sys

    code, out, err = run(list(sys.argv[1:] if argv is None else argv))
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code
