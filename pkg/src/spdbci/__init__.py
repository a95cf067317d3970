"""Geometric learning pipeline for filter-bank EEG motor-imagery
classification on the SPD manifold."""

from . import (  # noqa: F401
    classifier,
    config,
    eeg_io,
    errors,
    filterbank,
    layers,
    model,
    selection,
    spd,
    synth,
    trainer,
)

__version__ = "0.1.0"
