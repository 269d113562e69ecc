"""Synthetic matting data, compositing, trimaps and portable image I/O."""

from diffmatte.data.io import read_dataset, write_dataset
from diffmatte.data.pnm import (
    PnmError,
    PnmHeaderError,
    PnmTruncatedError,
    read_pgm,
    read_ppm,
    read_trimap,
    write_pgm,
    write_ppm,
    write_trimap,
)
from diffmatte.data.synth import (
    MattingSample,
    SyntheticSample,
    composite,
    gen_background,
    gen_dataset,
    gen_foreground,
    gen_sample,
    is_degenerate,
    make_trimap,
    random_crop_flip,
)

__all__ = [
    "MattingSample",
    "PnmError",
    "PnmHeaderError",
    "PnmTruncatedError",
    "SyntheticSample",
    "composite",
    "gen_background",
    "gen_dataset",
    "gen_foreground",
    "gen_sample",
    "is_degenerate",
    "make_trimap",
    "random_crop_flip",
    "read_dataset",
    "read_pgm",
    "read_ppm",
    "read_trimap",
    "write_dataset",
    "write_pgm",
    "write_ppm",
    "write_trimap",
]
