"""On-disk dataset layout: ``image_%04d.ppm``, ``alpha_%04d.pgm16``, ``trimap_%04d.pgm``."""

from __future__ import annotations

import re
from pathlib import Path

from diffmatte.data.pnm import read_pgm, read_ppm, read_trimap, write_pgm, write_ppm, write_trimap
from diffmatte.data.synth import MattingSample

_KEY = re.compile(r"^(?:image|alpha|trimap|pred)_(.+?)\.(?:ppm|pgm16|pgm)$")


def sample_key(filename: str) -> str:
    """Index part of a dataset filename (``alpha_0003.pgm16`` -> ``0003``); the stem otherwise."""
    match = _KEY.match(filename)
    return match.group(1) if match else Path(filename).stem


def write_dataset(out_dir, samples) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        write_ppm(out / f"image_{i:04d}.ppm", s.image)
        write_pgm(out / f"alpha_{i:04d}.pgm16", s.alpha, maxval=65535)
        write_trimap(out / f"trimap_{i:04d}.pgm", s.trimap)


def list_files(directory, prefix: str, suffix: str) -> dict[str, Path]:
    return {sample_key(p.name): p for p in sorted(Path(directory).glob(f"{prefix}_*{suffix}"))}


def read_dataset(directory) -> list[MattingSample]:
    images = list_files(directory, "image", ".ppm")
    alphas = list_files(directory, "alpha", ".pgm16")
    trimaps = list_files(directory, "trimap", ".pgm")
    if not images:
        raise FileNotFoundError(f"no image_*.ppm files in {directory}")
    out = []
    for key in sorted(images):
        if key not in alphas or key not in trimaps:
            raise FileNotFoundError(f"sample {key} in {directory} lacks an alpha or trimap file")
        out.append(MattingSample(read_ppm(images[key]), read_pgm(alphas[key]), read_trimap(trimaps[key]), key))
    return out
