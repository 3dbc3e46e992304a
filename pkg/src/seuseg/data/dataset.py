"""On-disk dataset directory.

::

    manifest.txt        key = value lines
    captions.txt        one caption per sample, in index order
    images/NNNN.seut    tensor "image" [3, H, W]
    masks/NNNN.pgm      foreground mask
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError
from .mask_io import read_pgm, write_pgm
from .synth import FORMAT_VERSION, DatasetManifest, Sample
from .tensor_io import load_tensors, save_tensors
from .vocab import tokenize


@dataclass
class Dataset:
    manifest: DatasetManifest
    images: np.ndarray       # [n, 3, H, W]
    token_ids: np.ndarray    # [n, N]
    masks: np.ndarray        # [n, 2, H, W] one-hot
    captions: list[str]

    def __len__(self) -> int:
        return len(self.captions)

    def split(self, name: str) -> "Dataset":
        idx = list(self.manifest.split_indices(name))
        return Dataset(self.manifest, self.images[idx], self.token_ids[idx], self.masks[idx],
                       [self.captions[i] for i in idx])

    @classmethod
    def from_samples(cls, samples: list[Sample], manifest: DatasetManifest) -> "Dataset":
        return cls(manifest,
                   np.stack([s.image for s in samples]),
                   np.stack([s.token_ids for s in samples]),
                   np.stack([s.mask for s in samples]),
                   [s.caption for s in samples])


def _manifest_text(m: DatasetManifest) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(m).items())


def _parse_manifest(text: str) -> DatasetManifest:
    names = {f.name for f in fields(DatasetManifest)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = (s.strip() for s in line.partition("="))
        if not sep or key not in names:
            raise FormatError(f"manifest line {lineno}: unexpected entry {line!r}")
        try:
            values[key] = int(raw)
        except ValueError:
            raise FormatError(f"manifest line {lineno}: {key} must be an integer, got {raw!r}") from None
    missing = names - values.keys() - {"max_tokens", "format_version"}
    if missing:
        raise FormatError(f"manifest missing keys {sorted(missing)}")
    if values.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset format version {values['format_version']}")
    return DatasetManifest(**values)


def save_dataset(out_dir, samples: list[Sample], manifest: DatasetManifest) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        save_tensors(out / "images" / f"{i:04d}.seut", {"image": s.image})
        write_pgm(out / "masks" / f"{i:04d}.pgm", s.foreground)
    (out / "captions.txt").write_text("".join(s.caption + "\n" for s in samples), encoding="utf-8")
    (out / "manifest.txt").write_text(_manifest_text(manifest), encoding="utf-8")
    return out


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    if not (root / "manifest.txt").is_file():
        raise DataError(f"{root} is not a dataset directory (no manifest.txt)")
    manifest = _parse_manifest((root / "manifest.txt").read_text(encoding="utf-8"))
    captions = (root / "captions.txt").read_text(encoding="utf-8").splitlines()
    if len(captions) != manifest.count:
        raise DataError(f"captions.txt has {len(captions)} lines, manifest declares {manifest.count}")
    images, masks = [], []
    for i in range(manifest.count):
        tensors = load_tensors(root / "images" / f"{i:04d}.seut")
        if "image" not in tensors or tensors["image"].shape != (3, manifest.size, manifest.size):
            raise DataError(f"images/{i:04d}.seut: expected tensor 'image' of shape (3, {manifest.size}, "
                            f"{manifest.size})")
        images.append(tensors["image"])
        fg = read_pgm(root / "masks" / f"{i:04d}.pgm").astype(np.float64)
        if fg.shape != (manifest.size, manifest.size):
            raise DataError(f"masks/{i:04d}.pgm has shape {fg.shape}")
        masks.append(np.stack([1.0 - fg, fg]))
    ids = np.stack([tokenize(c, manifest.max_tokens) for c in captions])
    return Dataset(manifest, np.stack(images), ids, np.stack(masks), captions)
