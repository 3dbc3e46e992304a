"""Synthetic referring-segmentation data: vocabulary, generator, metrics and file formats."""

from .dataset import Dataset, load_dataset, save_dataset
from .mask_io import decode_pgm, encode_pgm, read_pgm, write_pgm
from .metrics import dice_score, miou
from .synth import DatasetManifest, Sample, Shape, caption_for, default_splits, rasterize, synth_generate
from .tensor_io import decode_tensors, encode_tensors, load_tensors, save_tensors
from .vocab import PAD_ID, VOCAB, Vocab, detokenize, tokenize

__all__ = [
    "Dataset", "DatasetManifest", "PAD_ID", "Sample", "Shape", "VOCAB", "Vocab", "caption_for",
    "decode_pgm", "decode_tensors", "default_splits", "detokenize", "dice_score", "encode_pgm",
    "encode_tensors", "load_dataset", "load_tensors", "miou", "rasterize", "read_pgm", "save_dataset",
    "save_tensors", "synth_generate", "tokenize", "write_pgm",
]
