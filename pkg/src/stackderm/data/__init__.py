from .io import (SEXES, SITES, Sample, decode_ppm, encode_ppm, load_manifest, read_ppm,
                 write_dataset, write_ppm)
from .preprocess import (MetaStats, apply_metadata, encode_metadata, fit_metadata,
                         pad_to_square, prepare_image, resize_bilinear, stack_images)
from .split import SplitAssignment, group_split, split_samples
from .synth import SynthConfig, synth_generate

__all__ = [
    "SEXES", "SITES", "MetaStats", "Sample", "SplitAssignment", "SynthConfig",
    "apply_metadata", "decode_ppm", "encode_metadata", "encode_ppm", "fit_metadata",
    "group_split", "load_manifest", "pad_to_square", "prepare_image", "read_ppm",
    "resize_bilinear", "split_samples", "stack_images", "synth_generate",
    "write_dataset", "write_ppm",
]
