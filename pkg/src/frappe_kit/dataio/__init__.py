"""Dataset container format, sequence windowing, splits, and the synthetic builder."""

from .container import (array_from_bytes, array_to_bytes, load_body_model, read_array,
                        read_bundle, read_header, save_body_model, write_array,
                        write_bundle)
from .records import (CLIP_LENGTH, ClipBatch, DatasetManifest, RecordInfo,
                      SequenceRecord, load_dataset_body_model, load_manifest,
                      load_sequence, save_manifest, save_sequence,
                      split_by_participant, window_sequence)
from .synth import (DEFAULT_MOTIONS, FRONT_CAMERA, SynthConfig,
                    build_synthetic_dataset, generate_motion, render_stick_rasters,
                    snap_to_ground)

__all__ = [
    "array_from_bytes", "array_to_bytes", "load_body_model", "read_array",
    "read_bundle", "read_header", "save_body_model", "write_array", "write_bundle",
    "CLIP_LENGTH", "ClipBatch", "DatasetManifest", "RecordInfo", "SequenceRecord",
    "load_dataset_body_model", "load_manifest", "load_sequence", "save_manifest",
    "save_sequence", "split_by_participant", "window_sequence",
    "DEFAULT_MOTIONS", "FRONT_CAMERA", "SynthConfig", "build_synthetic_dataset",
    "generate_motion", "render_stick_rasters", "snap_to_ground",
]
