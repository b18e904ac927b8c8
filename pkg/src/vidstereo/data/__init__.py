"""Stereo video data: synthetic generation, file formats, ingestion and export."""

from .pfm import PFMError, read_pfm, write_pfm
from .ply import export_pointcloud
from .sequence_io import load_sequence, save_sequence
from .synthetic import (
    Layer,
    SceneSpec,
    SyntheticDataset,
    dump_scene,
    generate_scene,
    parse_scene,
    random_scene_spec,
)
from .types import DisparityVideo, StereoSequence
