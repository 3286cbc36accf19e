from .augment import augment, augment_batch, resize_image
from .checkpoint import CheckpointBundle, CheckpointError, load_checkpoint, save_checkpoint
from .dataset import (
    BadMagic,
    DatasetError,
    ImageDataset,
    Truncated,
    VersionMismatch,
    load_dataset,
    to_bytes,
    write_dataset,
)
from .synthetic import SHAPES, make_synthetic_shapes
from .render import compose_grid, read_ppm, render_grid, write_ppm
