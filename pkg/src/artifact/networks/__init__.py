from .layers import Module, checksum
from .model import (
    REPAIR_MODES,
    Discriminator,
    DiscriminatorOutput,
    Generator,
    Network,
    RepairNetwork,
    RepairTrace,
    bottleneck_shape,
    build_models,
    build_network,
    discriminate,
    forward_autoencode,
    forward_damage_repair,
)
from .receptive_field import OVERLAP_NOTE, RFSummary, empirical_receptive_field, receptive_field
from .spec import (
    LayerSpec,
    NetworkSpec,
    SpecError,
    decoder_spec,
    discriminator_spec,
    encoder_spec,
    get_preset,
    parse_layers,
)

__all__ = [
    "OVERLAP_NOTE",
    "REPAIR_MODES",
    "Discriminator",
    "DiscriminatorOutput",
    "Generator",
    "LayerSpec",
    "Module",
    "Network",
    "NetworkSpec",
    "RFSummary",
    "RepairNetwork",
    "RepairTrace",
    "SpecError",
    "bottleneck_shape",
    "build_models",
    "build_network",
    "checksum",
    "decoder_spec",
    "discriminate",
    "discriminator_spec",
    "empirical_receptive_field",
    "encoder_spec",
    "forward_autoencode",
    "forward_damage_repair",
    "get_preset",
    "parse_layers",
    "receptive_field",
]
