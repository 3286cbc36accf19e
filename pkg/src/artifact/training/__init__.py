from .buffer import HistoryBuffer, mix_batch
from .config import TrainConfig, config_fields, stream
from .losses import (
    class_accuracy,
    loss_auto,
    loss_discriminator_class,
    loss_mask,
    loss_repair_class,
    mask_accuracy,
)
from .loop import (
    AdversarialRun,
    Models,
    TrainingDiverged,
    build_adversarial,
    build_autoencoder,
    evaluate_discriminator,
    load_adversarial,
    load_autoencoder,
    lr_schedule,
    pretrain_autoencoder,
    reconstruction_mse,
    train_adversarial,
)
