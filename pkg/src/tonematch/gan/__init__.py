from .losses import LossWeights, adversarial_loss, fm_loss, lsgan_loss, multiscale_fm_loss, perceptual_loss
from .models import (Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, MultiScaleGenerator,
                     PatchDiscriminator, PerceptualNet, build_discriminator, build_generator, describe_architecture,
                     discriminator_table, generator_table, patch_map_size, receptive_field, table_param_count)
from .train import (StepReport, TrainConfig, Trainer, TrainingDivergedError, generator_state, overfit, parse_config)
from .infer import infer, load_generator, predict_luminance, time_inference
