"""Per-object neural fields: encoding, MLP, rendering, losses and training."""

from .losses import LossWeights, RayTargets, compute_losses
from .network import FieldNetwork, positional_encode
from .optim import adam_init, adam_step
from .render import RenderedPixel, composite, render_ray, termination_weights
from .sampling import RayConfig, RaySampleBatch, UnresolvableDepthError, sample_ray
from .train import (RayBatch, TrainConfig, TrainingDiverged, TrainResult, compute_gradients,
                    select_keyframes, train_objects)
from .surface import EmptySurfaceError, Surface, extract_isosurface, extract_surface
from .checkpoint import load_field, load_fields, save_field, save_fields, write_training_log
