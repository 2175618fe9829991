from .autograd import ShapeError, Tensor
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .losses import NumericError, box_l1_loss, focal_loss, weighted_bce_loss
from .models import DetectorModel, SegmenterModel, detector_decode, encode_targets
from .optim import Adam, AdamState, adam_step
from .train import (CONDITIONS, History, InvalidFoldError, SampleSet, TrainConfig, TrainingError,
                    class_weight, detector_samples, segmentation_samples, train_detector,
                    train_segmenter)
