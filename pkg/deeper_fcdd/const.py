"""Define package constants."""
import logging

LOGGER = logging.getLogger(__package__)

CHECKPOINT_MAGIC = b"FCDD1"

# Training protocol defaults (224² inputs, batch 32, 50 epochs, Adam 1e-4/0.9/0.99):
DEFAULT_INPUT_SIZE = (224, 224)
DEFAULT_BATCH_SIZE = 32
DEFAULT_EPOCHS = 50
DEFAULT_LR = 1e-4
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.99
DEFAULT_ADAM_EPSILON = 1e-8
DEFAULT_SPLIT_RATIO = (0.65, 0.15, 0.20)

# Loader pixels in [0, 1] are shifted and scaled to about unit spread before the
# backbone sees them:
INPUT_MEAN = 0.5
INPUT_SCALE = 0.25

DEFAULT_LEAKY_ALPHA = 0.01
DEFAULT_QUARTILE = 0.25
DEFAULT_FAST_TRUNCATE = 7.0
DEFAULT_HISTOGRAM_BINS = 20
DEFAULT_OVERLAY_ALPHA = 0.5

LOG_CLAMP_EPSILON = 1e-12

# ROC-AUC switches from exact pair counting to trapezoidal integration above this:
AUC_PAIR_COUNT_LIMIT = 10_000

LABEL_NORMAL = 0
LABEL_ANOMALOUS = 1
LABEL_DIRS = {"normal": LABEL_NORMAL, "anomalous": LABEL_ANOMALOUS}

SPLIT_TRAIN = "train"
SPLIT_CAL = "cal"
SPLIT_TEST = "test"
SPLITS = (SPLIT_TRAIN, SPLIT_CAL, SPLIT_TEST)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
GROUND_TRUTH_DIR = "ground_truth"

EVENT_EPOCH_COMPLETED = "epoch completed"
EVENT_CHECKPOINT_SAVED = "checkpoint saved"
EVENT_DEGENERATE_MAP = "degenerate map"
