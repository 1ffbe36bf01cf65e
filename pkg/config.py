import os
from dotenv import load_dotenv

load_dotenv()

# Dataset Configuration
KAGGLE_DATASET_NAME = os.getenv("BTM_KAGGLE_DATASET", "")
DATA_DIR = os.getenv("BTM_DATA_DIR", "./data")
OUTPUT_DIR = os.getenv("BTM_OUTPUT_DIR", "./runs")

# Label order follows the confusion-matrix rows used in every report
CLASS_NAMES = ["Glioma", "Pituitary", "Meningioma"]
NUM_CLASSES = len(CLASS_NAMES)

# External record layout (MATLAB struct paths); overridable per import
EXTERNAL_KEY_MAP = {
    "image": "cjdata/image",
    "mask": "cjdata/tumorMask",
    "label": "cjdata/label",
    "patient_id": "cjdata/PID",
}
# source label -> native label (source: 1 meningioma, 2 glioma, 3 pituitary)
EXTERNAL_LABEL_MAP = {1: 2, 2: 0, 3: 1}
EXTERNAL_EXPECTED_SIZE = 512

# Enhancement Settings
MEDIAN_KERNEL = 5
CLAHE_TILES = (8, 8)
CLAHE_CLIP_LIMIT = 2.0
CLAHE_BINS = 256

# Region Of Interest Settings
BINARIZE_THRESHOLD = 0.5
FULL_SCALE_HALF_WINDOW = 128
DESK_HALF_WINDOW = 32
CROP_MODE = "drop"  # "drop" or "clamp"
EMPTY_PREDICTION_FALLBACK = "center"  # "center" or "drop"

# Synthetic Phantom Settings
SYNTH_SIZE = 128
SYNTH_SAMPLES = 600
SYNTH_IMPULSE_FRACTION = 0.002
SYNTH_NOISE_STD = 0.03

# Network Configuration
FULL_SCALE_CHANNELS = (64, 128, 256, 512)
FULL_SCALE_FC_HIDDEN = 1024
DESK_MAIN_CHANNELS = (8, 16, 32, 64)
DESK_REGION_CHANNELS = (4, 8, 16, 32)

# Training Configuration
FULL_SCALE_EPOCHS = 150
DESK_EPOCHS = 30
LEARNING_RATE = 0.001
MOMENTUM = 0.9
BATCH_SIZE = 4
NUM_FOLDS = 5
DEFAULT_SEED = 0

# Loss Configuration (segmentation:classification = 2:1)
ALPHA_SEG = 2.0
ALPHA_CLS = 1.0
OMEGA0 = 10.0
SIGMA = 5.0

# Checkpoint Configuration
CHECKPOINT_FORMAT_VERSION = 1

# Logging Configuration
LOG_LEVEL = os.getenv("BTM_LOG_LEVEL", "INFO")
LOG_DIR = os.getenv("BTM_LOG_DIR", "logs")
LOG_FILE = "brain_tumor_pipeline.log"

# Gradient Check Settings
GRADCHECK_STEP = 1e-6
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_POINTS = 10
