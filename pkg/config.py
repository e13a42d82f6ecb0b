# --- Dataset Settings ---
DATA_ENV_VAR = "LESIONSYNTH_DATA"
DATA_ROOT = ""  # Empty means: use $LESIONSYNTH_DATA or --data
OUTPUT_FOLDER = "outputs"
TEST_FRACTION = 248 / 2594  # 2,346 train / 248 test on the full task-2 set
MASK_THRESHOLD = 127
LABEL_FILE = ""  # Optional CSV: image_id,diagnosis (benign/melanoma)

# --- Map Construction ---
MAP_WIDTH = 1024
MAP_HEIGHT = 512
SUPERPIXEL_SOURCE = "archive"  # "archive" (shipped rasters) or "slic"
SUPERPIXEL_ID_WEIGHTS = (1, 256, 65536)  # id = R + 256*G + 65536*B
SLIC_SEGMENTS = 200
SLIC_COMPACTNESS = 10.0
SLIC_MAX_ITER = 10
PREPARE_WORKERS = 1

# --- Generator (global generator) ---
GEN_BASE_CHANNELS = 64
GEN_NUM_DOWNSAMPLES = 4
GEN_NUM_RESIDUAL_BLOCKS = 9

# --- Discriminator (multi-scale patch) ---
DISC_BASE_CHANNELS = 64
DISC_NUM_LAYERS = 3
DISC_NUM_SCALES = 3

# --- Loss Weights ---
LAMBDA_FM = 10.0

# --- pix2pixHD Training ---
EPOCHS = 200
DECAY_START_EPOCH = 100  # constant lr before, linear decay to 0 after
LEARNING_RATE = 2e-4
ADAM_BETA1 = 0.5
ADAM_BETA2 = 0.999
BATCH_SIZE = 1
SEED = 0
USE_BOUNDARY = True
CHECKPOINT_DIR = "checkpoints"
CHECKPOINT_EVERY = 10
LOADER_WORKERS = 0
DETERMINISTIC = True
WEIGHT_INIT_STD = 0.02

# --- Progressive GAN ---
PGAN_LATENT_DIM = 512
PGAN_FMAP_BASE = 8192
PGAN_FMAP_MAX = 512
PGAN_START_RES = 4
PGAN_TARGET_RES = 256
PGAN_FADE_EPOCHS = 30
PGAN_STABLE_EPOCHS = 30
PGAN_INITIAL_STABLE_EPOCHS = 30
PGAN_LEARNING_RATE = 1e-3
PGAN_BETA1 = 0.0
PGAN_BETA2 = 0.99
PGAN_GP_WEIGHT = 10.0
PGAN_DRIFT = 1e-3
PGAN_BATCH_SIZE = 16
MELANOMA_INDEX = 1  # one-hot position of the melanoma label

# --- Evaluation Harness ---
EVAL_RUNS = 10
EVAL_SET_SIZE = 2346
EVAL_REFERENCE = "Real+Instance+PGAN"
EVAL_CLASSIFIER = "small_cnn"
EVAL_INPUT_SIZE = 128
EVAL_EPOCHS = 10
EVAL_BATCH_SIZE = 32
EVAL_LEARNING_RATE = 1e-3
TTA_REPLICAS = 50
JITTER_LOW = 0.9
JITTER_HIGH = 1.1
SIGNIFICANCE_LEVEL = 0.05
EVAL_WORKERS = 1
