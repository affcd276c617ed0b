# version.py

ENGINE_VERSION = "0.4.0"
CHECKPOINT_FORMAT_VERSION = 1
DATASET_FORMAT_VERSION = "SEMGRAPH v1"

APP_NAME = "SemGraph"
