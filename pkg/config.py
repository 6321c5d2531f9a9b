"""
Configuration for the GFSID framework
All paths, constants, presets and defaults in one place
"""
from pathlib import Path
from typing import Dict, List, Optional

from utils.logger import get_logger

logger = get_logger(__name__)

# ============================================================================
# Project Paths
# ============================================================================

# Base directory (where this config file is)
BASE_DIR = Path(__file__).parent

# Default output locations (datasets, checkpoints, reports)
OUTPUT_PATH = BASE_DIR / "runs"

# Logs directory
LOGS_PATH = BASE_DIR / "logs"

# ============================================================================
# Numeric Core
# ============================================================================

# Vectors with a norm below this are rejected as degenerate
EPSILON_NORM = 1e-12

# Adam constants
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Finite-difference oracle
GRADCHECK_STEP = 1e-5
GRADCHECK_RTOL = 1e-3
GRADCHECK_ATOL = 1e-8
GRADCHECK_FIXTURES = 20
GRADCHECK_MAX_DIMS = 8

# ============================================================================
# Text Pipeline / Prototype Space
# ============================================================================

MASK_TOKEN = "[MASK]"
UNK_TOKEN = "[UNK]"
PAD_TOKEN = "[PAD]"
TEMPLATE_SUFFIX = "The intent is to " + MASK_TOKEN

EMBEDDING_DIM = 32
HIDDEN_DIM = 64
PROTOTYPE_DIM = 32

# "seen" = phase-1 training texts only; "train" adds the novel supports (never test texts)
VOCAB_SCOPE = "seen"

# ============================================================================
# Losses / Preservation
# ============================================================================

TAU = 0.1
TAU_KD = 1.0
LAMBDA_L2 = 1.0
MEMORY_RATIO = 0.1

# ============================================================================
# Training Presets
# ============================================================================

DEFAULT_SEED = 1
DEFAULT_PRESET = "desk"

# Phase-2 epochs for an NLUE-like corpus
NLUE_PHASE2_EPOCHS = 15

# Learning rates and batch sizes per preset; "paper" matches a pretrained encoder
TRAIN_PRESETS: Dict[str, Dict[str, float]] = {
    "desk": {
        "phase1_lr": 1e-2,
        "phase2_lr": 1e-3,
        "phase1_epochs": 50,
        "phase2_epochs": 20,
        "batch_size": 16,
    },
    "paper": {
        "phase1_lr": 1e-5,
        "phase2_lr": 1e-4,
        "phase1_epochs": 50,
        "phase2_epochs": 20,
        "batch_size": 64,
    },
    "paper_nlue": {
        "phase1_lr": 1e-5,
        "phase2_lr": 1e-4,
        "phase1_epochs": 50,
        "phase2_epochs": NLUE_PHASE2_EPOCHS,
        "batch_size": 5,
    },
}

# Independent random streams derived from one run seed
STREAM_DATA = 0
STREAM_SPLIT = 1
STREAM_PHASE1 = 2
STREAM_MEMORY = 3
STREAM_PHASE2 = 4
STREAM_EVAL = 5

# ============================================================================
# Evaluation
# ============================================================================

TEST_FRACTION = 0.2
QUERIES_PER_CLASS = 5
DEFAULT_EPISODES = 1000

# ============================================================================
# Synthetic Corpus
# ============================================================================

SIGNATURE_TOKENS = 5
FILLER_TOKENS = 20
SIGNATURE_PROB = 0.6
MIN_UTTERANCE_LEN = 3
MAX_UTTERANCE_LEN = 10

# ============================================================================
# Checkpoint Format
# ============================================================================

CHECKPOINT_MAGIC = b"PRINC1\x00\x00"
CHECKPOINT_VERSION = 1

# ============================================================================
# Display Settings
# ============================================================================

BANNER = """
╔══════════════════════════════════════════════════════════╗
║      GFSID - class-incremental few-shot intent detection ║
╚══════════════════════════════════════════════════════════╝
"""

# ============================================================================
# Configuration Validation
# ============================================================================

def validate_config(output_dir: Optional[Path] = None) -> bool:
    """
    Validate configuration at startup.

    Args:
        output_dir: Directory the current command writes into (defaults to OUTPUT_PATH)

    Returns:
        True if configuration is valid, False otherwise
    """
    errors: List[str] = []

    if DEFAULT_PRESET not in TRAIN_PRESETS:
        errors.append(f"Unknown default preset: {DEFAULT_PRESET}")

    if VOCAB_SCOPE not in ("seen", "train"):
        errors.append(f"Unknown vocab scope: {VOCAB_SCOPE}")

    if not 0.0 < MEMORY_RATIO <= 1.0:
        errors.append(f"MEMORY_RATIO must be in (0, 1], got {MEMORY_RATIO}")

    target = Path(output_dir) if output_dir is not None else OUTPUT_PATH
    for directory in (target, LOGS_PATH):
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            errors.append(f"Cannot create directory {directory}: {e}")

    for error in errors:
        logger.error(f"Configuration error: {error}")

    return not errors
