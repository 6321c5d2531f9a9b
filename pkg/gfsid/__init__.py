"""
GFSID package
Prompt-based prototype learning for generalized few-shot intent detection
"""

from .text_pipeline import Utterance, Vocab, EncoderConfig, MeanPoolEncoder, PrecomputedEncoder
from .prototype_space import PrototypeStore, Stage, classify
from .model import IntentModel
from .training import Preservation, TrainConfig, TrainReport, run_phase1, run_phase2, prepare_preservation
from .evaluation import EpisodeSpec, EvalReport, GfsidSplit, make_split, eval_nonepisodic, eval_episodic
from .data_io import Checkpoint, load_dataset, save_checkpoint, load_checkpoint, load_embeddings
from .synthetic import generate_synthetic

__all__ = [
    'Utterance',
    'Vocab',
    'EncoderConfig',
    'MeanPoolEncoder',
    'PrecomputedEncoder',
    'PrototypeStore',
    'Stage',
    'classify',
    'IntentModel',
    'Preservation',
    'TrainConfig',
    'TrainReport',
    'run_phase1',
    'run_phase2',
    'prepare_preservation',
    'EpisodeSpec',
    'EvalReport',
    'GfsidSplit',
    'make_split',
    'eval_nonepisodic',
    'eval_episodic',
    'Checkpoint',
    'load_dataset',
    'save_checkpoint',
    'load_checkpoint',
    'load_embeddings',
    'generate_synthetic',
]
