"""Patient ADE risk prediction from claim-code histories."""
from .claims import ClaimCode, ClaimHistory, CodeType, Encounter, cohort_stats, parse_cohort, write_cohort
from .embedding import Vocabulary, build_vocabulary, embed_sequence, train_skipgram
from .labeling import LabeledInstance, LabelingConfig, build_cohort, label_patient, split_cohort
from .nn import FlatLstmModel, HtnnrModel, build_model, forward, load_checkpoint, save_checkpoint
from .synthetic import GeneratorConfig, generate
from .training import MetricsReport, TrainConfig, bce_loss, evaluate, train

__version__ = "0.1.0"
