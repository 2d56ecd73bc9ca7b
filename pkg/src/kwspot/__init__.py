"""Small-footprint keyword spotting with projected LSTMs trained on
cross-entropy or max-pooling losses, streaming detection and DET/AUC
evaluation."""

from .checkpoint import KwsModel
from .detector import DetectorConfig, fire, smooth, stream_detect
from .evaluator import EvalConfig, auc, classify_spikes, det_sweep, relative_auc_change
from .features import WaveForm, compute_lfbe, stack_context
from .loss import Alignment, maxpool_loss, xent_sequence
from .model import DnnParams, LstmParams, count_params, dnn_forward, lstm_forward
from .trainer import TrainConfig, bptt, run_schedule, sgd_step

__version__ = "0.1.0"
