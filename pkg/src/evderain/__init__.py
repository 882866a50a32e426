"""evderain: point-based event-camera deraining toolkit."""

from .events import Event, EventCloud4D, EventWindow, build_cloud, flatten, load_events
from .curves import SCAN_MODES, SerializedCloud, hilbert_decode, hilbert_encode, \
    morton_decode, morton_encode, serialize
from .loss_metrics import EvalReport, LossConfig, ce_loss, evaluate, fft_loss, \
    label_spectrum, total_loss
from .model import NetworkConfig, init_params, network_forward
from .raingen import RainParams, SceneParams, generate, knn_label
from .ssm import SSMParams, scan_blocked, selective_scan

__version__ = "0.1.0"
