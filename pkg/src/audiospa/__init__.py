"""Text-steered monaural-to-binaural spatialization with a learned DOA judge."""
from .audio import BinauralClip, MonauralClip, read_binaural, read_mono, write_wav
from .augmentation import EventCatalog, NoisePool, SamplerConfig, TemplateSet, fill_template, sample_scene
from .backbone import AudioSpa, BackboneConfig, l1_loss
from .errors import (
    AudioSpaError,
    CheckpointError,
    ConfigError,
    DomainError,
    EncoderUnavailableError,
    NumericalError,
    TemplateError,
)
from .localization import LocalizationModel, LocalizerConfig, bce_loss, decode_doa, stft_features
from .metrics import EvalReport, doa_acc, doa_mae, sdr, sisdr
from .signal_model import HRIRSet, SpatialScene, compute_delay, make_pair, render_binaural, synth_hrir_set
from .text_conditioning import FMHAPool, StubEncoder, encode_text, get_encoder
from .training import TrainConfig, evaluate, load_generator, load_localizer, train_audiospa, train_localizer

__version__ = "0.1.0"
