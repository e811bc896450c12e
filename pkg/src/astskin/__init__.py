"""Acoustic soft tactile skin: simulator, calibration pipeline, GP models, streaming."""

from .calib import (
    CalibrationGrid,
    Dataset,
    LabeledSample,
    ProtocolSpec,
    calibration_grid,
    default_protocol,
    generate_dataset,
    load_dataset,
    save_dataset,
    split,
)
from .errors import (
    AstskinError,
    ConditioningError,
    ConfigError,
    DomainError,
    InputError,
    ProtocolError,
    ProvenanceError,
    SplitError,
)
from .evaluation import (
    EvalReport,
    TactileEstimate,
    calibration_report,
    emit_report,
    estimate,
    mae,
    realtime_protocol,
)
from .gpr import (
    GPHyperParams,
    GPModel,
    ModelBundle,
    fit,
    kernel,
    load_bundle,
    log_marginal_likelihood,
    predict,
    save_bundle,
    validate,
)
from .signal import (
    FeatureVector,
    SampleBuffer,
    ToneSet,
    frames,
    read_pcm,
    synthesize_measured,
    synthesize_reference,
    tone_magnitudes,
    write_pcm,
)
from .skinsim import (
    ChannelPath,
    ContactState,
    Peg,
    SkinSpec,
    bilayer_spec,
    channel_layout,
    constriction,
    invert_force,
    layer_compressions,
    load_spec,
    save_spec,
    sense,
    single_layer_spec,
    transmission,
    true_force,
)

__version__ = "0.1.0"
