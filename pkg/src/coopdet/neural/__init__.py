from .gradcheck import grad_check, numeric_grad, rel_error
from .network import (
    Activations,
    Conv,
    MaxPool2,
    Network,
    NetworkConfig,
    ShapeError,
    StaleActivations,
    backward,
    forward,
)
from .presets import (
    PRESETS,
    decoder,
    detector_head,
    encoder,
    fscod_fec,
    fscod_last_layer,
    table1_fec,
    tiny_fec,
    tiny_head,
)
from .serialize import (
    CorruptModelFile,
    ModelFileError,
    ModelShapeMismatch,
    UnsupportedModelVersion,
    load_model,
    save_model,
)
