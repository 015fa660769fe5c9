"""Sinc front-end, residual encoder, dictionary pooling, heads and checkpoints."""

from timbre.model.checkpoint import (Checkpoint, check_body, load_into, model_from_checkpoint,
                                     snapshot, swap_head)
from timbre.model.network import (EncoderConfig, HeadConfig, InstrumentModel, LDEConfig,
                                  ModelConfig, build_model, count_params, enumerate_params,
                                  lde_pool)
from timbre.model.sinc import (SincFrontend, SincFrontendConfig, effective_cutoffs,
                               frontend_forward, hz_to_mel, mel_init, mel_to_hz, sinc_kernels)

__all__ = [
    "Checkpoint", "EncoderConfig", "HeadConfig", "InstrumentModel", "LDEConfig", "ModelConfig",
    "SincFrontend", "SincFrontendConfig", "build_model", "check_body", "count_params",
    "effective_cutoffs", "enumerate_params", "frontend_forward", "hz_to_mel", "lde_pool",
    "load_into", "mel_init", "mel_to_hz", "model_from_checkpoint", "sinc_kernels", "snapshot",
    "swap_head",
]
