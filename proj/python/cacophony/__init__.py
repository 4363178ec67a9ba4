"""Two-stage audio-text training and evaluation at desk scale."""

from ._core import (  # noqa: F401
    MEL_BANDS,
    PATCH_DIM,
    SAMPLE_RATE,
    Checkpoint,
    cli,
    generate_corpus,
    gradcheck_primitives,
    info_nce,
    load_checkpoint,
    load_wav,
    make_mask_plan,
    mel_spectrogram,
    modality_gap,
    patchify,
    retrieval_eval,
    sam_perturb,
    schedule_lr,
    train_clap,
    train_mae,
    write_wav,
)

__all__ = [
    "MEL_BANDS",
    "PATCH_DIM",
    "SAMPLE_RATE",
    "Checkpoint",
    "cli",
    "generate_corpus",
    "gradcheck_primitives",
    "info_nce",
    "load_checkpoint",
    "load_wav",
    "make_mask_plan",
    "mel_spectrogram",
    "modality_gap",
    "patchify",
    "retrieval_eval",
    "sam_perturb",
    "schedule_lr",
    "train_clap",
    "train_mae",
    "write_wav",
]
