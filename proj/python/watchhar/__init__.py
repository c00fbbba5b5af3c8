"""Streaming two-stage IMU/audio activity recognizer."""

from ._core import (
    ConfigError,
    CorruptionError,
    DomainError,
    Error,
    FormatError,
    IoError,
    Model,
    NotReadyError,
    OverflowError,
    ParseError,
    RateError,
    ShapeError,
    StreamError,
    ValidationError,
    VersionError,
    WeightArchive,
    binary_f1,
    context_accuracy,
    count_flops,
    logmel,
    mel_filterbank,
    naive_dft_power,
    power_stft,
    preset_names,
    run_session,
    to_f16_roundtrip,
    weighted_f1,
    write_fixtures,
)

__version__ = "0.1.0"
