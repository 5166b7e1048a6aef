"""Simulator and protocol library for LED/laser optical covert channels."""

from .codec import (
    OokTiming,
    PwmTiming,
    bit_error_rate,
    deframe,
    frame_payload,
    ook_decode,
    ook_encode,
    pwm_decode,
    pwm_encode,
    pwm_worst_case_rate,
)
from .errors import (
    ConfigurationError,
    DecodeError,
    FitError,
    LedlinkError,
    SyncError,
    TraceFormatError,
)
from .harness import (
    ScenarioConfig,
    ScenarioResult,
    fit_path_model,
    reproduce_paper_tables,
    run_exfiltration,
    run_infiltration,
    sweep,
)
from .presets import load_presets
from .trace import SignalTrace

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DecodeError",
    "FitError",
    "LedlinkError",
    "OokTiming",
    "PwmTiming",
    "ScenarioConfig",
    "ScenarioResult",
    "SignalTrace",
    "SyncError",
    "TraceFormatError",
    "bit_error_rate",
    "deframe",
    "fit_path_model",
    "frame_payload",
    "load_presets",
    "ook_decode",
    "ook_encode",
    "pwm_decode",
    "pwm_encode",
    "pwm_worst_case_rate",
    "reproduce_paper_tables",
    "run_exfiltration",
    "run_infiltration",
    "sweep",
]
