from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .store import decode_arrays, encode_arrays, load_arrays, save_arrays
from .study import STAGES, Study, UpstreamError, export_latents, import_latents, run_through

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "STAGES",
    "Study",
    "UpstreamError",
    "decode_arrays",
    "encode_arrays",
    "export_latents",
    "import_latents",
    "load_arrays",
    "load_config",
    "parse_config",
    "run_through",
    "save_arrays",
]
