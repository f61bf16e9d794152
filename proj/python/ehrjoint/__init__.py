"""Panel-data joint modeling under informative visiting and observation."""

try:
    from ehrjoint._core import (  # type: ignore[attr-defined]
        default_config_json,
        fit_dir,
        replicate,
        simulate_to_dir,
        validate_dir,
        __version__,
    )
except ImportError:  # in-tree build: extension sits on sys.path directly
    from _core import (  # type: ignore[no-redef]
        default_config_json,
        fit_dir,
        replicate,
        simulate_to_dir,
        validate_dir,
        __version__,
    )

__all__ = [
    "default_config_json",
    "fit_dir",
    "replicate",
    "simulate_to_dir",
    "validate_dir",
    "__version__",
]
