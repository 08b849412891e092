"""
CLI / JSON 設定の読み込みと、コマンドラインフラグによる上書き
"""
import json
from typing import Any, Dict, Optional

from src.schemas import CliConfig
from src.utils.io import read_text

# --mode の値 → (stages, mode, iva_mode)
MODES = {
    "offline": ("dualsep", "offline", None),
    "streaming": ("dualsep", "streaming", "block_online"),
    "dsp-only": ("bf_iva", "offline", None),
    "bf-only": ("bf", "offline", None),
}


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected true or false, got {value!r}")


def load_config(path: Optional[str] = None) -> CliConfig:
    """JSONファイル（CliConfig と同じ構造）を読む。path が None なら既定値"""
    if not path:
        return CliConfig()
    return CliConfig.model_validate(json.loads(read_text(path)))


def apply_overrides(
    config: CliConfig,
    *,
    seed: Optional[int] = None,
    mode: Optional[str] = None,
    variant: Optional[str] = None,
    causal: Optional[bool] = None,
    weights: Optional[str] = None,
    encoder_mode: Optional[str] = None,
) -> CliConfig:
    """フラグで指定された値だけを上書きし、全体をもう一度検証する"""
    data: Dict[str, Any] = config.model_dump(mode="json")
    pipeline = data["pipeline"]
    if seed is not None:
        data["dataset"]["seed"] = seed
        data["bench"]["seed"] = seed
    if mode is not None:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; choose one of {sorted(MODES)}")
        stages, run_mode, iva_mode = MODES[mode]
        pipeline["stages"] = stages
        pipeline["mode"] = run_mode
        if iva_mode is not None:
            pipeline["iva_mode"] = iva_mode
    if variant is not None:
        pipeline["model"]["variant"] = variant
    if causal is not None:
        pipeline["model"]["causal"] = causal
    if encoder_mode is not None:
        pipeline["model"]["encoder_mode"] = encoder_mode
    if weights is not None:
        pipeline["weights_path"] = weights
    return CliConfig.model_validate(data)
