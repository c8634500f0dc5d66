"""
# Config.py
rAppとシミュレーターO-DUで共通に使う設定管理とログ設定。

## 使い方
```python
from Config import AppConfig, setup_logging

config = AppConfig("config.json")
logger = setup_logging(config, "RApp")
endpoint = config.get("o1", "endpoint", "127.0.0.1:7001")
```

"""

import copy
import json
import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional


DEFAULT_CONFIG: Dict[str, Dict[str, Any]] = {
    "o1": {
        "endpoint": "127.0.0.1:7001",
        "read_timeout": 0.1,
        "ack_timeout": 2.0,
        "connect_attempts": 10,
        "reconnect_backoff": 0.2,
    },
    "model": {
        "kind": "deepar",
        "epochs": 5,
        "batch_size": 1,
        "context_length": 24,
        "horizon": 24,
        "num_eval_samples": 100,
        "seed": 42,
    },
    "policy": {
        "mode": "quantile",
        "quantile_level": 90,
        "rounding": "ceil",
        "min_prbs": 0,
        "max_prbs": 273,
        "cost_under": 9.0,
        "cost_over": 1.0,
    },
    "rapp": {
        "cadence_hours": 24,
        "retention_hours": 3360,
        "train_fraction": 0.8,
        "seed": 42,
        "stop_after_hours": None,
        "idle_timeout": 30.0,
        "analytics_workers": 1,
        "actuate_attempts": 3,
        "actuate_backoff": 0.2,
        "queue_size": 1024,
    },
    "system": {
        "loop_interval": 0.05,
        "shutdown_timeout": 5.0,
    },
    "logging": {
        "level": "INFO",
        "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        "structured": True,
        "file": "prb_rapp.log",
        "max_bytes": 1048576,
        "backup_count": 3,
    },
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class AppConfig:
    """設定管理クラス"""

    def __init__(self, config_path: Optional[str] = "config.json"):
        self.config_path = Path(config_path) if config_path else None
        self.config = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        """設定ファイルを読み込み、デフォルト設定に重ねる"""
        if self.config_path is None:
            return self._get_default_config()
        try:
            if self.config_path.exists():
                with open(self.config_path, "r", encoding="utf-8") as f:
                    return _merge(DEFAULT_CONFIG, json.load(f))
            logging.warning(f"設定ファイル {self.config_path} が見つかりません。デフォルト設定を使用します。")
            return self._get_default_config()
        except (json.JSONDecodeError, IOError) as e:
            logging.error(f"設定ファイル読み込みエラー: {e}")
            return self._get_default_config()

    def _get_default_config(self) -> Dict[str, Any]:
        """デフォルト設定を返す"""
        return copy.deepcopy(DEFAULT_CONFIG)

    @classmethod
    def from_dict(cls, overrides: Dict[str, Any]) -> "AppConfig":
        """辞書から設定を作る（テスト用）"""
        config = cls(None)
        config.config = _merge(DEFAULT_CONFIG, overrides)
        return config

    def get(self, section: str, key: str, default=None):
        """設定値を取得"""
        return self.config.get(section, {}).get(key, default)

    def section(self, section: str) -> Dict[str, Any]:
        """セクション全体のコピーを取得"""
        return dict(self.config.get(section, {}))


class JsonLineFormatter(logging.Formatter):
    """1イベント1行のJSONでログを出力するフォーマッター"""

    def format(self, record: logging.LogRecord) -> str:
        line = {
            "ts": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        event = getattr(record, "event", None)
        if event:
            line["event"] = event
            line.update(getattr(record, "fields", {}) or {})
        if record.exc_info:
            line["exc"] = self.formatException(record.exc_info)
        return json.dumps(line, ensure_ascii=False, default=str)


def log_event(logger: logging.Logger, event: str, message: str, level: int = logging.INFO, **fields) -> None:
    """構造化イベントを1行記録する"""
    logger.log(level, message, extra={"event": event, "fields": fields})


def setup_logging(config: AppConfig, name: Optional[str] = None) -> logging.Logger:
    """ログ設定を初期化

    ロガー ``name``（None ならルートロガー）にファイルハンドラー（ローテーション対応）と
    コンソールハンドラーを一度だけ取り付ける。
    """
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, config.get("logging", "level", "INFO")))
    if logger.handlers:
        return logger

    if config.get("logging", "structured", True):
        formatter: logging.Formatter = JsonLineFormatter()
    else:
        formatter = logging.Formatter(
            config.get("logging", "format", "%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        )

    log_file = config.get("logging", "file")
    if log_file:
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=config.get("logging", "max_bytes", 1048576),
            backupCount=config.get("logging", "backup_count", 3),
            encoding="utf-8",
        )
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    return logger
