"""
# Telemetry.py
学習・予測フェーズ中の自プロセスの常駐メモリ（RSS）を一定間隔で記録する。

/proc/self/statm が読めない環境ではフェーズの境界と経過時間だけを記録し、
CSVのヘッダー行に ``# rss=unavailable`` を書く。

## 使い方
```python
from Telemetry import TelemetrySampler

sampler = TelemetrySampler(interval=0.1)
with sampler.phase("train"):
    Estimator.train(series, cfg)
sampler.write_csv("telemetry_sff_train.csv", phase="train")
print(sampler.peak_rss("train"))
```
"""

import os
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Tuple, Union

import pandas as pd


STATM_PATH = Path("/proc/self/statm")
MIN_INTERVAL = 0.05
TELEMETRY_COLUMNS = ["phase", "elapsed_s", "rss_bytes"]


def read_rss() -> Optional[int]:
    """常駐メモリ（バイト）。取得できなければ None"""
    try:
        fields = STATM_PATH.read_text().split()
        return int(fields[1]) * os.sysconf("SC_PAGE_SIZE")
    except (OSError, ValueError, IndexError, AttributeError):
        return None


@dataclass(frozen=True)
class TelemetrySample:
    phase: str
    elapsed_s: float
    rss_bytes: Optional[int]


class TelemetrySampler:
    """フェーズごとのメモリサンプラー（フェーズ中だけ別スレッドで動く）"""

    def __init__(self, interval: float = 0.1, read_memory: Callable[[], Optional[int]] = read_rss):
        if interval < MIN_INTERVAL:
            raise ValueError(f"サンプリング間隔は {MIN_INTERVAL} 秒以上である必要があります: {interval}")
        self.interval = interval
        self.read_memory = read_memory
        self.rss_available = read_memory() is not None
        self.samples: List[TelemetrySample] = []
        self._lock = threading.Lock()

    def _record(self, phase: str, started: float) -> None:
        rss = self.read_memory() if self.rss_available else None
        with self._lock:
            self.samples.append(TelemetrySample(phase, time.perf_counter() - started, rss))

    @contextmanager
    def phase(self, name: str) -> Iterator["TelemetrySampler"]:
        """with ブロックの間、interval ごとにサンプルを取る（開始と終了の境界も記録）"""
        started = time.perf_counter()
        stop = threading.Event()

        def loop():
            while not stop.wait(self.interval):
                self._record(name, started)

        self._record(name, started)
        worker = threading.Thread(target=loop, name=f"telemetry-{name}", daemon=True)
        worker.start()
        try:
            yield self
        finally:
            stop.set()
            worker.join()
            self._record(name, started)

    def telemetry_sample(self, phase: Optional[str] = None) -> List[Tuple[float, Optional[int]]]:
        """(経過秒, RSSバイト) の列"""
        with self._lock:
            return [(s.elapsed_s, s.rss_bytes) for s in self.samples if phase is None or s.phase == phase]

    def peak_rss(self, phase: Optional[str] = None) -> Optional[int]:
        values = [rss for _, rss in self.telemetry_sample(phase) if rss is not None]
        return max(values) if values else None

    def frame(self, phase: Optional[str] = None) -> pd.DataFrame:
        with self._lock:
            rows = [(s.phase, s.elapsed_s, s.rss_bytes) for s in self.samples if phase is None or s.phase == phase]
        frame = pd.DataFrame(rows, columns=TELEMETRY_COLUMNS)
        frame["rss_bytes"] = frame["rss_bytes"].astype("Int64")
        return frame

    def write_csv(self, path: Union[str, Path], phase: Optional[str] = None) -> Path:
        """1行目に ``# rss=available|unavailable``、続けて phase,elapsed_s,rss_bytes"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        marker = "available" if self.rss_available else "unavailable"
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(f"# rss={marker}\n")
            self.frame(phase).to_csv(f, index=False, lineterminator="\n")
        return path


def read_telemetry(path: Union[str, Path]) -> Tuple[bool, pd.DataFrame]:
    """write_csv の出力を (RSSが取れたか, DataFrame) に戻す"""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
    frame = pd.read_csv(path, skiprows=1, dtype={"phase": str})
    return header == "# rss=available", frame
