"""
# Bench.py
4モデル × 学習データ長（2, 4, 10, 20週）のベンチマークと結果の集計。

各セルでシナリオを作り、80:20 に分割して学習し、テスト区間をローリング評価する。
MSEは1回目の繰り返しの値（シード固定で決定的）、時間は繰り返しの平均と標準偏差。

## 使い方
```python
import Bench
from Bench import BenchmarkSpec

spec = BenchmarkSpec(models=("sff", "deepar"), weeks=(2, 4), repetitions=1, out_dir="bench_out")
rows = Bench.run(spec)
result = Bench.report("bench_out")
print(result.table)
```

出力ファイル:
- results.csv: model,weeks,mse,...（1行1セル）
- summary.json: 傾向チェック（情報のみ）と実行条件
- telemetry_<model>_<phase>.csv: 最長データ長でのメモリサンプル
- predictors/<model>_<weeks>w.prbm, .json: save_predictors のときの学習済み予測器
- table.txt, mse_by_weeks.csv, train_seconds_by_weeks.csv, predict_ms_by_weeks.csv: report の出力
"""

import json
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import Estimator
import Series
import Traffic
from EstimatorType import KINDS, PROBABILISTIC_KINDS, EstimatorConfig, Predictor
from SeriesType import TimeSeries
from Telemetry import TelemetrySampler
from TrafficType import BENCHMARK_WEEKS


logger = logging.getLogger("Bench")

RESULTS_CSV = "results.csv"
SUMMARY_JSON = "summary.json"
TABLE_TXT = "table.txt"
RESULT_COLUMNS = [
    "model",
    "weeks",
    "mse",
    "train_seconds",
    "train_seconds_sd",
    "predict_ms",
    "predict_ms_sd",
    "peak_memory_bytes",
    "coverage_10_90",
    "repetitions",
    "error",
]
PLOT_FILES = {
    "mse": "mse_by_weeks.csv",
    "train_seconds": "train_seconds_by_weeks.csv",
    "predict_ms": "predict_ms_by_weeks.csv",
}
MODEL_LABELS = {"lstm": "LSTM", "sff": "SFF", "deepar": "DeepAR", "transformer": "Transformer"}

Trainer = Callable[[TimeSeries, EstimatorConfig], Any]
COVERAGE_RANGE = (0.65, 0.95)


class BenchmarkError(ValueError):
    """ベンチマーク設定・入力の不正"""


@dataclass(frozen=True)
class BenchmarkSpec:
    """ベンチマークの実行条件

    Attributes:
        models (Tuple[str, ...]): lstm / sff / deepar / transformer の部分集合
        weeks (Tuple[int, ...]): 2 / 4 / 10 / 20 の部分集合
        seed (int): シナリオと学習のシード
        repetitions (int): 繰り返し回数
        out_dir (str): 出力ディレクトリ
        scenario_kind (str): default / seasonal_ar
        parallel (bool): セルを並列に実行する（時間は比較できなくなる）
        model_config (EstimatorConfig): kind と seed 以外のモデル設定
        telemetry_interval (float): メモリサンプリング間隔（秒）
        save_predictors (bool): 1回目の繰り返しの予測器を out_dir/predictors に保存する
    """

    models: Tuple[str, ...] = KINDS
    weeks: Tuple[int, ...] = BENCHMARK_WEEKS
    seed: int = 42
    repetitions: int = 3
    out_dir: str = "bench_out"
    scenario_kind: str = "default"
    parallel: bool = False
    model_config: EstimatorConfig = field(default_factory=EstimatorConfig)
    telemetry_interval: float = 0.1
    save_predictors: bool = False

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(str(m).lower() for m in self.models))
        object.__setattr__(self, "weeks", tuple(int(w) for w in self.weeks))
        if not self.models or not self.weeks:
            raise BenchmarkError("models と weeks は空にできません")
        unknown = [m for m in self.models if m not in KINDS]
        if unknown:
            raise BenchmarkError(f"未知のモデルです: {unknown}")
        invalid = [w for w in self.weeks if w not in BENCHMARK_WEEKS]
        if invalid:
            raise BenchmarkError(f"データ長は {BENCHMARK_WEEKS} から選ぶ必要があります: {invalid}")
        if self.repetitions < 1:
            raise BenchmarkError(f"repetitions は1以上である必要があります: {self.repetitions}")

    def cells(self) -> List[Tuple[str, int]]:
        return [(model, weeks) for model in self.models for weeks in self.weeks]


@dataclass(frozen=True)
class BenchmarkRow:
    """1セル（モデル × データ長）の結果。エラーのセルは数値が None"""

    model: str
    weeks: int
    mse: Optional[float] = None
    train_seconds: Optional[float] = None
    train_seconds_sd: Optional[float] = None
    predict_ms: Optional[float] = None
    predict_ms_sd: Optional[float] = None
    peak_memory_bytes: Optional[int] = None
    coverage_10_90: Optional[float] = None
    repetitions: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


# ----------
# ---実行
# ----------
def _mean_sd(values: Sequence[float]) -> Tuple[float, float]:
    mean = statistics.mean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, sd


def _default_trainer(series: TimeSeries, cfg: EstimatorConfig):
    return Estimator.train(series, cfg)


def predictor_path(out_dir: Union[str, Path], model: str, weeks: int) -> Path:
    """保存した予測器のパス（拡張子なし。.prbm と .json が並ぶ）"""
    return Path(out_dir) / "predictors" / f"{model}_{weeks}w"


def run_cell(
    spec: BenchmarkSpec,
    model: str,
    weeks: int,
    trainer: Optional[Trainer] = None,
    sampler: Optional[TelemetrySampler] = None,
) -> BenchmarkRow:
    """1セルを repetitions 回実行する。例外はエラー行にする"""
    trainer = trainer or _default_trainer
    cfg = replace(spec.model_config, kind=model, seed=spec.seed)
    sampler = sampler or TelemetrySampler(spec.telemetry_interval)
    try:
        scenario = Traffic.benchmark_scenario(weeks, spec.seed, spec.scenario_kind)
        series = Traffic.generate_scenario(scenario)[0]
        train, test = Series.split_train_test(series, 0.8)

        mse = coverage = None
        train_times: List[float] = []
        predict_times: List[float] = []
        for rep in range(spec.repetitions):
            began = time.perf_counter()
            with sampler.phase("train"):
                predictor = trainer(train, cfg)
            train_times.append(time.perf_counter() - began)
            with sampler.phase("predict"):
                evaluation = Estimator.evaluate(predictor, test, cfg, history=train, seed=spec.seed)
            predict_times.append(evaluation.predict_ms_per_block)
            if rep == 0:
                mse, coverage = evaluation.mse, evaluation.coverage_10_90
                if spec.save_predictors and isinstance(predictor, Predictor):
                    Estimator.save_predictor(predictor, predictor_path(spec.out_dir, model, weeks))
            if not np.isfinite(evaluation.mse) or evaluation.mse < 0:
                raise BenchmarkError(f"MSEが有限ではありません: {evaluation.mse}")
    except Exception as e:
        logger.error(f"{model} / {weeks} 週でエラーが発生しました: {e}")
        return BenchmarkRow(model, weeks, error=f"{type(e).__name__}: {e}")

    train_mean, train_sd = _mean_sd(train_times)
    predict_mean, predict_sd = _mean_sd(predict_times)
    logger.info(f"{model} / {weeks} 週: MSE {mse:.4f}, 学習 {train_mean:.3f} 秒, 予測 {predict_mean:.3f} ミリ秒")
    return BenchmarkRow(
        model=model,
        weeks=weeks,
        mse=float(mse),
        train_seconds=train_mean,
        train_seconds_sd=train_sd,
        predict_ms=predict_mean,
        predict_ms_sd=predict_sd,
        peak_memory_bytes=sampler.peak_rss(),
        coverage_10_90=coverage,
        repetitions=spec.repetitions,
    )


def run(spec: BenchmarkSpec, estimators: Optional[Mapping[str, Trainer]] = None) -> List[BenchmarkRow]:
    """全セルを実行し、results.csv / summary.json / telemetry_*.csv を書き出す

    estimators でモデルごとの学習関数を差し替えられる（戻り値は predict(context, seed) を持つこと）。
    """
    estimators = dict(estimators or {})
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    longest = max(spec.weeks)
    samplers = {cell: TelemetrySampler(spec.telemetry_interval) for cell in spec.cells()}

    def execute(cell: Tuple[str, int]) -> BenchmarkRow:
        model, weeks = cell
        return run_cell(spec, model, weeks, estimators.get(model), samplers[cell])

    started = time.perf_counter()
    if spec.parallel:
        with ThreadPoolExecutor(thread_name_prefix="bench") as pool:
            rows = list(pool.map(execute, spec.cells()))
    else:
        rows = [execute(cell) for cell in spec.cells()]

    for model in spec.models:
        sampler = samplers[(model, longest)]
        for phase in ("train", "predict"):
            sampler.write_csv(out_dir / f"telemetry_{model}_{phase}.csv", phase)

    write_results(rows, out_dir / RESULTS_CSV)
    summary = {
        "seed": spec.seed,
        "repetitions": spec.repetitions,
        "scenario_kind": spec.scenario_kind,
        "models": list(spec.models),
        "weeks": list(spec.weeks),
        "model_config": spec.model_config.to_dict(),
        "timing_comparable": not spec.parallel,
        "rss_available": all(s.rss_available for s in samplers.values()),
        "elapsed_seconds": time.perf_counter() - started,
        "errors": [{"model": r.model, "weeks": r.weeks, "error": r.error} for r in rows if not r.ok],
        "trends": check_trends(rows),
    }
    (out_dir / SUMMARY_JSON).write_text(json.dumps(summary, indent=2, ensure_ascii=False), encoding="utf-8")
    logger.info(f"ベンチマークが完了しました: {len(rows)} セル, {out_dir}")
    return rows


def check_trends(rows: Sequence[BenchmarkRow]) -> Dict[str, Optional[bool]]:
    """論点となる傾向を判定する（計算できないものは None、判定は情報のみ）"""
    cells = {(r.model, r.weeks): r for r in rows if r.ok}
    weeks = sorted({r.weeks for r in cells.values()})
    trends: Dict[str, Optional[bool]] = {
        "mse_decreases_with_data": None,
        "probabilistic_mse_below_lstm": None,
        "sff_trains_fastest": None,
        "predict_faster_than_lstm": None,
        "deepar_mse_below_sff": None,
        "deepar_coverage_calibrated": None,
    }
    if not weeks:
        return trends
    shortest, longest = weeks[0], weeks[-1]
    probabilistic = [m for m in PROBABILISTIC_KINDS if (m, longest) in cells]

    if shortest != longest:
        pairs = [(cells[(m, longest)].mse, cells[(m, shortest)].mse) for m in probabilistic if (m, shortest) in cells]
        if pairs:
            trends["mse_decreases_with_data"] = all(long_mse <= short_mse for long_mse, short_mse in pairs)

    lstm = cells.get(("lstm", longest))
    if lstm is not None and probabilistic:
        trends["probabilistic_mse_below_lstm"] = all(cells[(m, longest)].mse < lstm.mse for m in probabilistic)
        trends["predict_faster_than_lstm"] = all(cells[(m, longest)].predict_ms < lstm.predict_ms for m in probabilistic)

    sff = cells.get(("sff", longest))
    rivals = [cells[(m, longest)] for m in ("deepar", "transformer") if (m, longest) in cells]
    if sff is not None and rivals:
        trends["sff_trains_fastest"] = all(sff.train_seconds < r.train_seconds for r in rivals)

    deepar = cells.get(("deepar", longest))
    if deepar is not None and sff is not None:
        trends["deepar_mse_below_sff"] = deepar.mse < sff.mse
    if deepar is not None and deepar.coverage_10_90 is not None:
        low, high = COVERAGE_RANGE
        trends["deepar_coverage_calibrated"] = low <= deepar.coverage_10_90 <= high
    return trends


# ----------
# ---結果ファイル
# ----------
def results_frame(rows: Sequence[BenchmarkRow]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(r) for r in rows], columns=RESULT_COLUMNS)
    frame["peak_memory_bytes"] = frame["peak_memory_bytes"].astype("Int64")
    return frame


def write_results(rows: Sequence[BenchmarkRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    results_frame(rows).to_csv(path, index=False, lineterminator="\n")
    return path


def _optional(value, cast):
    if value is None or pd.isna(value):
        return None
    return cast(value)


def read_results(path: Union[str, Path]) -> List[BenchmarkRow]:
    """results.csv を BenchmarkRow の列に戻す

    Raises:
        BenchmarkError: ファイルがない、または列が足りない場合
    """
    try:
        frame = pd.read_csv(path, float_precision="round_trip", dtype={"model": str, "error": str})
    except (OSError, pd.errors.EmptyDataError) as e:
        raise BenchmarkError(f"結果ファイルを読み込めません: {e}")
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise BenchmarkError(f"結果ファイルに列がありません: {missing}")
    rows = []
    for record in frame.to_dict("records"):
        rows.append(
            BenchmarkRow(
                model=record["model"],
                weeks=int(record["weeks"]),
                mse=_optional(record["mse"], float),
                train_seconds=_optional(record["train_seconds"], float),
                train_seconds_sd=_optional(record["train_seconds_sd"], float),
                predict_ms=_optional(record["predict_ms"], float),
                predict_ms_sd=_optional(record["predict_ms_sd"], float),
                peak_memory_bytes=_optional(record["peak_memory_bytes"], int),
                coverage_10_90=_optional(record["coverage_10_90"], float),
                repetitions=int(record["repetitions"]),
                error=_optional(record["error"], str),
            )
        )
    return rows


# ----------
# ---レポート
# ----------
@dataclass(frozen=True)
class Report:
    """report の結果

    Attributes:
        table (str): 表形式のテキスト
        exit_code (int): エラー行がなければ 0、あれば 1
        files (List[Path]): 書き出したファイル
    """

    table: str
    exit_code: int
    files: List[Path] = field(default_factory=list)


def _sort_key(row: BenchmarkRow) -> Tuple[int, int]:
    order = KINDS.index(row.model) if row.model in KINDS else len(KINDS)
    return order, row.weeks


def _cell(row: Optional[BenchmarkRow], metric: str) -> str:
    if row is None:
        return "-"
    if not row.ok:
        return "ERROR"
    if metric == "mse":
        return f"{row.mse:.3f}"
    if metric == "train_seconds":
        return f"{row.train_seconds:.2f} ± {row.train_seconds_sd:.2f}"
    return f"{row.predict_ms:.2f} ± {row.predict_ms_sd:.2f}"


def format_table(rows: Sequence[BenchmarkRow]) -> str:
    """モデルごとに MSE / 学習時間 / 予測時間 の3行、列はデータ長"""
    rows = sorted(rows, key=_sort_key)
    weeks = sorted({r.weeks for r in rows})
    models = list(dict.fromkeys(r.model for r in rows))
    cells = {(r.model, r.weeks): r for r in rows}
    metrics = [("mse", "MSE"), ("train_seconds", "Training time (s)"), ("predict_ms", "Prediction time (ms)")]

    header = ["Model", "Metric"] + [f"{w} weeks" for w in weeks]
    body = []
    for model in models:
        for index, (metric, label) in enumerate(metrics):
            name = MODEL_LABELS.get(model, model) if index == 0 else ""
            body.append([name, label] + [_cell(cells.get((model, w)), metric) for w in weeks])

    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = ["  ".join(text.ljust(width) for text, width in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * width for width in widths))
    for line in body:
        lines.append("  ".join(text.ljust(width) for text, width in zip(line, widths)).rstrip())

    errors = [r for r in rows if not r.ok]
    if errors:
        lines.append("")
        lines.append("Errors:")
        for r in errors:
            lines.append(f"  {r.model} / {r.weeks} weeks: {r.error}")
    return "\n".join(lines) + "\n"


def plot_frames(rows: Sequence[BenchmarkRow]) -> Dict[str, pd.DataFrame]:
    """指標ごとに 行=データ長、列=モデル の表"""
    frame = results_frame([r for r in rows if r.ok])
    frames = {}
    for metric in PLOT_FILES:
        pivot = frame.pivot(index="weeks", columns="model", values=metric) if len(frame) else pd.DataFrame()
        frames[metric] = pivot.sort_index()
    return frames


def report(source: Union[str, Path, Sequence[BenchmarkRow]], out_dir: Optional[Union[str, Path]] = None) -> Report:
    """表と作図用CSVを作る

    source がディレクトリなら results.csv を読み、同じディレクトリに書き出す。

    Raises:
        BenchmarkError: 行が1つもない場合
    """
    if isinstance(source, (str, Path)):
        out_dir = Path(source) if out_dir is None else Path(out_dir)
        rows = read_results(Path(source) / RESULTS_CSV)
    else:
        rows = list(source)
    if not rows:
        raise BenchmarkError("レポートする行がありません")

    table = format_table(rows)
    files: List[Path] = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / TABLE_TXT).write_text(table, encoding="utf-8")
        files.append(out_dir / TABLE_TXT)
        for metric, frame in plot_frames(rows).items():
            path = out_dir / PLOT_FILES[metric]
            frame.to_csv(path, lineterminator="\n")
            files.append(path)
    exit_code = 0 if all(r.ok for r in rows) else 1
    return Report(table, exit_code, files)
