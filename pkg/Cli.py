"""
# Cli.py
ベンチマーク・シナリオ生成・模擬O-DU・rAppのコマンドライン。

## 使い方
```
prb-rapp.py bench run --models sff,deepar --weeks 2,4 --seed 42 --reps 3 --out bench_out
prb-rapp.py bench report bench_out
prb-rapp.py simulate --scenario scenario.json --out data
prb-rapp.py serve-odu --scenario scenario.json --listen 127.0.0.1:7001 --speedup 3600 --log allocations.csv
prb-rapp.py rapp run --config config.json
```

終了コード: 0 成功、1 実行時エラー（エラー行を含む）、2 使い方の誤り
"""

import argparse
import logging
import signal
import sys
import threading
from dataclasses import replace
from typing import List, Optional

import Bench
import Traffic
from Bench import BenchmarkError, BenchmarkSpec
from Config import AppConfig, setup_logging
from EstimatorType import KINDS, EstimatorConfig, EstimatorError
from O1Client import O1Client, O1ConnectionError
from OduServer import OduServer
from RApp import RApp
from TrafficType import BENCHMARK_WEEKS, ScenarioError


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _csv_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _install_signal_handlers(shutdown_event: threading.Event, logger: logging.Logger) -> None:
    """SIGINT / SIGTERM で shutdown_event を立てる（メインスレッドのみ）"""
    if threading.current_thread() is not threading.main_thread():
        return

    def handler(signum, frame):
        logger.info(f"シグナル {signum} を受信しました。停止します...")
        shutdown_event.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prb-rapp",
        description="PRB需要予測rAppのベンチマークと模擬O-RAN環境",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    bench = commands.add_parser("bench", help="モデル比較ベンチマーク")
    bench_commands = bench.add_subparsers(dest="bench_command", required=True)
    bench_run = bench_commands.add_parser("run", help="ベンチマークを実行する")
    bench_run.add_argument("--models", type=_csv_list, default=list(KINDS), help="カンマ区切り (lstm,sff,deepar,transformer)")
    bench_run.add_argument(
        "--weeks", type=lambda text: [int(w) for w in _csv_list(text)], default=list(BENCHMARK_WEEKS), help="カンマ区切り (2,4,10,20)"
    )
    bench_run.add_argument("--seed", type=int, default=42)
    bench_run.add_argument("--reps", type=int, default=3)
    bench_run.add_argument("--out", default="bench_out")
    bench_run.add_argument("--parallel", action="store_true", help="セルを並列実行する（時間は比較不可）")
    bench_run.add_argument("--scenario-kind", default="default", choices=["default", "seasonal_ar"])
    bench_run.add_argument("--epochs", type=int, default=None, help="エポック数を上書きする")
    bench_run.add_argument("--config", default=None, help="model セクションとログ設定を読む設定ファイル")
    bench_run.add_argument("--save-predictors", action="store_true", help="学習済み予測器を <out>/predictors に保存する")
    bench_report = bench_commands.add_parser("report", help="結果ディレクトリから表を作る")
    bench_report.add_argument("dir")

    simulate = commands.add_parser("simulate", help="シナリオからCSVを生成する")
    simulate.add_argument("--scenario", required=True)
    simulate.add_argument("--out", required=True)

    serve = commands.add_parser("serve-odu", help="模擬O-DUを起動する")
    serve.add_argument("--scenario", required=True)
    serve.add_argument("--listen", default="127.0.0.1:7001")
    serve.add_argument("--speedup", type=float, default=3600.0)
    serve.add_argument("--log", default=None, help="停止時に割り当てログを書き出すCSV")
    serve.add_argument("--config", default=None, help="ログ設定を読む設定ファイル")

    rapp = commands.add_parser("rapp", help="rAppを実行する")
    rapp_commands = rapp.add_subparsers(dest="rapp_command", required=True)
    rapp_run = rapp_commands.add_parser("run", help="O-DUに接続してパイプラインを回す")
    rapp_run.add_argument("--config", default="config.json")
    rapp_run.add_argument("--stop-after-hours", type=int, default=None)
    return parser


# ----------
# ---サブコマンド
# ----------
def cmd_bench_run(args: argparse.Namespace) -> int:
    config = AppConfig(args.config)
    setup_logging(config)
    model_config = EstimatorConfig.from_dict(config.section("model"))
    if args.epochs is not None:
        model_config = replace(model_config, epochs=args.epochs)
    spec = BenchmarkSpec(
        models=tuple(args.models),
        weeks=tuple(args.weeks),
        seed=args.seed,
        repetitions=args.reps,
        out_dir=args.out,
        scenario_kind=args.scenario_kind,
        parallel=args.parallel,
        model_config=model_config,
        save_predictors=args.save_predictors,
    )
    rows = Bench.run(spec)
    result = Bench.report(rows, spec.out_dir)
    print(result.table, end="")
    return result.exit_code


def cmd_bench_report(args: argparse.Namespace) -> int:
    result = Bench.report(args.dir)
    print(result.table, end="")
    return result.exit_code


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = Traffic.load_scenario(args.scenario)
    series_list = Traffic.generate_scenario(scenario, args.out)
    print(f"{len(series_list)} テナント × {scenario.hours} 時間を {args.out} に書き出しました")
    return EXIT_OK


def cmd_serve_odu(args: argparse.Namespace) -> int:
    config = AppConfig(args.config)
    logger = setup_logging(config)
    scenario = Traffic.load_scenario(args.scenario)
    server = OduServer(scenario, args.listen, speedup=args.speedup, allocation_log=args.log)
    stop = threading.Event()
    _install_signal_handlers(stop, logger)
    server.start()
    try:
        while not stop.wait(config.get("system", "loop_interval", 0.05)):
            pass
    finally:
        server.shutdown()
    return EXIT_OK


def cmd_rapp_run(args: argparse.Namespace) -> int:
    config = AppConfig(args.config)
    setup_logging(config)
    logger = logging.getLogger("RApp")
    shutdown_event = threading.Event()
    _install_signal_handlers(shutdown_event, logger)
    client = O1Client(
        config.get("o1", "endpoint", "127.0.0.1:7001"),
        read_timeout=config.get("o1", "read_timeout", 0.1),
        connect_attempts=config.get("o1", "connect_attempts", 10),
        reconnect_backoff=config.get("o1", "reconnect_backoff", 0.2),
        horizon=config.get("model", "horizon", 24),
        logger=logger.getChild("O1Client"),
    )
    rapp = RApp(config, client, logger, shutdown_event)
    summary = rapp.run(args.stop_after_hours)
    print(
        f"テナント {len(summary['tenants'])}, 決定 {summary['decisions']}, "
        f"送信 {summary['actuated']}, エラー {len(summary['errors'])}"
    )
    return EXIT_OK if not summary["errors"] else EXIT_FAILURE


COMMANDS = {
    ("bench", "run"): cmd_bench_run,
    ("bench", "report"): cmd_bench_report,
    ("simulate", None): cmd_simulate,
    ("serve-odu", None): cmd_serve_odu,
    ("rapp", "run"): cmd_rapp_run,
}


def main(argv: Optional[List[str]] = None) -> int:
    """メイン関数（終了コードを返す）"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    sub = getattr(args, "bench_command", None) or getattr(args, "rapp_command", None)
    command = COMMANDS[(args.command, sub)]
    try:
        return command(args)
    except (BenchmarkError, EstimatorError, ScenarioError, ValueError) as e:
        print(f"引数エラー: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (O1ConnectionError, OSError) as e:
        print(f"接続エラー: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        print("\nKeyboardInterrupt: 停止します...", file=sys.stderr)
        return EXIT_OK
    except Exception as e:
        print(f"予期しないエラー: {e}", file=sys.stderr)
        return EXIT_FAILURE
