#!/usr/bin/env python3
"""
# prb-rapp.py
PRB需要予測rAppのエントリースクリプト。サブコマンドは Cli.py を参照。

## 使い方
```
python prb-rapp.py serve-odu --scenario scenario.json --listen 127.0.0.1:7001 --speedup 3600 &
python prb-rapp.py rapp run --config config.json
```
"""

import sys

from Cli import main


if __name__ == "__main__":
    sys.exit(main())
