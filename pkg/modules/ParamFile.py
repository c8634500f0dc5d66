"""
# ParamFile.py
学習済みパラメータのバイナリ形式。

レイアウト（リトルエンディアン）:
    b"PRBM" | version u16 | 以降パラメータごとに
    name_len u16 | name (UTF-8) | rank u8 | dims u32 × rank | float64 × prod(dims)
"""

import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np


MAGIC = b"PRBM"
VERSION = 1


class ParamFileError(ValueError):
    """パラメータファイルの破損・形式違い"""


def encode_params(arrays: Dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<H", VERSION)]
    for name, data in arrays.items():
        encoded = name.encode("utf-8")
        data = np.asarray(data, dtype="<f8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data).tobytes())
    return b"".join(chunks)


def decode_params(blob: bytes) -> Dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise ParamFileError("マジックバイトが一致しません")
    if len(blob) < 6:
        raise ParamFileError("ヘッダーが途中で切れています")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise ParamFileError(f"未対応のバージョンです: {version}")
    arrays: Dict[str, np.ndarray] = {}
    offset = 6
    try:
        while offset < len(blob):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if offset + 8 * count > len(blob):
                raise ParamFileError(f"{name}: データが途中で切れています")
            data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(dims)
            offset += 8 * count
            arrays[name] = data.astype(np.float64)
    except (struct.error, UnicodeDecodeError) as e:
        raise ParamFileError(f"パラメータファイルの解析エラー: {e}")
    return arrays


def save_params(arrays: Dict[str, np.ndarray], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_params(arrays))
    return path


def load_params(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return decode_params(Path(path).read_bytes())
