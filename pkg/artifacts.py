"""
Workdir storage for turnover-forest artifacts

JSON and CSV files under one working directory. Every write lands in a
temporary file next to its target and is renamed into place, so a failed
command never leaves a half-written artifact behind.
"""

import json
import logging
import os
import tempfile
from typing import Any, Dict

import pandas as pd

from evaluation import TrainedModel

logger = logging.getLogger(__name__)

CLEAN_CSV = "clean.csv"
ENCODED_CSV = "encoded.csv"
TRAIN_CSV = "train.csv"
VALID_CSV = "valid.csv"
MANIFEST_JSON = "manifest.json"
CONFIG_JSON = "config.json"
BORUTA_CSV = "boruta.csv"
BORUTA_HISTORY_JSON = "boruta_history.json"
BORUTA_SVG = "boruta.svg"
TRAINING_JSON = "training.json"
REPORT_CSV = "report.csv"
FIGURE3_CSV = "figure3.csv"
FIGURE3_SVG = "figure3.svg"
FIGURE4_CSV = "figure4.csv"
FIGURE4_SVG = "figure4.svg"
PREDICTIONS_CSV = "predictions.csv"


class MissingArtifact(Exception):
    """A prerequisite file is absent from the workdir."""

    def __init__(self, path: str, hint: str = ""):
        self.path = path
        self.hint = hint
        message = f"missing {path}"
        super().__init__(f"{message} ({hint})" if hint else message)


def model_filename(name: str) -> str:
    return f"model_{name}.json"


def confusion_filename(name: str) -> str:
    return f"confusion_{name}.csv"


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def save_json(path: str, data: Any) -> None:
    text = json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    _atomic_write(path, text.encode("utf-8"))


def load_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_frame(path: str, frame: pd.DataFrame, index: bool = False) -> None:
    _atomic_write(path, frame.to_csv(index=index, lineterminator="\n").encode("utf-8"))


def load_frame(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def save_bytes(path: str, data: bytes) -> None:
    _atomic_write(path, data)


class Workdir:
    """Named artifact paths under one directory, plus typed load/save helpers."""

    def __init__(self, root: str):
        self.root = root

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def exists(self, name: str) -> bool:
        return os.path.exists(self.path(name))

    def require(self, name: str, hint: str) -> str:
        path = self.path(name)
        if not os.path.exists(path):
            raise MissingArtifact(path, hint)
        return path

    def ensure(self) -> None:
        os.makedirs(self.root, exist_ok=True)

    def save_json(self, name: str, data: Any) -> None:
        save_json(self.path(name), data)

    def load_json(self, name: str, hint: str = "") -> Any:
        return load_json(self.require(name, hint))

    def save_frame(self, name: str, frame: pd.DataFrame, index: bool = False) -> None:
        save_frame(self.path(name), frame, index=index)

    def load_frame(self, name: str, hint: str = "") -> pd.DataFrame:
        return load_frame(self.require(name, hint))

    def save_bytes(self, name: str, data: bytes) -> None:
        save_bytes(self.path(name), data)

    def save_model(self, model: TrainedModel) -> str:
        name = model_filename(model.name)
        self.save_json(name, model.to_dict())
        return self.path(name)

    def load_model(self, name: str, hint: str = "run train first") -> TrainedModel:
        return load_model(self.require(model_filename(name), hint))

    def manifest(self) -> Dict:
        return self.load_json(MANIFEST_JSON, "run ingest first")


def load_model(path: str) -> TrainedModel:
    if not os.path.exists(path):
        raise MissingArtifact(path, "model file not found")
    return TrainedModel.from_dict(load_json(path))
