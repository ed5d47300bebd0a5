import json
import logging
from pathlib import Path
from typing import Optional

from app.core.config import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_DATEFMT = "%d-%b-%y %H:%M:%S"

log = logging.getLogger("kgpl")


def setup_logging(level: Optional[str] = None, filename: Optional[Path] = None) -> None:
    filename = filename or settings.LOG_FILE
    logging.basicConfig(
        filename=str(filename) if filename else None,
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
        level=(level or settings.LOG_LEVEL).upper(),
    )


class EpochLog:
    """Append-only JSON-lines log, one record per training epoch."""

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, epoch: int, train_loss: float, val_dsc: float, lr: float) -> dict:
        record = {
            "epoch": int(epoch),
            "train_loss": float(train_loss),
            "val_dsc": float(val_dsc),
            "lr": float(lr),
        }
        self.records.append(record)
        if self.path:
            with self.path.open("a") as handle:
                handle.write(json.dumps(record) + "\n")
        return record


def read_epoch_log(path: Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
