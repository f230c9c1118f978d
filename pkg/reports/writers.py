import csv
import json
import math
import struct
import time
from pathlib import Path

import numpy as np

from utils import __version__
from utils.system import process_rss_mb

VECTOR_MAGIC = b"SBPSI\x00\x00\x01"
TOOL = "spinboson"


def plain(value):
    """
    Convert numpy scalars/arrays and nested containers to JSON-ready values.

    Non-finite floats become the strings "inf", "-inf" and "nan".
    """
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


class ArtifactWriter:
    """
    Writes result files into one output directory.

    Args:
        directory: output directory (created on first write)
        digest: config digest embedded in every file
        seed: run seed embedded in every file
        command: subcommand name, used as the file stem by default
    """

    def __init__(self, directory, digest, seed=None, command=""):
        self.directory = Path(directory)
        self.digest = digest
        self.seed = seed
        self.command = command
        self.started = time.perf_counter()
        self.written = []

    def _path(self, name):
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / name
        self.written.append(path)
        return path

    def metadata(self):
        return {"tool": TOOL, "version": __version__, "config_digest": self.digest,
                "seed": self.seed, "command": self.command}

    def timings(self):
        return {"wall_seconds": time.perf_counter() - self.started, "rss_mb": process_rss_mb()}

    def write_json(self, name, payload):
        """Metadata, numeric payload and timings; the payload is deterministic for a fixed digest and seed."""
        path = self._path(name)
        with open(path, "w") as f:
            json.dump(plain({**self.metadata(), "result": payload, "timings": self.timings()}), f, indent=4,
                      allow_nan=False)
        return path

    def write_csv(self, name, header, rows):
        """CSV preceded by '#'-comment lines carrying the metadata."""
        path = self._path(name)
        with open(path, "w", newline="") as f:
            for key, value in self.metadata().items():
                f.write(f"# {key}: {value}\n")
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                if isinstance(row, dict):
                    row = [row[h] for h in header]
                writer.writerow([_cell(v) for v in row])
        return path

    def write_vector(self, name, vector):
        """16-byte header (magic, uint64 LE dimension) then float64 LE entries."""
        path = self._path(name)
        data = np.ascontiguousarray(vector, dtype="<f8")
        with open(path, "wb") as f:
            f.write(VECTOR_MAGIC + struct.pack("<Q", data.size))
            f.write(data.tobytes())
        return path

    def write_error(self, record):
        return self.write_json("error.json", {"error": record})


def _cell(value):
    value = plain(value)
    if isinstance(value, float):
        return repr(value)
    return value


def read_vector(path):
    with open(path, "rb") as f:
        header = f.read(16)
        if header[:8] != VECTOR_MAGIC:
            raise ValueError(f"{path} is not an eigenvector dump")
        (size,) = struct.unpack("<Q", header[8:])
        return np.frombuffer(f.read(8 * size), dtype="<f8")


def read_json(path):
    with open(path, "r") as f:
        return json.load(f)
