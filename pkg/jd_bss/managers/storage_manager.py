"""Storage Manager for parameter sets, run reports and metric tables."""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np
from loguru import logger

from jd_bss.core.exceptions import DomainError, UsageError
from jd_bss.core.schemas import FastFcaParams, FastMnmfParams, FcaParams, NmfFactors

COMPLEX_DTYPE = "<c16"
REAL_DTYPE = "<f8"

CSV_COLUMNS = [
    "method",
    "M",
    "N",
    "I",
    "J",
    "iters",
    "nll_first",
    "nll_last",
    "rtf",
    "sdr_mean",
    "scm_error",
]

Params = FcaParams | FastFcaParams | FastMnmfParams


def _tensors(params: Params) -> Dict[str, np.ndarray]:
    if isinstance(params, FcaParams):
        return {"scms": params.scms, "powers": params.powers}
    if isinstance(params, FastFcaParams):
        return {"decorr": params.decorr, "loadings": params.loadings, "acts": params.acts}
    if isinstance(params, FastMnmfParams):
        return {
            "decorr": params.decorr,
            "loadings": params.loadings,
            "templates": params.nmf.templates,
            "activations": params.nmf.activations,
        }
    raise DomainError(f"Unsupported parameter type: {type(params).__name__}")


def _build(kind: str, arrays: Dict[str, np.ndarray]) -> Params:
    if kind == "FcaParams":
        return FcaParams(scms=arrays["scms"], powers=arrays["powers"])
    if kind == "FastFcaParams":
        return FastFcaParams(
            decorr=arrays["decorr"], loadings=arrays["loadings"], acts=arrays["acts"]
        )
    if kind == "FastMnmfParams":
        return FastMnmfParams(
            decorr=arrays["decorr"],
            loadings=arrays["loadings"],
            nmf=NmfFactors(templates=arrays["templates"], activations=arrays["activations"]),
        )
    raise DomainError(f"Unsupported parameter type in manifest: {kind}")


class StorageManager:
    """Manages on-disk artifacts under one root directory."""

    def __init__(self, root: str | Path):
        """
        Initialize Storage Manager.

        Args:
            root: Directory holding all artifacts (created on demand)
        """
        self.root = Path(root)
        logger.info(f"Storage Manager initialized at: {self.root}")

    def _ensure_root(self):
        self.root.mkdir(parents=True, exist_ok=True)

    def save_params(self, name: str, params: Params, extra: Dict[str, Any] | None = None) -> Path:
        """
        Save a parameter set as a JSON manifest plus raw little-endian tensors.

        Args:
            name: Artifact name, used as the file stem
            params: Parameters to save
            extra: Additional JSON-serializable metadata for the manifest

        Returns:
            Path: The manifest path
        """
        self._ensure_root()
        manifest: Dict[str, Any] = {"type": type(params).__name__, "tensors": {}}
        for field, array in _tensors(params).items():
            dtype = COMPLEX_DTYPE if np.iscomplexobj(array) else REAL_DTYPE
            file_name = f"{name}.{field}.bin"
            np.ascontiguousarray(array, dtype=dtype).tofile(self.root / file_name)
            manifest["tensors"][field] = {
                "file": file_name,
                "dtype": dtype,
                "shape": list(array.shape),
            }
        if extra:
            manifest["extra"] = extra

        path = self.root / f"{name}.json"
        path.write_text(json.dumps(manifest, indent=2))
        logger.debug(f"Saved {manifest['type']} to {path}")
        return path

    def load_params(self, name: str) -> Params:
        """
        Load a parameter set written by ``save_params``.

        Args:
            name: Artifact name

        Returns:
            The reconstructed parameters
        """
        manifest = self.read_json(name)
        arrays = {}
        for field, entry in manifest["tensors"].items():
            path = self.root / entry["file"]
            if not path.exists():
                raise UsageError(f"missing tensor file: {path}")
            data = np.fromfile(path, dtype=np.dtype(entry["dtype"]))
            arrays[field] = data.reshape(entry["shape"])
        return _build(manifest["type"], arrays)

    def has(self, name: str) -> bool:
        return (self.root / f"{name}.json").exists()

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        """Write a JSON report such as ``run.json``."""
        self._ensure_root()
        path = self.root / f"{name}.json"
        path.write_text(json.dumps(payload, indent=2, default=float))
        return path

    def read_json(self, name: str) -> Dict[str, Any]:
        path = self.root / f"{name}.json"
        if not path.exists():
            raise UsageError(f"missing file: {path}")
        return json.loads(path.read_text())

    def write_csv(
        self, name: str, rows: Sequence[Dict[str, Any]], columns: List[str] | None = None
    ) -> Path:
        """
        Write a metric table.

        Args:
            name: File stem
            rows: One dict per row; missing columns are left empty
            columns: Column order (defaults to ``CSV_COLUMNS``)

        Returns:
            Path: The CSV path
        """
        self._ensure_root()
        path = self.root / f"{name}.csv"
        with path.open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns or CSV_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
        logger.info(f"Wrote {len(rows)} rows to {path}")
        return path

    def get_info(self) -> Dict[str, Any]:
        """
        Get current storage info.

        Returns:
            Dict[str, Any]: Root directory and stored artifacts
        """
        manifests = sorted(p.stem for p in self.root.glob("*.json")) if self.root.exists() else []
        return {"root": str(self.root), "artifacts": manifests}
