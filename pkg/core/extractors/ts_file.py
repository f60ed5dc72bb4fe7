"""
Reader and writer for the UEA `.ts` time-series format (equal length, no timestamps,
no missing values).
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.dataset_store import TimeSeriesSample
from utils.error_handler import TsFormatError
from utils.logger import data_logger as logger


@dataclass(frozen=True)
class TsHeader:
    """Header directives of a `.ts` file"""
    problem_name: str
    dimensions: int
    series_length: int
    class_labels: Tuple[str, ...]
    univariate: bool = False
    timestamps: bool = False
    missing: bool = False
    equal_length: bool = True


_BOOL_VALUES = {"true": True, "false": False}


class _HeaderBuilder:
    """Collects directives line by line, validating as it goes"""

    def __init__(self, path: str):
        self.path = path
        self.problem_name: Optional[str] = None
        self.dimensions: Optional[int] = None
        self.series_length: Optional[int] = None
        self.class_labels: Optional[Tuple[str, ...]] = None
        self.univariate = False
        self.timestamps = False
        self.missing = False
        self.equal_length = True

    def _bool(self, value: str, line_no: int, directive: str) -> bool:
        lowered = value.strip().lower()
        if lowered not in _BOOL_VALUES:
            raise TsFormatError(f"{directive} expects true/false, got '{value}'", self.path, line_no)
        return _BOOL_VALUES[lowered]

    def _int(self, value: str, line_no: int, directive: str) -> int:
        try:
            number = int(value.strip())
        except ValueError:
            raise TsFormatError(f"{directive} expects an integer, got '{value}'", self.path, line_no)
        if number < 1:
            raise TsFormatError(f"{directive} must be positive", self.path, line_no)
        return number

    def add(self, line: str, line_no: int):
        parts = line.split(None, 1)
        directive = parts[0].lower()
        value = parts[1].strip() if len(parts) > 1 else ""

        if directive == "@problemname":
            if not value:
                raise TsFormatError("@problemName requires a name", self.path, line_no)
            self.problem_name = value
        elif directive == "@timestamps":
            self.timestamps = self._bool(value, line_no, "@timeStamps")
            if self.timestamps:
                raise TsFormatError("timestamped series are not supported", self.path, line_no)
        elif directive == "@missing":
            self.missing = self._bool(value, line_no, "@missing")
        elif directive == "@univariate":
            self.univariate = self._bool(value, line_no, "@univariate")
        elif directive == "@dimensions":
            self.dimensions = self._int(value, line_no, "@dimensions")
        elif directive == "@equallength":
            self.equal_length = self._bool(value, line_no, "@equalLength")
            if not self.equal_length:
                raise TsFormatError("variable-length series are not supported", self.path, line_no)
        elif directive == "@serieslength":
            self.series_length = self._int(value, line_no, "@seriesLength")
        elif directive == "@classlabel":
            tokens = value.split()
            if not tokens or self._bool(tokens[0], line_no, "@classLabel") is False:
                raise TsFormatError("@classLabel must be 'true' followed by class names", self.path, line_no)
            if len(tokens) < 2:
                raise TsFormatError("@classLabel true lists no classes", self.path, line_no)
            labels = tuple(tokens[1:])
            if len(set(labels)) != len(labels):
                raise TsFormatError("@classLabel lists a class twice", self.path, line_no)
            self.class_labels = labels
        else:
            logger.warning(f"{self.path}:{line_no}: ignoring unknown directive {parts[0]}")

    def build(self, line_no: int) -> TsHeader:
        if self.class_labels is None:
            raise TsFormatError("header has no @classLabel directive", self.path, line_no)
        if self.dimensions is None and self.univariate:
            self.dimensions = 1
        if self.univariate and self.dimensions != 1:
            raise TsFormatError("@univariate true conflicts with @dimensions", self.path, line_no)
        return TsHeader(
            problem_name=self.problem_name or Path(self.path).stem.rsplit("_", 1)[0],
            dimensions=self.dimensions or 0,
            series_length=self.series_length or 0,
            class_labels=self.class_labels,
            univariate=self.univariate,
            timestamps=self.timestamps,
            missing=self.missing,
            equal_length=self.equal_length,
        )


def _parse_dimension(token: str, path: str, line_no: int, dim: int) -> List[float]:
    values = []
    for raw in token.split(","):
        raw = raw.strip()
        if raw == "?" or raw == "":
            raise TsFormatError(f"missing value in dimension {dim}", path, line_no)
        try:
            value = float(raw)
        except ValueError:
            raise TsFormatError(f"non-numeric value '{raw}' in dimension {dim}", path, line_no)
        if not math.isfinite(value):
            raise TsFormatError(f"non-finite value '{raw}' in dimension {dim}", path, line_no)
        values.append(value)
    return values


def parse_ts_file(path) -> Tuple[List[TimeSeriesSample], TsHeader]:
    """
    Parse a `.ts` file into samples (file order, ids 0..n-1) and header metadata.

    Raises:
        TsFormatError: malformed header, wrong dimension count or length,
            unknown class label, or a missing value
    """
    path = str(path)
    builder = _HeaderBuilder(path)
    header: Optional[TsHeader] = None
    samples: List[TimeSeriesSample] = []

    with open(path, 'r', encoding='utf-8') as f:
        for line_no, raw_line in enumerate(f, start=1):
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue

            if header is None:
                if not line.startswith("@"):
                    raise TsFormatError("data before @data directive", path, line_no)
                if line.lower() == "@data":
                    header = builder.build(line_no)
                else:
                    builder.add(line, line_no)
                continue

            tokens = line.split(":")
            if len(tokens) < 2:
                raise TsFormatError("data line has no class label", path, line_no)
            label = tokens[-1].strip()
            dims = tokens[:-1]

            if header.dimensions and len(dims) != header.dimensions:
                raise TsFormatError(f"expected {header.dimensions} dimensions, found {len(dims)}", path, line_no)
            if label not in header.class_labels:
                raise TsFormatError(f"unknown class label '{label}'", path, line_no)

            channels = [_parse_dimension(token, path, line_no, j) for j, token in enumerate(dims)]
            expected_length = header.series_length or len(channels[0])
            for j, channel in enumerate(channels):
                if len(channel) != expected_length:
                    raise TsFormatError(
                        f"dimension {j} has length {len(channel)}, expected {expected_length}", path, line_no)

            if not header.dimensions or not header.series_length:
                # Fill undeclared shape from the first data row
                header = TsHeader(
                    problem_name=header.problem_name,
                    dimensions=header.dimensions or len(dims),
                    series_length=expected_length,
                    class_labels=header.class_labels,
                    univariate=header.univariate,
                    timestamps=header.timestamps,
                    missing=header.missing,
                    equal_length=header.equal_length,
                )

            values = np.asarray(channels, dtype=np.float64).T
            samples.append(TimeSeriesSample(id=len(samples), values=values, label=label))

    if header is None:
        raise TsFormatError("no @data directive", path)

    logger.debug(f"Parsed {len(samples)} samples from {path}")
    return samples, header


def write_ts_file(path, samples: Sequence[TimeSeriesSample], header: TsHeader):
    """Write samples in `.ts` format; values use repr() so they parse back exactly"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"@problemName {header.problem_name}",
        "@timeStamps false",
        "@missing false",
        f"@univariate {'true' if header.dimensions == 1 else 'false'}",
        f"@dimensions {header.dimensions}",
        "@equalLength true",
        f"@seriesLength {header.series_length}",
        "@classLabel true " + " ".join(header.class_labels),
        "@data",
    ]
    for sample in samples:
        dims = [",".join(repr(float(v)) for v in sample.values[:, j]) for j in range(sample.n_channels)]
        lines.append(":".join(dims + [sample.label]))
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')
