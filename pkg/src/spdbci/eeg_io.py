"""Binary trial format (EEGB v1), a CSV fixture importer, and the model
bundle container with bit-exact round-trip persistence.

EEGB v1 layout (little-endian):
    magic "EEGB" | version u32=1 | M u32 | samples_per_trial u32 |
    n_trials u32 | n_classes u32 | sample_rate f32 |
    per trial: label u32, then M x samples f32 channel-major |
    CRC-32 u32 over all preceding bytes.

Model bundles use an analogous container ("SBCM" v1): a JSON manifest of
named float64 arrays followed by their raw bytes and a trailing CRC-32.
Floats are stored verbatim, so load(save(b)) is bit-identical to b.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChecksumError,
    DimensionMismatch,
    IoFailure,
    MalformedHeader,
    NonFiniteValue,
    VersionMismatch,
)

EEGB_MAGIC = b"EEGB"
EEGB_VERSION = 1
BUNDLE_MAGIC = b"SBCM"
BUNDLE_VERSION = 1


@dataclass
class RawTrialSet:
    """Validated set of labeled raw trials."""

    sample_rate_hz: float
    channels: int
    samples_per_trial: int
    trials: list[tuple[int, np.ndarray]]
    n_classes: int = field(default=0)

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise DimensionMismatch("sample rate must be positive")
        if self.channels < 1 or self.samples_per_trial < 1:
            raise DimensionMismatch("channels and samples_per_trial must be positive")
        labels = [label for label, _ in self.trials]
        if self.n_classes == 0:
            self.n_classes = (max(labels) + 1) if labels else 0
        if self.n_classes < 2:
            raise DimensionMismatch("at least two classes are required")
        for label, data in self.trials:
            if data.shape != (self.channels, self.samples_per_trial):
                raise DimensionMismatch(
                    f"trial shape {data.shape} != "
                    f"({self.channels}, {self.samples_per_trial})"
                )
            if not np.all(np.isfinite(data)):
                raise NonFiniteValue("trial contains NaN or Inf")
            if not (0 <= label < self.n_classes):
                raise DimensionMismatch(f"label {label} outside 0..{self.n_classes - 1}")


def save_trials(trials: RawTrialSet, path) -> None:
    """Write a trial set in EEGB v1 format."""
    header = EEGB_MAGIC + struct.pack(
        "<IIIIIf",
        EEGB_VERSION,
        trials.channels,
        trials.samples_per_trial,
        len(trials.trials),
        trials.n_classes,
        trials.sample_rate_hz,
    )
    chunks = [header]
    for label, data in trials.trials:
        chunks.append(struct.pack("<I", label))
        chunks.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    blob = payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_trials(path) -> RawTrialSet:
    """Read and validate an EEGB v1 file."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

    head_len = 4 + struct.calcsize("<IIIIIf")
    if len(blob) < head_len + 4 or blob[:4] != EEGB_MAGIC:
        raise MalformedHeader("not an EEGB file")
    version, m, samples, n_trials, n_classes, rate = struct.unpack(
        "<IIIIIf", blob[4:head_len]
    )
    if version != EEGB_VERSION:
        raise VersionMismatch(f"unsupported EEGB version {version}")
    trial_bytes = 4 + 4 * m * samples
    expected = head_len + n_trials * trial_bytes + 4
    if len(blob) != expected:
        raise DimensionMismatch(
            f"file is {len(blob)} bytes, header implies {expected}"
        )
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError("EEGB payload checksum mismatch")

    trials = []
    offset = head_len
    for _ in range(n_trials):
        (label,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        data = np.frombuffer(
            payload, dtype="<f4", count=m * samples, offset=offset
        ).reshape(m, samples).astype(np.float64)
        offset += 4 * m * samples
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue("trial contains NaN or Inf")
        trials.append((int(label), data))
    return RawTrialSet(float(rate), m, samples, trials, n_classes)


def load_trial_csv(path, label: int, sample_rate_hz: float) -> tuple[int, np.ndarray]:
    """Import one hand-made trial from CSV (rows = channels)."""
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("CSV trial contains NaN or Inf")
    del sample_rate_hz  # kept for call-site symmetry with EEGB loading
    return label, data


@dataclass
class ModelBundle:
    """Everything needed to reconstruct a trained model.

    ``arrays`` maps parameter names to float64 arrays in a fixed order;
    ``config`` is the flat key=value snapshot the model was built from.
    """

    config: dict[str, str]
    arrays: dict[str, np.ndarray]
    parameter_count: int

    def __eq__(self, other):
        if not isinstance(other, ModelBundle):
            return NotImplemented
        if self.config != other.config or self.parameter_count != other.parameter_count:
            return False
        if list(self.arrays) != list(other.arrays):
            return False
        return all(
            a.shape == other.arrays[k].shape
            and a.tobytes() == other.arrays[k].tobytes()
            for k, a in self.arrays.items()
        )


def save_model(bundle: ModelBundle, path) -> None:
    """Persist a bundle; load(save(b)) is bit-identical to b."""
    manifest = {
        "config": bundle.config,
        "parameter_count": bundle.parameter_count,
        "arrays": [
            {"name": name, "shape": list(arr.shape)} for name, arr in bundle.arrays.items()
        ],
    }
    meta = json.dumps(manifest, sort_keys=True).encode("utf-8")
    chunks = [BUNDLE_MAGIC, struct.pack("<II", BUNDLE_VERSION, len(meta)), meta]
    for arr in bundle.arrays.values():
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    blob = payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_model(path) -> ModelBundle:
    """Load a bundle written by :func:`save_model`."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(blob) < 16 or blob[:4] != BUNDLE_MAGIC:
        raise MalformedHeader("not a model bundle")
    version, meta_len = struct.unpack("<II", blob[4:12])
    if version != BUNDLE_VERSION:
        raise VersionMismatch(f"unsupported bundle version {version}")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError("model bundle checksum mismatch")
    try:
        manifest = json.loads(payload[12 : 12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader("bad bundle manifest") from exc
    offset = 12 + meta_len
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).copy()
        offset += 8 * count
    if offset != len(payload):
        raise DimensionMismatch("bundle payload size disagrees with manifest")
    return ModelBundle(
        config=dict(manifest["config"]),
        arrays=arrays,
        parameter_count=int(manifest["parameter_count"]),
    )
