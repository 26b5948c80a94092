"""
Versioned headers for the compressed-operator and low-rank factor files, plus the run manifest.

``.spc`` and ``.lrk`` files share one framing: 4-byte magic, little-endian u64
header length, UTF-8 JSON header, binary payload. The JSON header is one of the
sidecar models below and goes through :func:`load_sidecar` / :func:`dump_sidecar`,
so callers never depend on a specific schema version.
"""

from __future__ import annotations

import json
import math
import struct
from typing import Annotated, Any, Literal, TypeAlias

from pydantic import BaseModel, Field, TypeAdapter, ValidationError, model_validator

from aind_compressed_regularization.errors import FormatError
from aind_compressed_regularization.wavelet import ThresholdPolicy, WaveletSpec

_FRAME = struct.Struct("<4sQ")


class CompressionSidecarV1(BaseModel):
    """
    Header of a ``.spc`` file.

    Attributes
    ----------
    kind : Literal["wavelet"]
        Header type discriminator
    spec : WaveletSpec
        Transform used on every row
    policy : ThresholdPolicy
        Thresholding applied to the transformed rows
    nrows : int
        Row count of the compressed operator
    ncols : int
        Original column count (signal length)
    padded_ncols : int
        Transform-domain width, ``spec.padded_length(ncols)``
    source_nnz : int | None
        Nonzeros of the uncompressed operator, when known
    """

    schema_version: Literal["1.0"] = "1.0"
    kind: Literal["wavelet"] = "wavelet"
    spec: WaveletSpec
    policy: ThresholdPolicy
    nrows: int
    ncols: int
    padded_ncols: int
    source_nnz: int | None = None

    @model_validator(mode="after")
    def _check_widths(self) -> CompressionSidecarV1:
        if self.nrows <= 0 or self.ncols <= 0:
            raise ValueError("nrows and ncols must be positive")
        expected = self.spec.padded_length(self.ncols)
        if self.padded_ncols != expected:
            raise ValueError(f"padded_ncols {self.padded_ncols} does not match {expected} for ncols={self.ncols}")
        return self


class LowRankSidecarV1(BaseModel):
    """
    Header of a ``.lrk`` file.

    Attributes
    ----------
    kind : Literal["lowrank"]
        Header type discriminator
    m, n : int
        Shape of the approximated operator
    k : int
        Number of singular triplets stored
    seed : int | None
        Seed of the randomized range sampling (None for oracle factors)
    sigma : list[float]
        Singular values, descending
    """

    schema_version: Literal["1.0"] = "1.0"
    kind: Literal["lowrank"] = "lowrank"
    m: int
    n: int
    k: int
    seed: int | None = None
    sigma: list[float]

    @model_validator(mode="after")
    def _check_sigma(self) -> LowRankSidecarV1:
        if self.m <= 0 or self.n <= 0 or self.k <= 0:
            raise ValueError("m, n and k must be positive")
        if self.k > min(self.m, self.n):
            raise ValueError(f"k={self.k} exceeds min(m, n)={min(self.m, self.n)}")
        if len(self.sigma) != self.k:
            raise ValueError(f"sigma has {len(self.sigma)} entries for k={self.k}")
        if any(not math.isfinite(s) or s <= 0 for s in self.sigma):
            raise ValueError("sigma entries must be finite and positive")
        if any(a < b for a, b in zip(self.sigma, self.sigma[1:], strict=False)):
            raise ValueError("sigma must be sorted in descending order")
        return self


Sidecar: TypeAlias = Annotated[CompressionSidecarV1 | LowRankSidecarV1, Field(discriminator="kind")]
_SIDECAR_ADAPTER: TypeAdapter[CompressionSidecarV1 | LowRankSidecarV1] = TypeAdapter(Sidecar)


# --- Facade API: callers depend on these, not on V1 directly ---
def load_sidecar(src: str | bytes | dict[str, Any]) -> CompressionSidecarV1 | LowRankSidecarV1:
    """
    Load a file header from JSON or a dict.

    Raises
    ------
    ValueError
        If schema_version is missing or unsupported
    """
    data = json.loads(src) if isinstance(src, str | bytes) else src
    ver = data.get("schema_version")
    if ver is None:
        raise ValueError("Missing 'schema_version'")
    if str(ver).startswith("1."):
        return _SIDECAR_ADAPTER.validate_python(data)
    raise ValueError(f"Unsupported schema_version: {ver}")


def dump_sidecar(model: CompressionSidecarV1 | LowRankSidecarV1) -> str:
    """Serialize a header to compact JSON (None fields excluded)."""
    return model.model_dump_json(exclude_none=True)


def encode_framed(magic: bytes, header: CompressionSidecarV1 | LowRankSidecarV1, payload: bytes) -> bytes:
    """Magic, u64 header length, JSON header, payload."""
    head = dump_sidecar(header).encode("utf-8")
    return _FRAME.pack(magic, len(head)) + head + payload


def decode_framed(buf: bytes, magic: bytes) -> tuple[CompressionSidecarV1 | LowRankSidecarV1, int]:
    """
    Parse the framing of a ``.spc``/``.lrk`` buffer.

    Returns
    -------
    header : CompressionSidecarV1 | LowRankSidecarV1
        Validated header
    payload_offset : int
        Byte offset where the binary payload starts

    Raises
    ------
    FormatError
        Bad magic, truncated header or invalid JSON header.
    """
    if len(buf) < _FRAME.size:
        raise FormatError("truncated frame header", len(buf))
    got, head_len = _FRAME.unpack_from(buf, 0)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
    end = _FRAME.size + head_len
    if len(buf) < end:
        raise FormatError(f"truncated JSON header: need {head_len} bytes", len(buf))
    try:
        header = load_sidecar(buf[_FRAME.size : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError, ValueError) as exc:
        raise FormatError(f"invalid header: {exc}", _FRAME.size) from exc
    return header, end


# --------- run manifest ---------
class RunManifest(BaseModel):
    """
    Record of one CLI run, written as flat ``key=value`` text next to its outputs.

    Attributes
    ----------
    command : str
        Subcommand name
    version : str
        Package version
    seed : int | None
        Root seed of the run
    parameters : dict[str, str]
        All remaining flags, stringified
    inputs, outputs : dict[str, str]
        Role name to file path
    duration_seconds : float
        Wall-clock duration
    """

    command: str
    version: str
    seed: int | None = None
    parameters: dict[str, str] = Field(default_factory=dict)
    inputs: dict[str, str] = Field(default_factory=dict)
    outputs: dict[str, str] = Field(default_factory=dict)
    duration_seconds: float = 0.0

    def to_text(self) -> str:
        lines = [f"command={self.command}", f"version={self.version}"]
        if self.seed is not None:
            lines.append(f"seed={self.seed}")
        for prefix, table in (("param", self.parameters), ("input", self.inputs), ("output", self.outputs)):
            lines += [f"{prefix}.{key}={table[key]}" for key in sorted(table)]
        lines.append(f"duration_seconds={self.duration_seconds:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> RunManifest:
        fields: dict[str, Any] = {"parameters": {}, "inputs": {}, "outputs": {}}
        tables = {"param": "parameters", "input": "inputs", "output": "outputs"}
        for raw in text.splitlines():
            if not raw.strip():
                continue
            key, sep, value = raw.partition("=")
            if not sep:
                raise ValueError(f"manifest line without '=': {raw!r}")
            prefix, dot, name = key.partition(".")
            if dot and prefix in tables:
                fields[tables[prefix]][name] = value
            else:
                fields[key] = value
        return cls.model_validate(fields)


__all__ = [
    "CompressionSidecarV1",
    "LowRankSidecarV1",
    "RunManifest",
    "Sidecar",
    "decode_framed",
    "dump_sidecar",
    "encode_framed",
    "load_sidecar",
]
