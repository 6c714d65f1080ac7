"""Domain types and file ingestion for preference-pair token data.

A preference pair couples a chosen and a rejected response to the same
prompt. Each response carries, per token: the token id, policy and
reference log-probabilities (nats), and a hidden-state vector. Hidden
states are opaque caller-supplied vectors; no model is ever run here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class SchemaError(ValueError):
    """Raised for malformed records, shape mismatches, or invalid values."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _float_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, ndmin=1, copy=True)
    if arr.ndim != 1:
        raise SchemaError(f"{name} must be a flat list, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        idx = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise SchemaError(f"{name}[{idx}] is not finite")
    return arr


@dataclass(frozen=True)
class TokenSeq:
    """One response: ids, per-token log-probs, and hidden-state rows.

    All four containers have the same length (>= 1). Hidden states are
    stored as float64 regardless of input precision. Instances are
    immutable after construction and safe to share across threads.
    """

    token_ids: np.ndarray
    logp_policy: np.ndarray
    logp_ref: np.ndarray
    hidden: np.ndarray
    log_ratio: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = np.array(self.token_ids, ndmin=1, copy=True)
        if ids.ndim != 1:
            raise SchemaError(f"token_ids must be a flat list, got shape {ids.shape}")
        if ids.size == 0:
            raise SchemaError("token_ids is empty; a response needs at least one token")
        if not np.issubdtype(ids.dtype, np.integer):
            if not (np.issubdtype(ids.dtype, np.floating) and np.all(ids == np.rint(ids))):
                raise SchemaError("token_ids must be integers")
        ids = ids.astype(np.int64)

        lp = _float_vector(self.logp_policy, "logp_policy")
        lr = _float_vector(self.logp_ref, "logp_ref")
        hid = np.array(self.hidden, dtype=np.float64, ndmin=2, copy=True)
        if hid.ndim != 2:
            raise SchemaError(f"hidden must be a list of equal-length vectors, got shape {hid.shape}")
        if hid.shape[1] == 0:
            raise SchemaError("hidden vectors must have dimension > 0")
        if not np.all(np.isfinite(hid)):
            row = int(np.flatnonzero(~np.isfinite(hid).all(axis=1))[0])
            raise SchemaError(f"hidden[{row}] contains a non-finite entry")

        n = ids.size
        for name, arr in (("logp_policy", lp), ("logp_ref", lr), ("hidden", hid)):
            if arr.shape[0] != n:
                raise SchemaError(
                    f"{name} has length {arr.shape[0]} but token_ids has length {n}"
                )

        object.__setattr__(self, "token_ids", _readonly(ids))
        object.__setattr__(self, "logp_policy", _readonly(lp))
        object.__setattr__(self, "logp_ref", _readonly(lr))
        object.__setattr__(self, "hidden", _readonly(hid))
        object.__setattr__(self, "log_ratio", _readonly(lp - lr))

    def __len__(self) -> int:
        return int(self.token_ids.size)

    @property
    def dim(self) -> int:
        return int(self.hidden.shape[1])


@dataclass(frozen=True)
class PreferencePair:
    """A prompt id plus its chosen and rejected responses."""

    pair_id: str
    chosen: TokenSeq
    rejected: TokenSeq

    def __post_init__(self):
        if not isinstance(self.pair_id, str):
            raise SchemaError("pair_id must be a string")
        if self.chosen.dim != self.rejected.dim:
            raise SchemaError(
                f"hidden dimension mismatch: chosen has d={self.chosen.dim}, "
                f"rejected has d={self.rejected.dim}"
            )


def log_ratios(seq: TokenSeq) -> np.ndarray:
    """Per-token policy-minus-reference log-likelihood ratios q."""
    return seq.log_ratio


def _check_strict_logp(seq_obj: dict, side: str) -> None:
    for name in ("logp_policy", "logp_ref"):
        for i, v in enumerate(seq_obj[name]):
            if v > 0:
                raise SchemaError(
                    f"{side}.{name}[{i}] = {v} is positive; strict mode requires"
                    " log-probabilities <= 0"
                )


def _seq_from_record(obj, side: str, hidden_rows=None) -> TokenSeq:
    if not isinstance(obj, dict):
        raise SchemaError(f"{side} must be an object")
    required = ["token_ids", "logp_policy", "logp_ref"]
    for key in required:
        if key not in obj:
            raise SchemaError(f"{side} is missing required field '{key}'")
    if hidden_rows is None:
        if "hidden" not in obj:
            raise SchemaError(f"{side} is missing required field 'hidden'")
        hidden = obj["hidden"]
    else:
        if "hidden" in obj:
            raise SchemaError(
                f"{side} carries an inline 'hidden' field but a sidecar file was"
                " given; use one source only"
            )
        hidden = hidden_rows
    for i, t in enumerate(obj["token_ids"]):
        if isinstance(t, bool) or not isinstance(t, int):
            raise SchemaError(f"{side}.token_ids[{i}] is not an integer")
    try:
        return TokenSeq(obj["token_ids"], obj["logp_policy"], obj["logp_ref"], hidden)
    except SchemaError as e:
        raise SchemaError(f"{side}.{e}") from None


class _SidecarReader:
    """Hidden-state lookup backed by a flat little-endian float64 file.

    The index maps pair_id to element offsets into the binary file:
    ``{"chosen_offset": int, "rejected_offset": int, "rows": int, "dim": int}``
    where offsets count float64 values, ``rows`` is the total row count of
    the pair (|y_c| + |y_r|) and per-side row counts come from the record's
    token lists.
    """

    def __init__(self, bin_path, index_path):
        self.data = np.fromfile(bin_path, dtype="<f8")
        with open(index_path, "r", encoding="utf-8") as f:
            self.index = json.load(f)

    def rows(self, pair_id: str, n_chosen: int, n_rejected: int):
        entry = self.index.get(pair_id)
        if entry is None:
            raise SchemaError(f"pair_id '{pair_id}' not present in sidecar index")
        dim = int(entry["dim"])
        if dim <= 0:
            raise SchemaError(f"sidecar index for '{pair_id}' has dim {dim}")
        if int(entry["rows"]) != n_chosen + n_rejected:
            raise SchemaError(
                f"sidecar index for '{pair_id}' declares {entry['rows']} rows but"
                f" the record has {n_chosen + n_rejected} tokens"
            )
        out = []
        for offset, count in (
            (int(entry["chosen_offset"]), n_chosen),
            (int(entry["rejected_offset"]), n_rejected),
        ):
            end = offset + count * dim
            if offset < 0 or end > self.data.size:
                raise SchemaError(
                    f"sidecar block for '{pair_id}' ([{offset}, {end})) exceeds"
                    f" the binary file ({self.data.size} values)"
                )
            out.append(self.data[offset:end].reshape(count, dim))
        return out[0], out[1]


def load_pairs(path, *, strict: bool = False, hidden_bin=None, hidden_index=None) -> list[PreferencePair]:
    """Load validated preference pairs from a JSONL file, in file order.

    One JSON object per line:
    ``{"pair_id": str, "chosen": {"token_ids": [int], "logp_policy": [float],
    "logp_ref": [float], "hidden": [[float; d]]}, "rejected": {...}}``

    With ``hidden_bin``/``hidden_index`` set, hidden states come from the
    binary sidecar instead and records must omit the inline field. In
    ``strict`` mode positive log-probabilities are rejected.
    """
    if (hidden_bin is None) != (hidden_index is None):
        raise SchemaError("hidden_bin and hidden_index must be given together")
    sidecar = _SidecarReader(hidden_bin, hidden_index) if hidden_bin is not None else None

    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                pairs.append(_pair_from_line(line, strict=strict, sidecar=sidecar))
            except SchemaError as e:
                raise SchemaError(f"line {ln}: {e}") from None
    return pairs


def _pair_from_line(line: str, *, strict: bool, sidecar) -> PreferencePair:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON ({e.msg} at column {e.colno})")
    if not isinstance(record, dict):
        raise SchemaError("record must be a JSON object")
    for key in ("pair_id", "chosen", "rejected"):
        if key not in record:
            raise SchemaError(f"record is missing required field '{key}'")
    pair_id = record["pair_id"]
    if not isinstance(pair_id, str):
        raise SchemaError("pair_id must be a string")

    hid_c = hid_r = None
    if sidecar is not None:
        for side in ("chosen", "rejected"):
            obj = record[side]
            if not isinstance(obj, dict) or "token_ids" not in obj:
                raise SchemaError(f"{side} is missing required field 'token_ids'")
        hid_c, hid_r = sidecar.rows(
            pair_id, len(record["chosen"]["token_ids"]), len(record["rejected"]["token_ids"])
        )

    if strict:
        for side in ("chosen", "rejected"):
            obj = record[side]
            if isinstance(obj, dict) and "logp_policy" in obj and "logp_ref" in obj:
                _check_strict_logp(obj, side)

    chosen = _seq_from_record(record["chosen"], "chosen", hid_c)
    rejected = _seq_from_record(record["rejected"], "rejected", hid_r)
    return PreferencePair(pair_id, chosen, rejected)


def seq_to_record(seq: TokenSeq, include_hidden: bool = True) -> dict:
    rec = {
        "token_ids": seq.token_ids.tolist(),
        "logp_policy": seq.logp_policy.tolist(),
        "logp_ref": seq.logp_ref.tolist(),
    }
    if include_hidden:
        rec["hidden"] = seq.hidden.tolist()
    return rec


def pair_to_record(pair: PreferencePair, include_hidden: bool = True) -> dict:
    return {
        "pair_id": pair.pair_id,
        "chosen": seq_to_record(pair.chosen, include_hidden),
        "rejected": seq_to_record(pair.rejected, include_hidden),
    }


def pair_to_line(pair: PreferencePair, include_hidden: bool = True) -> str:
    """Canonical single-line serialization (stable key order, shortest floats)."""
    return json.dumps(pair_to_record(pair, include_hidden), separators=(",", ":"))


def write_pairs(pairs, path, include_hidden: bool = True) -> None:
    """Write pairs as canonical JSONL; loading it back round-trips exactly."""
    with open(path, "w", encoding="utf-8") as f:
        for pair in pairs:
            f.write(pair_to_line(pair, include_hidden) + "\n")


def write_hidden_sidecar(pairs, bin_path, index_path) -> None:
    """Write hidden states as a flat little-endian float64 file plus index.

    Blocks are laid out consecutively in pair order, chosen rows before
    rejected rows. Offsets in the index count float64 values.
    """
    index = {}
    offset = 0
    with open(bin_path, "wb") as f:
        for pair in pairs:
            d = pair.chosen.dim
            nc, nr = len(pair.chosen), len(pair.rejected)
            index[pair.pair_id] = {
                "chosen_offset": offset,
                "rejected_offset": offset + nc * d,
                "rows": nc + nr,
                "dim": d,
            }
            f.write(pair.chosen.hidden.astype("<f8").tobytes())
            f.write(pair.rejected.hidden.astype("<f8").tobytes())
            offset += (nc + nr) * d
    with open(index_path, "w", encoding="utf-8") as f:
        json.dump(index, f)
