"""Versioned binary model format.

Layout (all integers little-endian)::

    magic      4s   b"FBNM"
    version    u16
    kind       u8   1 tree, 2 knn, 3 logistic
    reserved   u8
    body_len   u64
    body       body_len bytes
    crc32      u32  over every preceding byte

The body starts with a common header (n_features u32, n_classes u32,
label mode u8, node id i32, scaler flag u8 [+ means, stds as f64 vectors])
followed by the kind-specific payload. Tree nodes are written in preorder:
tag u8 (0 leaf, 1 split); a leaf stores n_classes u32 counts, a split stores
feature u32 and threshold f64.
"""
from __future__ import annotations

import io
import json
import struct
import zlib

import numpy as np

from ..preprocess import Scaler
from ._base import NodeClassifier, label_mode_code, label_mode_from_code
from .knn import KNNClassifier
from .logistic import LogisticRegressionClassifier
from .tree import LEAF, DecisionTreeClassifier

MAGIC = b"FBNM"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sHBBQ")
_CRC = struct.Struct("<I")

KIND_TAGS = {"tree": 1, "knn": 2, "logistic": 3}
_TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


class ModelFormatError(ValueError):
    """Payload is truncated, corrupt or written by an unsupported version."""


class _Reader:
    def __init__(self, data: bytes):
        self.buf = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("payload truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(np.dtype(dtype).newbyteorder("="))


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _write_tree(out: io.BytesIO, m: DecisionTreeClassifier):
    out.write(struct.pack("<iII", -1 if m.max_depth is None else int(m.max_depth), int(m.min_samples_split),
                          m.node_count))
    for i in range(m.node_count):
        if m.feature_[i] == LEAF:
            out.write(b"\x00")
            out.write(np.ascontiguousarray(m.value_[i], dtype="<u4").tobytes())
        else:
            out.write(struct.pack("<BId", 1, int(m.feature_[i]), float(m.threshold_[i])))


def _read_tree(r: _Reader, n_features: int, n_classes: int) -> DecisionTreeClassifier:
    max_depth, min_split, n_nodes = r.unpack("iII")
    m = DecisionTreeClassifier(max_depth=None if max_depth < 0 else max_depth, min_samples_split=min_split)
    feature = np.full(n_nodes, LEAF, dtype=np.int64)
    threshold = np.zeros(n_nodes)
    left = np.full(n_nodes, LEAF, dtype=np.int64)
    right = np.full(n_nodes, LEAF, dtype=np.int64)
    value = np.zeros((n_nodes, n_classes), dtype=np.int64)
    # rebuild child links from the preorder walk
    pending = []  # (parent, is_left) slots awaiting a child
    for i in range(n_nodes):
        if pending:
            parent, is_left = pending.pop()
            (left if is_left else right)[parent] = i
        elif i:
            raise ModelFormatError("tree payload has unreachable nodes")
        (tag,) = r.unpack("B")
        if tag == 0:
            value[i] = r.array("u4", n_classes)
            if value[i].sum() == 0:
                raise ModelFormatError("tree leaf with no samples")
        elif tag == 1:
            f, t = r.unpack("Id")
            if f >= n_features:
                raise ModelFormatError(f"split feature {f} out of range")
            feature[i], threshold[i] = f, t
            pending.append((i, False))
            pending.append((i, True))
        else:
            raise ModelFormatError(f"bad tree node tag {tag}")
    if pending:
        raise ModelFormatError("tree payload ends before all children were written")
    # internal counts are not stored; recover them bottom-up
    for i in reversed(range(n_nodes)):
        if feature[i] != LEAF:
            value[i] = value[left[i]] + value[right[i]]
    m.feature_, m.threshold_ = feature, threshold
    m.children_left_, m.children_right_, m.value_ = left, right, value
    m._finalize()
    return m


def _write_knn(out: io.BytesIO, m: KNNClassifier):
    out.write(struct.pack("<IQ", int(m.k), m.fit_X_.shape[0]))
    out.write(_f64(m.fit_X_))
    out.write(np.ascontiguousarray(m.fit_y_, dtype="<u2").tobytes())


def _read_knn(r: _Reader, n_features: int, n_classes: int) -> KNNClassifier:
    k, n_rows = r.unpack("IQ")
    m = KNNClassifier(k=k)
    m.fit_X_ = r.array("f8", n_rows * n_features).reshape(n_rows, n_features)
    m.fit_y_ = r.array("u2", n_rows).astype(np.int64)
    if n_rows and m.fit_y_.max() >= n_classes:
        raise ModelFormatError("stored label outside the class range")
    return m


def _write_logistic(out: io.BytesIO, m: LogisticRegressionClassifier):
    out.write(struct.pack("<dIddI", float(m.learning_rate), int(m.epochs), float(m.l2), float(m.tolerance),
                          int(m.n_iter_)))
    out.write(_f64(m.coef_))


def _read_logistic(r: _Reader, n_features: int, n_classes: int) -> LogisticRegressionClassifier:
    lr, epochs, l2, tol, n_iter = r.unpack("dIddI")
    m = LogisticRegressionClassifier(learning_rate=lr, epochs=epochs, l2=l2, tolerance=tol)
    m.coef_ = r.array("f8", n_classes * (n_features + 1)).reshape(n_classes, n_features + 1)
    m.n_iter_ = n_iter
    return m


_WRITERS = {"tree": _write_tree, "knn": _write_knn, "logistic": _write_logistic}
_READERS = {"tree": _read_tree, "knn": _read_knn, "logistic": _read_logistic}


def serialize_model(model: NodeClassifier) -> bytes:
    kind = model.kind
    if kind not in KIND_TAGS:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    body = io.BytesIO()
    scaler = getattr(model, "scaler_", None)
    body.write(struct.pack("<IIBiB", model.n_features_in_, model.n_classes_, label_mode_code(model.label_mode_),
                           int(model.node_id_), scaler is not None))
    if scaler is not None:
        body.write(_f64(scaler.mean_))
        body.write(_f64(scaler.scale_))
    _WRITERS[kind](body, model)
    payload = body.getvalue()
    head = _PREAMBLE.pack(MAGIC, FORMAT_VERSION, KIND_TAGS[kind], 0, len(payload)) + payload
    return head + _CRC.pack(zlib.crc32(head))


def deserialize_model(data: bytes) -> NodeClassifier:
    data = bytes(data)
    if len(data) < _PREAMBLE.size + _CRC.size:
        raise ModelFormatError("payload truncated")
    magic, version, tag, _, body_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise ModelFormatError("not a model payload (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    if tag not in _TAG_KINDS:
        raise ModelFormatError(f"unknown model kind tag {tag}")
    end = _PREAMBLE.size + body_len
    if len(data) != end + _CRC.size:
        raise ModelFormatError(f"payload length {len(data)} does not match declared body length {body_len}")
    (crc,) = _CRC.unpack_from(data, end)
    if crc != zlib.crc32(data[:end]):
        raise ModelFormatError("checksum mismatch; payload is corrupt")

    r = _Reader(data[_PREAMBLE.size:end])
    n_features, n_classes, mode_code, node_id, has_scaler = r.unpack("IIBiB")
    scaler = None
    if has_scaler:
        scaler = Scaler.from_moments(r.array("f8", n_features), r.array("f8", n_features))
    kind = _TAG_KINDS[tag]
    model = _READERS[kind](r, n_features, n_classes)
    if r.pos != body_len:
        raise ModelFormatError("trailing bytes after model payload")
    model.set_params(n_classes=n_classes)
    if "standardize" in model.get_params():
        model.set_params(standardize=has_scaler)
    model.scaler_ = scaler
    model.n_features_in_ = n_features
    model.n_classes_ = n_classes
    model.classes_ = np.arange(n_classes)
    model.node_id_ = node_id
    model.label_mode_ = label_mode_from_code(mode_code)
    return model


def model_to_dict(model: NodeClassifier) -> dict:
    """JSON-ready dump of a fitted model for inspection."""
    doc = {
        "kind": model.kind,
        "params": {k: v for k, v in model.get_params().items()},
        "n_features": int(model.n_features_in_),
        "n_classes": int(model.n_classes_),
        "label_mode": None if model.label_mode_ is None else model.label_mode_.value,
        "node_id": int(model.node_id_),
        "payload_bytes": len(serialize_model(model)),
    }
    scaler = getattr(model, "scaler_", None)
    if scaler is not None:
        doc["scaler"] = {"means": scaler.mean_.tolist(), "stds": scaler.scale_.tolist()}
    if model.kind == "tree":
        doc["nodes"] = [
            {"leaf": True, "class_counts": model.value_[i].tolist()}
            if model.feature_[i] == LEAF
            else {"leaf": False, "feature": int(model.feature_[i]), "threshold": float(model.threshold_[i]),
                  "left": int(model.children_left_[i]), "right": int(model.children_right_[i])}
            for i in range(model.node_count)
        ]
    elif model.kind == "knn":
        doc["k"] = int(model.k)
        doc["stored_rows"] = int(model.fit_X_.shape[0])
        doc["stored_labels"] = model.fit_y_.tolist()
    else:
        doc["weights"] = model.coef_.tolist()
        doc["n_iter"] = int(model.n_iter_)
    return doc


def model_to_json(model: NodeClassifier) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=2)
