"""File formats: forests, networks, model bundles, configs, detections,
geo documents, portable pixmaps, raw tensors and sensor traces.

All text documents are UTF-8 and carry a format_version in their first
line. 32-bit floats print with 9 significant digits, which round-trips
them exactly, so saving a loaded document reproduces it byte for byte.
Model payloads are little-endian binary guarded by a CRC-32; the header
declares each array's dtype (network weights are float32, the compiled
head keeps float64/int32 so reloading is bit-identical).
"""

import json
import zlib
from dataclasses import dataclass

import numpy as np

from .convnet import Activation, ConvLayer, DenseLayer, Network
from .detector import BoundingBox, DetectorConfig
from .evalkit import GroundTruthBox
from .forest import DecisionTree, Forest, LeafNode, SplitNode
from .geo import GeoPoint, SignGeo
from .netmap import CompiledRFNet, MapConstants

FOREST_MAGIC = "forest2fcn-forest"
MODEL_MAGIC = "forest2fcn-model"
CONFIG_MAGIC = "forest2fcn-config"
CAMERA_MAGIC = "forest2fcn-camera"
DETECTIONS_MAGIC = "forest2fcn-detections"
TRUTH_MAGIC = "forest2fcn-truth"
FORMAT_VERSION = 1
TENSOR_MAGIC = b"F2FT"
FLATTENING = "row,col,channel"


class FormatError(ValueError):
    pass


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass


def _f32(value):
    return "%.9g" % np.float32(value)


def _check_magic(line, magic, path):
    parts = line.split()
    if len(parts) != 2 or parts[0] != magic or not parts[1].isdigit():
        raise FormatError(f"{path}: not a {magic} document")
    if int(parts[1]) != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {parts[1]} unsupported "
                           f"(expected {FORMAT_VERSION})")


# ---------------------------------------------------------------- forests

def dump_forest(forest):
    lines = [f"{FOREST_MAGIC} {FORMAT_VERSION}",
             f"n_trees {len(forest.trees)} n_classes {forest.n_classes} "
             f"input_dim {forest.input_dim}"]
    for t, tree in enumerate(forest.trees):
        lines.append(f"tree {t} nodes {len(tree.nodes)}")
        for node in tree.nodes:
            if isinstance(node, SplitNode):
                lines.append(f"split {node.feature} {_f32(node.threshold)} "
                             f"{node.left} {node.right}")
            else:
                lines.append("leaf " + " ".join(_f32(v) for v in node.votes))
    return "\n".join(lines) + "\n"


def save_forest(forest, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_forest(forest))


def parse_forest(text, path="<forest>"):
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{path}: empty document")
    _check_magic(lines[0], FOREST_MAGIC, path)
    head = lines[1].split()
    n_trees = int(head[1])
    n_classes = int(head[3])
    input_dim = int(head[5])
    trees = []
    i = 2
    for _ in range(n_trees):
        parts = lines[i].split()
        if parts[0] != "tree":
            raise FormatError(f"{path}: expected a tree header at line {i + 1}")
        n_nodes = int(parts[3])
        i += 1
        nodes = []
        for _ in range(n_nodes):
            fields = lines[i].split()
            if fields[0] == "split":
                nodes.append(SplitNode(feature=int(fields[1]),
                                       threshold=float(np.float32(fields[2])),
                                       left=int(fields[3]), right=int(fields[4])))
            elif fields[0] == "leaf":
                votes = np.array([np.float32(v) for v in fields[1:]], dtype=np.float64)
                if votes.shape[0] != n_classes:
                    raise FormatError(f"{path}: leaf with {votes.shape[0]} votes, "
                                      f"expected {n_classes}")
                nodes.append(LeafNode(votes))
            else:
                raise FormatError(f"{path}: unknown node kind {fields[0]!r}")
            i += 1
        trees.append(DecisionTree(nodes=nodes, root=0))
    return Forest(trees=trees, n_classes=n_classes, input_dim=input_dim)


def load_forest(path):
    with open(path, encoding="utf-8") as fh:
        return parse_forest(fh.read(), path=str(path))


# ------------------------------------------------------ networks & bundles

_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8"), "i4": np.dtype("<i4")}


class _PayloadWriter:
    def __init__(self):
        self.chunks = []
        self.descr = []

    def add(self, array, code):
        arr = np.ascontiguousarray(array, dtype=_DTYPES[code])
        self.chunks.append(arr.tobytes())
        self.descr.append(f"{code}:{arr.size}")
        return self

    def blob(self):
        return b"".join(self.chunks)


class _PayloadReader:
    def __init__(self, blob):
        self.blob = blob
        self.offset = 0

    def take(self, code, count, shape=None):
        dtype = _DTYPES[code]
        nbytes = dtype.itemsize * count
        arr = np.frombuffer(self.blob[self.offset:self.offset + nbytes], dtype=dtype).copy()
        if arr.size != count:
            raise FormatError("payload shorter than its declared arrays")
        self.offset += nbytes
        return arr.reshape(shape) if shape is not None else arr


def _emit_network(name, net, lines, payload):
    lines.append(f"net {name} layers {len(net.layers)} patch_size {net.patch_size}")
    for layer in net.layers:
        if isinstance(layer, ConvLayer):
            kh, kw, ci, co = layer.weights.shape
            lines.append(f"layer conv {kh} {kw} {ci} {co} stride {layer.stride} "
                         f"pad {layer.padding}")
            payload.add(layer.weights, "f4").add(layer.bias, "f4")
        elif isinstance(layer, DenseLayer):
            lines.append(f"layer dense {layer.weights.shape[0]} {layer.weights.shape[1]}")
            payload.add(layer.weights, "f4").add(layer.bias, "f4")
        elif isinstance(layer, Activation):
            lines.append(f"layer act {layer.kind}")
        else:
            raise FormatError(f"cannot serialize layer {type(layer).__name__}")


def _read_network(lines, i, reader, path):
    header = lines[i].split()
    n_layers = int(header[3])
    patch_size = int(header[5])
    name = header[1]
    i += 1
    layers = []
    for _ in range(n_layers):
        parts = lines[i].split()
        if parts[:2] == ["layer", "conv"]:
            kh, kw, ci, co = map(int, parts[2:6])
            stride, pad = int(parts[7]), int(parts[9])
            w = reader.take("f4", kh * kw * ci * co, (kh, kw, ci, co))
            b = reader.take("f4", co)
            layers.append(ConvLayer(w, b, stride=stride, padding=pad))
        elif parts[:2] == ["layer", "dense"]:
            di, do = int(parts[2]), int(parts[3])
            w = reader.take("f4", di * do, (di, do))
            b = reader.take("f4", do)
            layers.append(DenseLayer(w, b))
        elif parts[:2] == ["layer", "act"]:
            layers.append(Activation(parts[2]))
        else:
            raise FormatError(f"{path}: unknown layer line {lines[i]!r}")
        i += 1
    return Network(layers, patch_size=patch_size, name=name), i


def _emit_head(head, lines, payload):
    c = head.constants
    lines.append(f"head input_dim {head.input_dim} n_classes {head.n_classes} "
                 f"n_splits {head.n_splits} n_leaves {head.n_leaves} "
                 f"nnz {head.l2_vals.shape[0]} c01 {c.c01!r} c12 {c.c12!r} c23 {c.c23!r}")
    payload.add(head.l1_cols, "i4").add(head.l1_bias, "f8")
    payload.add(head.l2_rows, "i4").add(head.l2_cols, "i4").add(head.l2_vals, "f8")
    payload.add(head.l2_bias, "f8").add(head.w3, "f8")


def _read_head(line, reader):
    parts = line.split()
    input_dim, n_classes = int(parts[2]), int(parts[4])
    n_splits, n_leaves, nnz = int(parts[6]), int(parts[8]), int(parts[10])
    constants = MapConstants(c01=float(parts[12]), c12=float(parts[14]),
                             c23=float(parts[16]))
    l1_cols = reader.take("i4", n_splits)
    l1_bias = reader.take("f8", n_splits)
    l2_rows = reader.take("i4", nnz)
    l2_cols = reader.take("i4", nnz)
    l2_vals = reader.take("f8", nnz)
    l2_bias = reader.take("f8", n_leaves)
    w3 = reader.take("f8", n_leaves * n_classes, (n_leaves, n_classes))
    return CompiledRFNet(input_dim, n_classes, l1_cols, l1_bias,
                         l2_rows, l2_cols, l2_vals, l2_bias, w3, constants)


@dataclass
class ModelBundle:
    feature_net: Network
    rf_head: CompiledRFNet
    fused_net: Network
    class_names: list

    @property
    def patch_size(self):
        return self.fused_net.patch_size

    @property
    def total_stride(self):
        return self.fused_net.total_stride


def check_bundle_consistency(bundle):
    """The stored fused network must equal re-fusing its parts bit for bit."""
    from .convnet import fuse

    rebuilt = fuse(bundle.feature_net, bundle.rf_head)
    if len(rebuilt.layers) != len(bundle.fused_net.layers):
        raise FormatError("fused network does not match its parts (layer count)")
    for i, (a, b) in enumerate(zip(rebuilt.layers, bundle.fused_net.layers)):
        if type(a) is not type(b):
            raise FormatError(f"fused network does not match its parts (layer {i} kind)")
        if isinstance(a, Activation):
            if a.kind != b.kind:
                raise FormatError(f"fused network does not match its parts (layer {i} activation)")
        elif (a.weights.shape != b.weights.shape
              or not np.array_equal(a.weights, b.weights)
              or not np.array_equal(a.bias, b.bias)):
            raise FormatError(f"fused network does not match its parts (layer {i} weights)")


def save_bundle(bundle, path):
    payload = _PayloadWriter()
    lines = [f"{MODEL_MAGIC} {FORMAT_VERSION}",
             f"flattening {FLATTENING}",
             f"patch_size {bundle.patch_size}",
             f"total_stride {bundle.total_stride}",
             "classes " + ",".join(bundle.class_names)]
    _emit_network("feature", bundle.feature_net, lines, payload)
    _emit_head(bundle.rf_head, lines, payload)
    _emit_network("fused", bundle.fused_net, lines, payload)
    blob = payload.blob()
    lines.append(f"arrays {' '.join(payload.descr)}")
    lines.append(f"payload {len(blob)} crc32 {zlib.crc32(blob):08x}")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(blob)


def load_bundle(path):
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    _check_magic(data[:nl].decode("utf-8"), MODEL_MAGIC, path)
    marker = data.find(b"\npayload ")
    if marker < 0:
        raise FormatError(f"{path}: missing payload marker")
    payload_line_end = data.find(b"\n", marker + 1)
    header = data[:payload_line_end].decode("utf-8")
    lines = header.splitlines()
    payload_fields = lines[-1].split()
    nbytes = int(payload_fields[1])
    declared_crc = int(payload_fields[3], 16)
    blob = data[payload_line_end + 1:]
    if len(blob) != nbytes:
        raise ChecksumError(f"{path}: payload has {len(blob)} bytes, header "
                            f"declares {nbytes}")
    if zlib.crc32(blob) != declared_crc:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    if lines[1] != f"flattening {FLATTENING}":
        raise FormatError(f"{path}: unsupported flattening order")
    class_names = lines[4].split(" ", 1)[1].split(",")
    reader = _PayloadReader(blob)
    i = 5
    feature_net, i = _read_network(lines, i, reader, path)
    rf_head = _read_head(lines[i], reader)
    i += 1
    fused_net, i = _read_network(lines, i, reader, path)
    bundle = ModelBundle(feature_net=feature_net, rf_head=rf_head,
                         fused_net=fused_net, class_names=class_names)
    check_bundle_consistency(bundle)
    return bundle


def save_network(net, path):
    """A single network in the bundle container (head section omitted)."""
    payload = _PayloadWriter()
    lines = [f"{MODEL_MAGIC} {FORMAT_VERSION}", f"flattening {FLATTENING}"]
    _emit_network(net.name, net, lines, payload)
    blob = payload.blob()
    lines.append(f"payload {len(blob)} crc32 {zlib.crc32(blob):08x}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        fh.write(blob)


def load_network(path):
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    _check_magic(data[:nl].decode("utf-8"), MODEL_MAGIC, path)
    marker = data.find(b"\npayload ")
    payload_line_end = data.find(b"\n", marker + 1)
    lines = data[:payload_line_end].decode("utf-8").splitlines()
    fields = lines[-1].split()
    blob = data[payload_line_end + 1:]
    if len(blob) != int(fields[1]) or zlib.crc32(blob) != int(fields[3], 16):
        raise ChecksumError(f"{path}: payload corrupted")
    net, _ = _read_network(lines, 2, _PayloadReader(blob), path)
    return net


def save_head(head, path):
    payload = _PayloadWriter()
    lines = [f"{MODEL_MAGIC} {FORMAT_VERSION}", f"flattening {FLATTENING}"]
    _emit_head(head, lines, payload)
    blob = payload.blob()
    lines.append(f"payload {len(blob)} crc32 {zlib.crc32(blob):08x}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        fh.write(blob)


def load_head(path):
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    _check_magic(data[:nl].decode("utf-8"), MODEL_MAGIC, path)
    marker = data.find(b"\npayload ")
    payload_line_end = data.find(b"\n", marker + 1)
    lines = data[:payload_line_end].decode("utf-8").splitlines()
    fields = lines[-1].split()
    blob = data[payload_line_end + 1:]
    if len(blob) != int(fields[1]) or zlib.crc32(blob) != int(fields[3], 16):
        raise ChecksumError(f"{path}: payload corrupted")
    return _read_head(lines[2], _PayloadReader(blob))


# ------------------------------------------------------------- configs

def save_detector_config(config, path, class_names=None):
    def name(cls):
        return class_names[cls] if class_names else str(cls)

    lines = [f"{CONFIG_MAGIC} {FORMAT_VERSION}",
             "scales " + " ".join(repr(s) for s in config.scales),
             f"t_min {config.t_min!r}",
             f"part_iou {config.part_iou!r}",
             f"global_nms_iou {config.global_nms_iou!r}",
             f"background_class {name(config.background_class)}"]
    for cls in sorted(config.class_thresholds):
        lines.append(f"threshold {name(cls)} {config.class_thresholds[cls]!r}")
    for cls in sorted(config.part_table):
        parts = " ".join(name(p) for p in config.part_table[cls])
        lines.append(f"parts {name(cls)} {parts}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_detector_config(path, class_names=None):
    def resolve(token):
        if class_names and token in class_names:
            return class_names.index(token)
        try:
            return int(token)
        except ValueError:
            raise FormatError(f"{path}: unknown class name {token!r}") from None

    with open(path, encoding="utf-8") as fh:
        lines = [l for l in fh.read().splitlines() if l and not l.startswith("#")]
    _check_magic(lines[0], CONFIG_MAGIC, path)
    config = DetectorConfig()
    for line in lines[1:]:
        key, rest = line.split(" ", 1)
        if key == "scales":
            config.scales = [float(v) for v in rest.split()]
        elif key == "t_min":
            config.t_min = float(rest)
        elif key == "part_iou":
            config.part_iou = float(rest)
        elif key == "global_nms_iou":
            config.global_nms_iou = float(rest)
        elif key == "background_class":
            config.background_class = resolve(rest.strip())
        elif key == "threshold":
            cls, value = rest.split()
            config.class_thresholds[resolve(cls)] = float(value)
        elif key == "parts":
            tokens = rest.split()
            config.part_table[resolve(tokens[0])] = [resolve(t) for t in tokens[1:]]
        else:
            raise FormatError(f"{path}: unknown config key {key!r}")
    return config


@dataclass
class CameraConfig:
    """Camera intrinsics plus per-class physical sign sizes in meters."""
    camera: object                     # geo.CameraModel
    sign_sizes: dict                   # class name -> (width, height)
    default_size: tuple = (0.6, 0.6)   # circular German signs
    accuracy_cutoff: float = 3.95      # meters of GPS inaccuracy

    def size_for(self, class_name):
        return self.sign_sizes.get(class_name, self.default_size)


def save_camera_config(cfg, path):
    lines = [f"{CAMERA_MAGIC} {FORMAT_VERSION}",
             f"focal_length {cfg.camera.focal_length!r}",
             f"sensor_width {cfg.camera.sensor_width!r}",
             f"angle_of_view {cfg.camera.angle_of_view!r}",
             f"accuracy_cutoff {cfg.accuracy_cutoff!r}",
             f"default_size {cfg.default_size[0]!r} {cfg.default_size[1]!r}"]
    for name in sorted(cfg.sign_sizes):
        w, h = cfg.sign_sizes[name]
        lines.append(f"sign_size {name} {w!r} {h!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_camera_config(path):
    from .geo import CameraModel

    with open(path, encoding="utf-8") as fh:
        lines = [l for l in fh.read().splitlines() if l and not l.startswith("#")]
    _check_magic(lines[0], CAMERA_MAGIC, path)
    values = {"focal_length": None, "sensor_width": None, "angle_of_view": 65.0}
    sizes = {}
    default_size = (0.6, 0.6)
    cutoff = 3.95
    for line in lines[1:]:
        fields = line.split()
        if fields[0] in values:
            values[fields[0]] = float(fields[1])
        elif fields[0] == "accuracy_cutoff":
            cutoff = float(fields[1])
        elif fields[0] == "default_size":
            default_size = (float(fields[1]), float(fields[2]))
        elif fields[0] == "sign_size":
            sizes[fields[1]] = (float(fields[2]), float(fields[3]))
        else:
            raise FormatError(f"{path}: unknown camera key {fields[0]!r}")
    if values["focal_length"] is None or values["sensor_width"] is None:
        raise FormatError(f"{path}: focal_length and sensor_width are required")
    camera = CameraModel(values["focal_length"], values["sensor_width"],
                         values["angle_of_view"])
    return CameraConfig(camera=camera, sign_sizes=sizes,
                        default_size=default_size, accuracy_cutoff=cutoff)


# ------------------------------------------------------------ detections

def dump_detections(image_id, boxes, class_names):
    lines = [f"{DETECTIONS_MAGIC} {FORMAT_VERSION}", f"image {image_id}"]
    for b in boxes:
        lines.append(f"box {b.x!r} {b.y!r} {b.w!r} {b.h!r} "
                     f"{class_names[b.cls]} {b.score!r}")
    return "\n".join(lines) + "\n"


def save_detections(image_id, boxes, class_names, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_detections(image_id, boxes, class_names))


def load_detections(path, class_names):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    _check_magic(lines[0], DETECTIONS_MAGIC, path)
    if not lines[1].startswith("image "):
        raise FormatError(f"{path}: missing image id")
    image_id = lines[1].split(" ", 1)[1]
    boxes = []
    for line in lines[2:]:
        fields = line.split()
        if fields[0] != "box" or len(fields) != 7:
            raise FormatError(f"{path}: malformed box line {line!r}")
        if fields[5] not in class_names:
            raise FormatError(f"{path}: unknown class {fields[5]!r}")
        boxes.append(BoundingBox(float(fields[1]), float(fields[2]),
                                 float(fields[3]), float(fields[4]),
                                 class_names.index(fields[5]), float(fields[6])))
    return image_id, boxes


def save_ground_truth(gts, class_names, path):
    lines = [f"{TRUTH_MAGIC} {FORMAT_VERSION}"]
    for g in gts:
        lines.append(f"box {g.image_id} {g.x!r} {g.y!r} {g.w!r} {g.h!r} "
                     f"{class_names[g.cls]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_ground_truth(path, class_names):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    _check_magic(lines[0], TRUTH_MAGIC, path)
    gts = []
    for line in lines[1:]:
        fields = line.split()
        if fields[0] != "box" or len(fields) != 7:
            raise FormatError(f"{path}: malformed box line {line!r}")
        if fields[6] not in class_names:
            raise FormatError(f"{path}: unknown class {fields[6]!r}")
        gts.append(GroundTruthBox(fields[1], float(fields[2]), float(fields[3]),
                                  float(fields[4]), float(fields[5]),
                                  class_names.index(fields[6])))
    return gts


# --------------------------------------------------------------- geo docs

def dump_geo_document(signs, class_names):
    """GeoJSON FeatureCollection; properties carry lat, lon, heading,
    class and source_image so plain viewers and parsers see every field."""
    features = []
    for s in signs:
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [s.position.lon, s.position.lat]},
            "properties": {
                "lat": s.position.lat,
                "lon": s.position.lon,
                "heading": s.heading,
                "class": class_names[s.cls],
                "source_image": s.source_image,
            },
        })
    doc = {"type": "FeatureCollection",
           "format_version": FORMAT_VERSION,
           "features": features}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_geo_document(signs, class_names, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_geo_document(signs, class_names))


def load_geo_document(path, class_names):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported geo document version")
    signs = []
    for feature in doc["features"]:
        p = feature["properties"]
        signs.append(SignGeo(GeoPoint(p["lat"], p["lon"]), heading=p["heading"],
                             cls=class_names.index(p["class"]),
                             source_image=p["source_image"]))
    return signs


# ----------------------------------------------------------------- images

def save_image(tensor, path):
    """Write a float tensor in [0, 1] as binary PPM (3 channels) or PGM (1)."""
    tensor = np.asarray(tensor)
    if tensor.ndim != 3 or tensor.shape[2] not in (1, 3):
        raise FormatError("images must be (h, w, 1) or (h, w, 3)")
    h, w, c = tensor.shape
    data = np.clip(np.rint(tensor * 255.0), 0, 255).astype(np.uint8)
    magic = b"P6" if c == 3 else b"P5"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def load_image(path):
    """Read a binary PPM/PGM into a float32 tensor scaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.find(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary pixmap/graymap")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit images supported")
    channels = 3 if fields[0] == b"P6" else 1
    payload = data[pos + 1:]
    expected = h * w * channels
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} pixel bytes, found {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels)
    return pixels.astype(np.float32) / 255.0


# ---------------------------------------------------------------- tensors

def save_tensor(tensor, path):
    """Raw little-endian float32 with a 16-byte header (magic, h, w, c)."""
    tensor = np.ascontiguousarray(tensor, dtype="<f4")
    if tensor.ndim != 3:
        raise FormatError("tensors are rank-3 (h, w, c)")
    h, w, c = tensor.shape
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(np.array([h, w, c], dtype="<u4").tobytes())
        fh.write(tensor.tobytes())


def load_tensor(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad tensor magic")
    h, w, c = np.frombuffer(data[4:16], dtype="<u4")
    expected = 16 + 4 * h * w * c
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data[16:], dtype="<f4").reshape(h, w, c).copy()


# ----------------------------------------------------------------- traces

def load_speed_trace(path):
    """Delimited text: one `timestamp speed_kmh` pair per line."""
    from .ridefilter import SpeedTrace

    rows = _load_columns(path, 2)
    return SpeedTrace(rows[:, 0], rows[:, 1])


def load_accel_trace(path):
    """Delimited text: one `timestamp ax ay az` sample per line (m/s^2)."""
    from .ridefilter import AccelTrace

    rows = _load_columns(path, 4)
    return AccelTrace(rows[:, 0], rows[:, 1:4])


def load_image_index(path):
    """Delimited text: `image_id timestamp` per line."""
    ids, stamps = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.replace(",", " ").split()
            if len(fields) != 2:
                raise FormatError(f"{path}: expected `image_id timestamp` lines")
            ids.append(fields[0])
            stamps.append(float(fields[1]))
    return ids, np.asarray(stamps)


def load_track(path):
    """Delimited text: `image_id lat lon heading accuracy image_width`."""
    from .geo import ImageGeo

    track = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.replace(",", " ").split()
            if len(fields) != 6:
                raise FormatError(f"{path}: expected 6 columns "
                                  "(image_id lat lon heading accuracy width)")
            track[fields[0]] = ImageGeo(
                GeoPoint(float(fields[1]), float(fields[2])),
                heading=float(fields[3]), accuracy=float(fields[4]),
                image_width=int(fields[5]))
    return track


def _load_columns(path, n_columns):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.replace(",", " ").split()
            if len(fields) != n_columns:
                raise FormatError(f"{path}: expected {n_columns} columns, "
                                  f"got {len(fields)}")
            rows.append([float(v) for v in fields])
    if not rows:
        raise FormatError(f"{path}: empty trace")
    return np.asarray(rows)
