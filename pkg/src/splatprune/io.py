"""Checkpoint, camera, image and report files.

PLY files follow the layout written by the reference 3DGS exporter: binary
little-endian, one ``vertex`` element, 62 float32 properties per vertex.
``f_rest_*`` holds the 15 higher-order SH coefficients channel-major, i.e. all
15 red coefficients, then green, then blue.
"""

from __future__ import annotations

import csv
import json
import os
from typing import List, Sequence

import numpy as np
from PIL import Image

from .model import SH_COEFFS, CameraView, Scene

N_REST = (SH_COEFFS - 1) * 3
PLY_PROPERTIES = (
    ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    + [f"f_rest_{i}" for i in range(N_REST)]
    + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
)
PLY_DTYPE = np.dtype([(name, "<f4") for name in PLY_PROPERTIES])
CAMERA_ORTHO_TOL = 1e-4


class PlyFormatError(ValueError):
    pass


class MalformedHeaderError(PlyFormatError):
    pass


class PropertyOrderError(PlyFormatError):
    pass


class TruncatedPayloadError(PlyFormatError):
    pass


class CameraFileError(ValueError):
    pass


def ply_header(n_vertices: int) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n_vertices}"]
    lines += [f"property float {name}" for name in PLY_PROPERTIES]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def _parse_header(f, path):
    first = f.readline()
    if first.strip() != b"ply":
        raise MalformedHeaderError(f"{path}: not a PLY file (line 1 is {first[:20]!r})")
    props, n_vertices, fmt = [], None, None
    lineno = 1
    while True:
        line = f.readline()
        lineno += 1
        if not line:
            raise MalformedHeaderError(f"{path}: header ends without end_header (line {lineno})")
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            fmt = tokens[1:]
            if fmt != ["binary_little_endian", "1.0"]:
                raise PropertyOrderError(f"{path}:{lineno}: unsupported encoding {' '.join(fmt)!r}")
        elif tokens[0] == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise MalformedHeaderError(f"{path}:{lineno}: bad element line")
            if tokens[1] != "vertex" or n_vertices is not None:
                raise PropertyOrderError(f"{path}:{lineno}: only a single vertex element is supported")
            n_vertices = int(tokens[2])
        elif tokens[0] == "property":
            if len(tokens) != 3 or tokens[1] not in ("float", "float32"):
                raise PropertyOrderError(f"{path}:{lineno}: expected a float property, got {line.strip()!r}")
            props.append(tokens[2])
        elif tokens[0] == "end_header":
            break
        else:
            raise MalformedHeaderError(f"{path}:{lineno}: unexpected header line {line.strip()!r}")
    if fmt is None or n_vertices is None:
        raise MalformedHeaderError(f"{path}: header lacks format or vertex element")
    if props != PLY_PROPERTIES:
        bad = next((i for i, (a, b) in enumerate(zip(props, PLY_PROPERTIES)) if a != b), min(len(props), len(PLY_PROPERTIES)))
        raise PropertyOrderError(
            f"{path}: property #{bad} is {props[bad] if bad < len(props) else '<missing>'!r}, "
            f"expected {PLY_PROPERTIES[bad] if bad < len(PLY_PROPERTIES) else '<none>'!r}"
        )
    return n_vertices


def read_ply(path) -> Scene:
    with open(path, "rb") as f:
        n = _parse_header(f, path)
        payload = f.read()
    need = n * PLY_DTYPE.itemsize
    if len(payload) < need:
        raise TruncatedPayloadError(f"{path}: expected {need} payload bytes, found {len(payload)}")
    v = np.frombuffer(payload[:need], dtype=PLY_DTYPE, count=n)
    cols = lambda names: np.stack([v[k] for k in names], axis=1).astype(np.float64) if n else np.zeros((0, len(names)))
    dc = cols(["f_dc_0", "f_dc_1", "f_dc_2"])
    rest = cols([f"f_rest_{i}" for i in range(N_REST)]).reshape(n, 3, SH_COEFFS - 1)
    sh = np.concatenate([dc[:, None, :], np.swapaxes(rest, 1, 2)], axis=1)
    return Scene(
        cols(["x", "y", "z"]),
        cols(["scale_0", "scale_1", "scale_2"]),
        cols(["rot_0", "rot_1", "rot_2", "rot_3"]),
        v["opacity"].astype(np.float64) if n else np.zeros(0),
        sh,
        source_tag=os.fspath(path),
    )


def write_ply(scene: Scene, path) -> None:
    n = len(scene)
    fields = [scene.positions, scene.log_scales, scene.rotations, scene.opacity_logits, scene.sh_coeffs]
    if not all(np.all(np.isfinite(a)) for a in fields):
        raise ValueError("refusing to write non-finite primitive parameters")
    v = np.zeros(n, dtype=PLY_DTYPE)
    for i, k in enumerate("xyz"):
        v[k] = scene.positions[:, i]
    for c in range(3):
        v[f"f_dc_{c}"] = scene.sh_coeffs[:, 0, c]
    rest = np.swapaxes(scene.sh_coeffs[:, 1:, :], 1, 2).reshape(n, N_REST)
    for i in range(N_REST):
        v[f"f_rest_{i}"] = rest[:, i]
    v["opacity"] = scene.opacity_logits
    for i in range(3):
        v[f"scale_{i}"] = scene.log_scales[:, i]
    for i in range(4):
        v[f"rot_{i}"] = scene.rotations[:, i]
    with open(path, "wb") as f:
        f.write(ply_header(n))
        f.write(v.tobytes())


def _orthonormalize(R):
    u, _, vt = np.linalg.svd(R)
    return u @ vt


def read_cameras(path, images_dir=None) -> List[CameraView]:
    """Parse a camera JSON array; optionally attach ``<img_name>.png`` ground truth from ``images_dir``."""
    with open(path, encoding="utf-8") as f:
        try:
            entries = json.load(f)
        except json.JSONDecodeError as e:
            raise CameraFileError(f"{path}:{e.lineno}:{e.colno}: invalid JSON ({e.msg})") from None
    if not isinstance(entries, list):
        raise CameraFileError(f"{path}: expected a JSON array of cameras")
    cams = []
    for k, e in enumerate(entries):
        where = f"{path}: camera[{k}]"
        try:
            width, height = int(e["width"]), int(e["height"])
            R = np.asarray(e["rotation"], dtype=np.float64).reshape(3, 3)
            pos = np.asarray(e["position"], dtype=np.float64).reshape(3)
            fx, fy = float(e["fx"]), float(e["fy"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CameraFileError(f"{where}: missing or malformed field ({exc})") from None
        if width <= 0 or height <= 0:
            raise CameraFileError(f"{where}: width/height must be positive")
        err = np.max(np.abs(R @ R.T - np.eye(3)))
        if err > CAMERA_ORTHO_TOL or np.linalg.det(R) <= 0:
            raise CameraFileError(f"{where}: rotation is not orthonormal (max error {err:.2e})")
        name = str(e.get("img_name", e.get("id", k)))
        gt = None
        if images_dir is not None:
            img_path = os.path.join(images_dir, name + ".png")
            if not os.path.exists(img_path):
                raise CameraFileError(f"{where}: ground-truth image {img_path} not found")
            gt = read_image(img_path)
        try:
            cams.append(CameraView.from_camera_pose(
                width, height, fx, fy, pos, _orthonormalize(R),
                cx=e.get("cx"), cy=e.get("cy"), ground_truth=gt, name=name,
            ))
        except ValueError as exc:
            raise CameraFileError(f"{where}: {exc}") from None
    return cams


def camera_entry(cam: CameraView, k: int) -> dict:
    return {
        "id": k,
        "img_name": cam.name or f"view_{k:03d}",
        "width": cam.width,
        "height": cam.height,
        "position": cam.center.tolist(),
        "rotation": cam.rotation.T.tolist(),
        "fx": cam.fx,
        "fy": cam.fy,
    }


def write_cameras(cams: Sequence[CameraView], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([camera_entry(c, k) for k, c in enumerate(cams)], f, indent=2)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError(f"{path}: expected an 8-bit RGB PNG, got mode {im.mode}")
        return np.asarray(im, dtype=np.float64) / 255.0


def to_uint8(image) -> np.ndarray:
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {a.shape}")
    # round half up
    return np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(image, path) -> None:
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def write_report(report, path, format: str = "json") -> None:
    """Write a MetricsReport (or a list of flat dict rows) as JSON or CSV."""
    if format not in ("json", "csv"):
        raise ValueError(f"unknown report format {format!r}")
    if hasattr(report, "to_dict"):
        if format == "json":
            report.write_json(path)
        else:
            report.write_csv(path)
        return
    rows = list(report)
    if format == "json":
        with open(path, "w", encoding="utf-8") as f:
            json.dump(rows, f, indent=2, ensure_ascii=False)
        return
    fields = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def read_report_csv(path) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
