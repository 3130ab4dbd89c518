"""Dataset container: a manifest plus raw little-endian array blobs.

One directory per dataset:

    manifest.json        schema, configs, shapes, per-blob sha256 hashes
    labels.bin           (N, n_cams, H, W) u8 concept indices, row-major
    locations.bin        (N, 3) f32
    beam_labels.bin      (N,) u16
    blockage.bin         (N, n_horizons) u8
    frame_ids.bin        (N,) u32
    channels.bin         (N, K, N_t, 2) f32 interleaved re/im (optional)

Hashes are verified on load; shapes are explicit in the manifest so the
container round-trips bitwise.
"""

import hashlib
import json
import os

import numpy as np

from .channel import RayTraceConfig
from .predictor import SampleSet
from .scene import SceneConfig
from .semantics import CATALOG

SCHEMA_VERSION = 1

_BLOBS = {
    "labels": ("<u1", "label_maps"),
    "locations": ("<f4", "locations"),
    "beam_labels": ("<u2", "beam_labels"),
    "blockage": ("<u1", "blockage"),
    "frame_ids": ("<u4", "frame_ids"),
}


class ContainerError(IOError):
    pass


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_container(path, samples: SampleSet, scene_cfg: SceneConfig,
                    rt_cfg: RayTraceConfig, resolution, store_channels=True):
    os.makedirs(path, exist_ok=True)
    arrays = {
        "labels": np.ascontiguousarray(samples.label_maps, dtype="<u1"),
        "locations": np.ascontiguousarray(samples.locations, dtype="<f4"),
        "beam_labels": np.ascontiguousarray(samples.beam_labels, dtype="<u2"),
        "blockage": np.ascontiguousarray(samples.blockage, dtype="<u1"),
        "frame_ids": np.ascontiguousarray(samples.frame_ids, dtype="<u4"),
    }
    if store_channels and samples.channels is not None:
        ch = np.ascontiguousarray(samples.channels)
        inter = np.empty(ch.shape + (2,), dtype="<f4")
        inter[..., 0] = ch.real
        inter[..., 1] = ch.imag
        arrays["channels"] = inter

    hashes, shapes = {}, {}
    for name, arr in arrays.items():
        data = arr.tobytes()
        with open(os.path.join(path, f"{name}.bin"), "wb") as fh:
            fh.write(data)
        hashes[name] = _sha256(data)
        shapes[name] = list(arr.shape)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "scene_config": scene_cfg.to_dict(),
        "raytrace_config": rt_cfg.to_dict(),
        "catalog": list(CATALOG.names),
        "resolution": list(resolution),
        "camera_count": samples.n_cams,
        "horizons": list(samples.horizons),
        "sample_count": len(samples),
        "M_bm": samples.M_bm,
        "shapes": shapes,
        "hashes": hashes,
        "has_channels": "channels" in arrays,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def _read_blob(path, name, dtype, shape, expected_hash):
    fn = os.path.join(path, f"{name}.bin")
    if not os.path.exists(fn):
        raise ContainerError(f"missing blob {fn}")
    with open(fn, "rb") as fh:
        data = fh.read()
    if _sha256(data) != expected_hash:
        raise ContainerError(f"hash mismatch for blob {name}")
    arr = np.frombuffer(data, dtype=dtype)
    expect = int(np.prod(shape)) if shape else arr.size
    if arr.size != expect:
        raise ContainerError(f"blob {name} has {arr.size} items, manifest says {expect}")
    return arr.reshape(shape)


def read_container(path):
    """Returns (SampleSet, manifest). Verifies every blob hash."""
    mf = os.path.join(path, "manifest.json")
    if not os.path.exists(mf):
        raise ContainerError(f"missing manifest {mf}")
    with open(mf) as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ContainerError("unsupported container schema version")
    if manifest["catalog"] != list(CATALOG.names):
        raise ContainerError("container concept catalog does not match this build")

    cols = {}
    for name, (dtype, attr) in _BLOBS.items():
        cols[attr] = _read_blob(path, name, dtype, manifest["shapes"][name],
                                manifest["hashes"][name]).copy()
    channels = None
    if manifest.get("has_channels"):
        inter = _read_blob(path, "channels", "<f4", manifest["shapes"]["channels"],
                           manifest["hashes"]["channels"])
        channels = inter[..., 0] + 1j * inter[..., 1]

    samples = SampleSet(
        label_maps=cols["label_maps"],
        locations=cols["locations"].astype(np.float32),
        beam_labels=cols["beam_labels"],
        blockage=cols["blockage"],
        frame_ids=cols["frame_ids"],
        horizons=tuple(manifest["horizons"]),
        M_bm=int(manifest["M_bm"]),
        channels=channels,
    )
    return samples, manifest
