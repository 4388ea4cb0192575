"""Synthetic RSA dataset: generation, crop augmentation, splitting, persistence."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from .dsp import FRAMES_PER_IMAGE, ProcessingConfig, process_block
from .formats import RSA_SHAPE, FormatError, read_rsa, write_rsa
from .radar_sim import (CLASS_NAMES, ChirpConfig, GestureClass, GestureParams, RecordingSpec, noise_std_for_snr,
                        recording_scatterers, synthesize_cube_stack)

log = logging.getLogger(__name__)

BLOCK_FRAMES = 160
SPLITS = ("train", "val", "test")


@dataclass
class SampleRecord:
    image: np.ndarray
    label: int
    recording: str
    seed: int
    params: dict = field(default_factory=dict)
    crop: int = 0
    split: str | None = None

    def __post_init__(self):
        if not 0 <= int(self.label) < len(CLASS_NAMES):
            raise ValueError(f"label {self.label} outside the {len(CLASS_NAMES)} gesture classes")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class GeneratorConfig:
    crops: int = 8
    block_frames: int = BLOCK_FRAMES
    range_jitter: int = 4
    snr_db: float = 20.0


def default_chirp_config(snr_db: float = 20.0) -> ChirpConfig:
    """Default radar with noise set for ``snr_db`` at the hand's range-Doppler peak."""
    cfg = ChirpConfig()
    return replace(cfg, noise_std=noise_std_for_snr(cfg, snr_db, at_peak_bin=True))


def draw_recording_spec(g: GestureClass, rng: np.random.Generator, frame_period: float,
                        block_frames: int = BLOCK_FRAMES) -> RecordingSpec:
    """Randomized kinematics standing in for inter-subject variation."""
    hand = rng.choice([-1.0, 1.0])
    params = GestureParams(
        duration=rng.uniform(0.7, 1.1),
        start_range=rng.uniform(0.18, 0.30),
        sweep=math.radians(rng.uniform(25.0, 35.0)),
        offset=hand * math.radians(rng.uniform(0.0, 8.0)),
        click_depth=rng.uniform(0.08, 0.12),
        push_fraction=rng.uniform(0.5, 0.7),
        wrist_amplitude=rng.uniform(0.025, 0.035),
        wrist_frequency=rng.uniform(3.5, 4.5),
    )
    span = math.ceil(params.duration / frame_period)
    onset_frame = int(rng.integers(8, block_frames - span - 8 + 1))
    return RecordingSpec(params=params, onset=onset_frame * frame_period,
                         body_range=rng.uniform(0.4, 0.6), body_reflectivity=3.0,
                         body_azimuth=math.radians(rng.uniform(-5.0, 5.0)))


def nucleus_frames(spec: RecordingSpec, frame_period: float) -> tuple[int, int]:
    """First and last frame index during which the hand moves."""
    start = round(spec.onset / frame_period)
    return start, start + math.ceil(spec.params.duration / frame_period)


def random_crop_augment(block: np.ndarray, crops: int, rng: np.random.Generator,
                        nucleus: tuple[int, int] | None = None, range_jitter: int = 0,
                        length: int = FRAMES_PER_IMAGE) -> list[np.ndarray]:
    """Random ``length``-frame windows of ``block`` (T, 128, 3).

    When ``nucleus`` is given every window contains frames
    ``nucleus[0] .. nucleus[1]``. ``range_jitter`` shifts each crop by up to
    that many range bins, replicating the edge column.
    """
    block = np.asarray(block)
    T = block.shape[0]
    if T < length:
        raise ValueError(f"block has {T} frames, need at least {length}")
    lo, hi = 0, T - length
    if nucleus is not None:
        lo = max(lo, nucleus[1] - length)
        hi = min(hi, nucleus[0])
        if lo > hi:
            raise ValueError(f"nucleus {nucleus} does not fit in a {length}-frame window")
    out = []
    for _ in range(crops):
        start = int(rng.integers(lo, hi + 1))
        img = block[start:start + length]
        if range_jitter:
            shift = int(rng.integers(-range_jitter, range_jitter + 1))
            img = _shift_range(img, shift)
        out.append(np.ascontiguousarray(img, dtype=np.float32))
    return out


def _shift_range(img: np.ndarray, shift: int) -> np.ndarray:
    if shift == 0:
        return img
    r = img.shape[1]
    idx = np.clip(np.arange(r) - shift, 0, r - 1)
    return img[:, idx]


def generate_recording(g, index: int, seed: int, cfg: ChirpConfig, gen: GeneratorConfig,
                       proc: ProcessingConfig | None = None) -> list[SampleRecord]:
    g = GestureClass.parse(g)
    ss = np.random.SeedSequence([seed, int(g), index])
    rec_seed = int(ss.generate_state(1)[0])
    rng = np.random.default_rng(rec_seed)
    spec = draw_recording_spec(g, rng, cfg.frame_period, gen.block_frames)
    scatterers = recording_scatterers(g, spec, gen.block_frames, cfg.frame_period)
    cubes = synthesize_cube_stack(cfg, scatterers, rng_seed=rng.integers(2**63))
    block = process_block(cubes, cfg, proc)
    crops = random_crop_augment(block, gen.crops, rng, nucleus_frames(spec, cfg.frame_period), gen.range_jitter)
    params = {**asdict(spec.params), "onset": spec.onset, "body_range": spec.body_range,
              "body_azimuth": spec.body_azimuth}
    name = f"{g.name.lower()}-{index:04d}"
    return [SampleRecord(img, int(g), name, rec_seed, params, crop=k) for k, img in enumerate(crops)]


def generate_dataset(n_per_class: int, cfg: ChirpConfig | None = None, seed: int = 0,
                     gen: GeneratorConfig | None = None, proc: ProcessingConfig | None = None) -> list[SampleRecord]:
    """``n_per_class`` recordings per gesture, each expanded to ``gen.crops`` samples."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    gen = gen or GeneratorConfig()
    cfg = cfg or default_chirp_config(gen.snr_db)
    records = []
    for index in range(n_per_class):
        for g in GestureClass:
            records.extend(generate_recording(g, index, seed, cfg, gen, proc))
        if (index + 1) % 25 == 0:
            log.info("generated %d/%d recordings per class", index + 1, n_per_class)
    return records


def split_dataset(records: list[SampleRecord], val_ratio: float = 0.3, seed: int = 0) -> list[SampleRecord]:
    """Tag records train/val, stratified by class and grouped by recording."""
    if not 0 < val_ratio < 1:
        raise ValueError("val_ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    val_recordings = set()
    for k in sorted({r.label for r in records}):
        recs = sorted({r.recording for r in records if r.label == k})
        if len(recs) < 2:
            raise ValueError(f"class {CLASS_NAMES[k]} has fewer than 2 recordings")
        n_val = min(max(int(round(val_ratio * len(recs))), 1), len(recs) - 1)
        chosen = rng.permutation(len(recs))[:n_val]
        val_recordings.update(recs[i] for i in chosen)
    return [replace(r, split="val" if r.recording in val_recordings else "train") for r in records]


def as_arrays(records: list[SampleRecord], split: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    chosen = [r for r in records if split is None or r.split == split]
    if not chosen:
        return np.zeros((0,) + RSA_SHAPE, np.float32), np.zeros(0, np.int64)
    x = np.stack([r.image for r in chosen]).astype(np.float32, copy=False)
    return x, np.array([r.label for r in chosen], dtype=np.int64)


# ----------------------------------------------------------- persistence

MANIFEST = "manifest.json"

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "shape", "class_names", "samples"],
    "properties": {
        "format": {"const": "RSA1"},
        "version": {"const": 1},
        "shape": {"const": list(RSA_SHAPE)},
        "class_names": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "generator": {"type": "object"},
        "samples": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["file", "label", "split", "seed", "recording", "params"],
                "properties": {
                    "file": {"type": "string"},
                    "label": {"type": "integer", "minimum": 0, "maximum": 254},
                    "split": {"enum": [*SPLITS, None]},
                    "seed": {"type": "integer", "minimum": 0},
                    "recording": {"type": "string"},
                    "crop": {"type": "integer", "minimum": 0},
                    "params": {"type": "object"},
                },
            },
        },
    },
}


def save_dataset(records: list[SampleRecord], path, generator: dict | None = None) -> dict:
    """Write one RSA1 file per record, then the manifest (the commit point)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, r in enumerate(records):
        name = f"{i:06d}.rsa"
        write_rsa(root / name, r.image, r.label)
        entries.append({"file": name, "label": int(r.label), "split": r.split, "seed": int(r.seed),
                        "recording": r.recording, "crop": int(r.crop), "params": r.params})
    manifest = {"format": "RSA1", "version": 1, "shape": list(RSA_SHAPE), "class_names": CLASS_NAMES,
                "samples": entries}
    if generator is not None:
        manifest["generator"] = generator
    jsonschema.validate(manifest, MANIFEST_SCHEMA)
    tmp = root / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    os.replace(tmp, root / MANIFEST)
    return manifest


def read_manifest(path) -> dict:
    mpath = Path(path) / MANIFEST
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise FormatError(mpath, 0, "manifest not found") from None
    except json.JSONDecodeError as exc:
        raise FormatError(mpath, exc.pos, f"invalid JSON: {exc.msg}") from None
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise FormatError(mpath, 0, f"manifest does not match schema: {exc.message}") from None
    return manifest


def load_dataset(path, split: str | None = None) -> tuple[dict, list[SampleRecord]]:
    root = Path(path)
    manifest = read_manifest(root)
    records = []
    for entry in manifest["samples"]:
        if split is not None and entry["split"] != split:
            continue
        image, label = read_rsa(root / entry["file"])
        if label != entry["label"]:
            raise FormatError(root / entry["file"], 4, f"label {label} disagrees with manifest {entry['label']}")
        records.append(SampleRecord(image, label, entry["recording"], entry["seed"], entry["params"],
                                    entry.get("crop", 0), entry["split"]))
    return manifest, records
