"""Sequence synthesis, the binary sequence format and the dataset manifest.

Sequence file layout (little-endian)::

    b"GZSQ"                       magic
    u32 version (1)
    u32 T, eye_h, eye_w, screen_c, screen_h, screen_w, n_labels
    T records of:
        f64                       timestamp (s)
        u8[2 * eye_h * eye_w]     left then right eye image (absent if eye_h = 0)
        u8[screen_c * screen_h * screen_w]
        f32[n_labels]             see LABELS
        u8                        validity

Labels of invalid samples are NaN.  The manifest is an INI file
(``manifest.ini``) with a ``[dataset]`` section, a ``[screen]`` section,
one ``[observer:<id>]`` section per observer (kappa omitted for test
observers), one ``[split:<name>]`` section listing sequence names and one
``[sequence:<name>]`` section per file.
"""

from __future__ import annotations

import configparser
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from gazerefine.errors import FormatError
from gazerefine.geometry import Kappa, ScreenGeometry
from gazerefine.numerics.rng import Rng
from gazerefine.simulator.observer import (
    EyeAppearance,
    ObserverProfile,
    blink_mask,
    observer_gaze,
    pupil_size,
    render_eye,
    sample_observer,
)
from gazerefine.simulator.stimulus import KINDS, SCENE_SECONDS, gen_script, render_screen

MAGIC = b"GZSQ"
VERSION = 1
DATASET_VERSION = 1
LABELS = ("pog_x_cm", "pog_y_cm", "pog_x_px", "pog_y_px",
          "true_left_pitch", "true_left_yaw", "true_right_pitch", "true_right_yaw",
          "app_left_pitch", "app_left_yaw", "app_right_pitch", "app_right_yaw", "pupil_mm")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SimConfig:
    n_train: int = 20
    n_val: int = 4
    n_test: int = 6
    kinds: tuple = KINDS
    seconds_per_kind: float = 6.0
    seq_len: int = 30
    rate_hz: float = 10.0
    eye_size: int = 64
    noise_deg: float = 1.0
    train_kappa_std_deg: float = 1.0
    test_kappa_range_deg: tuple = (2.0, 5.0)
    eye_jitter_deg: float = 0.3
    blink_rate_hz: float = 0.2
    n_objects: int = 4
    blank_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.seq_len * (1.0 / self.rate_hz) != SCENE_SECONDS:
            raise ValueError(f"seq_len / rate_hz must span {SCENE_SECONDS} s")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train + self.n_val + self.n_test == 0:
            raise ValueError("observer counts must be non-negative and not all zero")
        bad = set(self.kinds) - set(KINDS)
        if bad:
            raise ValueError(f"unknown stimulus kinds {sorted(bad)}")


@dataclass
class Sequence:
    """One 3 s sequence.  Arrays carry the time axis first."""

    name: str
    observer_id: str
    kind: str
    timestamps: np.ndarray          # (T,) float64
    screen: np.ndarray              # (T, C, H, W) uint8
    pog_cm: np.ndarray              # (T, 2)
    pog_px: np.ndarray              # (T, 2)
    gaze_true: np.ndarray           # (T, 2, 2)
    gaze_apparent: np.ndarray       # (T, 2, 2)
    pupil: np.ndarray               # (T,)
    validity: np.ndarray            # (T,) bool
    eyes: np.ndarray = None         # (T, 2, h, w) uint8 or None
    origins: np.ndarray = field(default=None)  # (2, 3) cm, from the observer

    def labels(self):
        lab = np.concatenate([self.pog_cm, self.pog_px, self.gaze_true.reshape(-1, 4),
                              self.gaze_apparent.reshape(-1, 4), self.pupil[:, None]], axis=1)
        # apparent gaze stays defined during blinks; the rest is undefined
        lab[~self.validity, :8] = np.nan
        lab[~self.validity, 12] = np.nan
        return lab


def generate_sequence(name, script, scene, profile, rng, cfg: SimConfig, screen=None):
    """Synthesize scene ``scene`` of ``script`` for one observer (float64 labels)."""
    screen = screen or ScreenGeometry()
    t = scene * SCENE_SECONDS + np.arange(cfg.seq_len) / cfg.rate_hz
    gaze = observer_gaze(script, t, profile, rng.derive("gaze"), screen)
    pupil = pupil_size(profile, t, rng.derive("pupil"))
    blinks = blink_mask(cfg.seq_len, profile.blink_rate_hz, cfg.rate_hz, rng.derive("blink"))
    frames = np.stack([render_screen(script, float(tk)) for tk in t])[:, None]
    eyes = None
    if cfg.eye_size:
        erng = rng.derive("eyes")
        eyes = np.stack([
            np.stack([render_eye(gaze.apparent[k, e], pupil[k], erng, profile.appearance, cfg.eye_size,
                                 closed=bool(blinks[k])) for e in range(2)])
            for k in range(cfg.seq_len)])
    return Sequence(name, profile.observer_id, script.kind, t, frames, gaze.pog_cm, gaze.pog_px, gaze.true,
                    gaze.apparent, pupil, ~blinks, eyes, profile.origins)


def encode_sequence(seq: Sequence):
    t = len(seq.timestamps)
    eye_h, eye_w = (0, 0) if seq.eyes is None else seq.eyes.shape[2:]
    c, h, w = seq.screen.shape[1:]
    labels = seq.labels().astype("<f4")
    header = MAGIC + struct.pack("<8I", VERSION, t, eye_h, eye_w, c, h, w, len(LABELS))
    rec = np.dtype([("ts", "<f8"), ("eyes", "u1", (2 * eye_h * eye_w,)), ("screen", "u1", (c * h * w,)),
                    ("labels", "<f4", (len(LABELS),)), ("valid", "u1")])
    body = np.zeros(t, dtype=rec)
    body["ts"] = seq.timestamps
    if eye_h:
        body["eyes"] = seq.eyes.reshape(t, -1)
    body["screen"] = seq.screen.reshape(t, -1)
    body["labels"] = labels
    body["valid"] = seq.validity.astype(np.uint8)
    return header + body.tobytes()


def decode_sequence(blob, name="", observer_id="", kind="", origins=None):
    if len(blob) < 36 or blob[:4] != MAGIC:
        raise FormatError("not a sequence file: bad magic bytes")
    version, t, eye_h, eye_w, c, h, w, n_labels = struct.unpack_from("<8I", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported sequence version {version}")
    if n_labels != len(LABELS):
        raise FormatError(f"expected {len(LABELS)} labels per sample, found {n_labels}")
    rec = np.dtype([("ts", "<f8"), ("eyes", "u1", (2 * eye_h * eye_w,)), ("screen", "u1", (c * h * w,)),
                    ("labels", "<f4", (n_labels,)), ("valid", "u1")])
    if len(blob) != 36 + t * rec.itemsize:
        raise FormatError(f"sequence body has {len(blob) - 36} bytes, expected {t * rec.itemsize}")
    body = np.frombuffer(blob, dtype=rec, count=t, offset=36)
    lab = body["labels"].astype(np.float64)
    eyes = body["eyes"].reshape(t, 2, eye_h, eye_w).copy() if eye_h else None
    return Sequence(name, observer_id, kind, body["ts"].copy(), body["screen"].reshape(t, c, h, w).copy(),
                    lab[:, 0:2], lab[:, 2:4], lab[:, 4:8].reshape(t, 2, 2), lab[:, 8:12].reshape(t, 2, 2),
                    lab[:, 12], body["valid"].astype(bool), eyes, origins)


def _fmt(values):
    return ",".join(repr(float(v)) for v in np.ravel(values))


def _observer_section(profile: ObserverProfile, split, include_kappa):
    sec = {"split": split, "origins": _fmt(profile.origins), "noise_deg": repr(profile.noise_deg),
           "blink_rate_hz": repr(profile.blink_rate_hz), "pupil_base_mm": repr(profile.pupil_base_mm),
           "pupil_amp_mm": repr(profile.pupil_amp_mm), "pupil_period_s": repr(profile.pupil_period_s),
           "pupil_phase": repr(profile.pupil_phase),
           "appearance": _fmt(list(asdict(profile.appearance).values()))}
    if include_kappa:
        sec["kappa_left"] = _fmt(profile.kappa_left)
        sec["kappa_right"] = _fmt(profile.kappa_right)
    return sec


def sample_population(cfg: SimConfig, rng):
    """Observer profiles keyed by split; train observers get small residual kappa."""
    out = {}
    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    for split in SPLITS:
        out[split] = []
        for i in range(counts[split]):
            oid = f"{split}{i:03d}"
            krange = None if split == "train" else cfg.test_kappa_range_deg
            out[split].append(sample_observer(oid, rng.derive("observer", oid), kappa_range_deg=krange,
                                              kappa_std_deg=cfg.train_kappa_std_deg,
                                              eye_jitter_deg=cfg.eye_jitter_deg, noise_deg=cfg.noise_deg,
                                              blink_rate_hz=cfg.blink_rate_hz))
    return out


def iter_sequences(cfg: SimConfig, rng, screen=None, splits=SPLITS):
    """Yield ``(split, profile, Sequence)`` for the whole dataset, deterministically.

    Every sequence draws from its own derived stream, so any subset can be
    regenerated independently.
    """
    population = sample_population(cfg, rng)
    for split in splits:
        for profile in population[split]:
            for kind in cfg.kinds:
                script = gen_script(kind, cfg.seconds_per_kind, rng.derive("script", profile.observer_id, kind),
                                    n_objects=cfg.n_objects, blank_prob=cfg.blank_prob)
                for scene in range(script.n_scenes):
                    name = f"{profile.observer_id}_{kind}_{scene:02d}"
                    srng = rng.derive("sequence", name)
                    yield split, profile, generate_sequence(name, script, scene, profile, srng, cfg, screen)


def build_dataset(out_dir, cfg: SimConfig, rng=None, screen=None):
    """Write a dataset (manifest plus one file per sequence) and return its path."""
    out_dir = Path(out_dir)
    screen = screen or ScreenGeometry()
    rng = rng or Rng(cfg.seed)
    seq_dir = out_dir / "sequences"
    try:
        seq_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {seq_dir}: {exc}") from exc
    man = configparser.ConfigParser(interpolation=None)
    man.optionxform = str
    man["dataset"] = {"version": str(DATASET_VERSION), "sequence_format_version": str(VERSION),
                      "seed": str(cfg.seed), "seq_len": str(cfg.seq_len), "rate_hz": repr(cfg.rate_hz),
                      "eye_size": str(cfg.eye_size), "labels": ",".join(LABELS),
                      "config": repr(asdict(cfg))}
    man["screen"] = {"width_mm": repr(screen.width_mm), "height_mm": repr(screen.height_mm),
                     "width_px": str(screen.width_px), "height_px": str(screen.height_px),
                     "rotation": _fmt(screen.rotation), "translation": _fmt(screen.translation)}
    splits = {s: [] for s in SPLITS}
    seen = set()
    for split, profile, seq in iter_sequences(cfg, rng, screen):
        if profile.observer_id not in seen:
            man[f"observer:{profile.observer_id}"] = _observer_section(profile, split, split != "test")
            seen.add(profile.observer_id)
        path = seq_dir / f"{seq.name}.gzsq"
        try:
            path.write_bytes(encode_sequence(seq))
        except OSError as exc:
            raise OSError(f"cannot write sequence file {path}: {exc}") from exc
        splits[split].append(seq.name)
        man[f"sequence:{seq.name}"] = {"file": f"sequences/{seq.name}.gzsq", "observer": profile.observer_id,
                                       "kind": seq.kind, "split": split}
    for split, names in splits.items():
        man[f"split:{split}"] = {"sequences": ",".join(names)}
    with open(out_dir / "manifest.ini", "w") as fh:
        man.write(fh)
    return out_dir


@dataclass
class SplitData:
    """Sequences of one split stacked along a leading axis S."""

    names: list
    observers: np.ndarray           # (S,) str
    kinds: np.ndarray               # (S,) str
    screen: np.ndarray              # (S, T, C, H, W) uint8
    eyes: np.ndarray                # (S, T, 2, h, w) uint8 or None
    pog_cm: np.ndarray              # (S, T, 2)
    pog_px: np.ndarray
    gaze_true: np.ndarray           # (S, T, 2, 2)
    gaze_apparent: np.ndarray
    pupil: np.ndarray               # (S, T)
    validity: np.ndarray            # (S, T)
    origins: np.ndarray             # (S, 2, 3)

    def __len__(self):
        return len(self.names)

    @classmethod
    def from_sequences(cls, seqs):
        if not seqs:
            raise ValueError("no sequences to stack")
        eyes = None if seqs[0].eyes is None else np.stack([s.eyes for s in seqs])
        return cls([s.name for s in seqs], np.array([s.observer_id for s in seqs]),
                   np.array([s.kind for s in seqs]), np.stack([s.screen for s in seqs]), eyes,
                   np.stack([s.pog_cm for s in seqs]), np.stack([s.pog_px for s in seqs]),
                   np.stack([s.gaze_true for s in seqs]), np.stack([s.gaze_apparent for s in seqs]),
                   np.stack([s.pupil for s in seqs]), np.stack([s.validity for s in seqs]),
                   np.stack([s.origins for s in seqs]))

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        pick = (lambda a: None if a is None else a[index])
        return SplitData([self.names[i] for i in index], self.observers[index], self.kinds[index],
                         self.screen[index], pick(self.eyes), self.pog_cm[index], self.pog_px[index],
                         self.gaze_true[index], self.gaze_apparent[index], self.pupil[index],
                         self.validity[index], self.origins[index])

    def where_kind(self, kind):
        return self.subset(self.kinds == kind)


@dataclass
class Dataset:
    root: Path
    screen: ScreenGeometry
    observers: dict                 # id -> dict of manifest fields
    splits: dict                    # split -> SplitData

    def split(self, name):
        if name not in self.splits or len(self.splits[name]) == 0:
            raise ValueError(f"split {name!r} is empty or missing")
        return self.splits[name]


def _floats(text):
    return np.array([float(v) for v in text.split(",")]) if text else np.zeros(0)


def load_manifest(root):
    path = Path(root) / "manifest.ini"
    man = configparser.ConfigParser(interpolation=None)
    man.optionxform = str
    try:
        with open(path) as fh:
            man.read_file(fh)
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    except configparser.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if "dataset" not in man or man["dataset"].get("version") != str(DATASET_VERSION):
        raise FormatError(f"{path}: missing or unsupported dataset version")
    return man


def load_dataset(root, splits=SPLITS):
    root = Path(root)
    man = load_manifest(root)
    sc = man["screen"]
    screen = ScreenGeometry(float(sc["width_mm"]), float(sc["height_mm"]), int(sc["width_px"]),
                            int(sc["height_px"]), _floats(sc["rotation"]).reshape(3, 3), _floats(sc["translation"]))
    observers = {}
    for sec in man.sections():
        if sec.startswith("observer:"):
            d = dict(man[sec])
            observers[sec.split(":", 1)[1]] = d
    out = {}
    for split in splits:
        names = [n for n in man.get(f"split:{split}", "sequences", fallback="").split(",") if n]
        seqs = []
        for name in names:
            meta = man[f"sequence:{name}"]
            path = root / meta["file"]
            try:
                blob = path.read_bytes()
            except OSError as exc:
                raise FormatError(f"cannot read sequence {path}: {exc}") from exc
            try:
                origins = _floats(observers[meta["observer"]]["origins"]).reshape(2, 3)
                seqs.append(decode_sequence(blob, name, meta["observer"], meta["kind"], origins))
            except FormatError as exc:
                raise FormatError(f"{path}: {exc}") from None
        if seqs:
            out[split] = SplitData.from_sequences(seqs)
    return Dataset(root, screen, observers, out)


def observer_kappa(dataset, observer_id):
    """Kappa of a non-test observer as ``(left, right)``; None when withheld."""
    d = dataset.observers[observer_id]
    if "kappa_left" not in d:
        return None
    return Kappa(*_floats(d["kappa_left"])), Kappa(*_floats(d["kappa_right"]))


def profile_from_manifest(observer_id, fields_):
    """Rebuild an :class:`ObserverProfile` (kappa zero when withheld)."""
    kl = Kappa(*_floats(fields_["kappa_left"])) if "kappa_left" in fields_ else Kappa(0.0, 0.0)
    kr = Kappa(*_floats(fields_["kappa_right"])) if "kappa_right" in fields_ else Kappa(0.0, 0.0)
    return ObserverProfile(observer_id, kl, kr, float(fields_["noise_deg"]), float(fields_["pupil_base_mm"]),
                           float(fields_["pupil_amp_mm"]), float(fields_["pupil_period_s"]),
                           float(fields_["pupil_phase"]), _floats(fields_["origins"]).reshape(2, 3),
                           float(fields_["blink_rate_hz"]), EyeAppearance(*_floats(fields_["appearance"])))


def in_memory_split(cfg: SimConfig, split, rng=None, screen=None):
    """Generate one split without touching disk (float64 labels)."""
    rng = rng or Rng(cfg.seed)
    seqs = [seq for _, _, seq in iter_sequences(cfg, rng, screen, splits=(split,))]
    return SplitData.from_sequences(seqs)
