"""Dataset corpora: degraded-image synthesis and line-delimited manifests.

A corpus is a directory of PNGs plus a ``manifest.jsonl`` describing every
image. The first manifest line is a header carrying corpus-level metadata;
each following line is one record. Serialization is canonical (sorted keys,
compact separators) so identical builds are byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .degrade import DegradationSpec, DomainProfile, apply_degradation, sample_spec
from .errors import ManifestError, ValidationError
from .scenes import make_scene
from .utils import derive_seed, load_image, save_image, sha256_hex, stable_json

MANIFEST_SCHEMA = "weatherkd/manifest@1"
MANIFEST_NAME = "manifest.jsonl"

ROLES = ("clean", "degraded")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str  # relative to the manifest's directory
    role: str
    split: str
    pair_id: str | None = None
    spec: DegradationSpec | None = None

    def validate(self) -> "ManifestRecord":
        if self.role not in ROLES:
            raise ManifestError(f"bad role {self.role!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"bad split {self.split!r}")
        if Path(self.image_path).is_absolute():
            raise ManifestError(f"image_path must be relative: {self.image_path!r}")
        if self.spec is not None:
            self.spec.validate()
        return self

    @property
    def kind(self) -> str | None:
        return self.spec.kind if self.spec is not None else None

    def to_dict(self) -> dict:
        d: dict = {"image_path": self.image_path, "role": self.role, "split": self.split}
        if self.pair_id is not None:
            d["pair_id"] = self.pair_id
        if self.spec is not None:
            d["spec"] = self.spec.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        spec = DegradationSpec.from_dict(d["spec"]) if "spec" in d else None
        return cls(
            image_path=d["image_path"],
            role=d["role"],
            split=d["split"],
            pair_id=d.get("pair_id"),
            spec=spec,
        ).validate()


@dataclass
class DatasetManifest:
    corpus_seed: int
    domain: str
    fingerprint: str
    records: list = field(default_factory=list)
    base_dir: Path | None = None  # set on load/save; not serialized

    def validate(self) -> "DatasetManifest":
        clean_pairs: dict[str, int] = {}
        for rec in self.records:
            rec.validate()
            if rec.role == "clean" and rec.pair_id is not None:
                clean_pairs[rec.pair_id] = clean_pairs.get(rec.pair_id, 0) + 1
        for rec in self.records:
            if rec.role == "degraded" and rec.pair_id is not None:
                if clean_pairs.get(rec.pair_id, 0) != 1:
                    raise ManifestError(
                        f"degraded pair_id {rec.pair_id!r} needs exactly one clean partner"
                    )
        return self

    # -- queries ------------------------------------------------------------

    def select(self, role: str | None = None, split: str | None = None) -> list:
        return [
            r for r in self.records
            if (role is None or r.role == role) and (split is None or r.split == split)
        ]

    @property
    def is_paired(self) -> bool:
        degraded = self.select(role="degraded")
        return bool(degraded) and all(r.pair_id is not None for r in degraded)

    def pairs(self, split: str | None = None) -> list:
        """(clean_record, degraded_record) tuples joined on pair_id."""
        by_id = {r.pair_id: r for r in self.select(role="clean") if r.pair_id}
        out = []
        for rec in self.select(role="degraded", split=split):
            if rec.pair_id is None:
                raise ManifestError("pairs() on an unpaired manifest")
            out.append((by_id[rec.pair_id], rec))
        return out

    def resolve(self, rec: ManifestRecord) -> Path:
        if self.base_dir is None:
            raise ManifestError("manifest has no base directory; save or load it first")
        return self.base_dir / rec.image_path

    def load_image(self, rec: ManifestRecord) -> np.ndarray:
        return load_image(self.resolve(rec))

    # -- serialization ------------------------------------------------------

    def header(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "corpus_seed": self.corpus_seed,
            "domain": self.domain,
            "fingerprint": self.fingerprint,
            "n_records": len(self.records),
        }

    def dumps(self) -> str:
        lines = [stable_json(self.header())]
        lines.extend(stable_json(r.to_dict()) for r in self.records)
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        self.validate()
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        self.base_dir = path.parent
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ManifestError(f"cannot read manifest {path}: {e}") from e
        if not lines:
            raise ManifestError(f"empty manifest {path}")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as e:
            raise ManifestError(f"bad manifest header in {path}: {e}") from e
        if header.get("schema") != MANIFEST_SCHEMA:
            raise ManifestError(f"unknown manifest schema {header.get('schema')!r}")
        try:
            records = [ManifestRecord.from_dict(json.loads(ln)) for ln in lines[1:] if ln]
        except (json.JSONDecodeError, KeyError) as e:
            raise ManifestError(f"bad manifest record in {path}: {e}") from e
        if header.get("n_records") != len(records):
            raise ManifestError(
                f"manifest {path} truncated: header says {header.get('n_records')} "
                f"records, found {len(records)}"
            )
        m = cls(
            corpus_seed=header["corpus_seed"],
            domain=header["domain"],
            fingerprint=header.get("fingerprint", ""),
            records=records,
            base_dir=path.parent,
        )
        return m.validate()


# ---------------------------------------------------------------------------
# corpus building


def _split_for(index: int, n: int, test_fraction: float) -> str:
    n_test = int(math.floor(n * test_fraction))
    return "test" if index >= n - n_test else "train"


def _source_image(clean_source, size: int, slot: int, corpus_seed: int,
                  files: list | None) -> np.ndarray:
    if files is None:
        return make_scene(size, (corpus_seed, "scene", slot))
    img = load_image(files[slot])
    if img.shape[0] != size or img.shape[1] != size:
        from PIL import Image

        with Image.open(files[slot]) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
            img = np.asarray(im, dtype=np.float64) / 255.0
    return img


def build_corpus(
    clean_source,
    profile: DomainProfile,
    paired: bool,
    n_images: int,
    out_dir,
    corpus_seed: int,
    size: int = 64,
    test_fraction: float = 0.2,
    fingerprint: str | None = None,
) -> DatasetManifest:
    """Synthesize a degraded corpus and write images + manifest under out_dir.

    clean_source may be None (procedural scenes) or a directory of images.
    Paired mode emits n_images clean/degraded pairs sharing pair_ids; unpaired
    mode emits a clean pool and a degraded pool rendered from disjoint source
    images, with no pair links. Each image slot draws from its own RNG stream
    keyed on (corpus_seed, slot), so builds are order-independent and two
    builds with the same seed are byte-identical.
    """
    profile.validate()
    if n_images < 1:
        raise ValidationError("n_images must be >= 1")
    n_slots = n_images if paired else 2 * n_images
    files = None
    if clean_source is not None:
        src = Path(clean_source)
        files = sorted(p for p in src.glob("*") if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if len(files) < n_slots:
            raise ValidationError(
                f"clean source {src} has {len(files)} images, need {n_slots}"
            )

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    if fingerprint is None:
        fingerprint = sha256_hex(stable_json({
            "domain": profile.name, "n": n_images, "paired": paired,
            "seed": corpus_seed, "size": size,
        }).encode())[:12]

    records: list[ManifestRecord] = []
    for i in range(n_images):
        clean_slot = i
        degraded_slot = i if paired else n_images + i
        split = _split_for(i, n_images, test_fraction)
        pair_id = f"p{i:06d}" if paired else None

        clean = _source_image(clean_source, size, clean_slot, corpus_seed, files)
        clean_rel = f"images/clean_{clean_slot:06d}.png"
        save_image(clean, out_dir / clean_rel)
        records.append(ManifestRecord(clean_rel, "clean", split, pair_id=pair_id))

        spec = sample_spec(profile, derive_seed(corpus_seed, "spec", degraded_slot))
        source = clean if paired else _source_image(
            clean_source, size, degraded_slot, corpus_seed, files)
        degraded = apply_degradation(
            source, spec, derive_seed(corpus_seed, "render", degraded_slot))
        degraded_rel = f"images/degraded_{degraded_slot:06d}.png"
        save_image(degraded, out_dir / degraded_rel)
        records.append(ManifestRecord(degraded_rel, "degraded", split, pair_id=pair_id, spec=spec))

    manifest = DatasetManifest(
        corpus_seed=corpus_seed, domain=profile.name,
        fingerprint=fingerprint, records=records,
    )
    manifest.save(out_dir)
    return manifest
