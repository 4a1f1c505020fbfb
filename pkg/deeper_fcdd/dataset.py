"""Define dataset ingestion, splitting, ablation sampling and hazard sidecars."""
from __future__ import annotations

import csv
from dataclasses import replace
import math
import os
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from deeper_fcdd.const import (
    DEFAULT_SPLIT_RATIO,
    GROUND_TRUTH_DIR,
    IMAGE_SUFFIXES,
    LABEL_ANOMALOUS,
    LABEL_DIRS,
    LABEL_NORMAL,
    LOGGER,
    SPLITS,
)
from deeper_fcdd.errors import ConfigError, DataError, ShortfallError
from deeper_fcdd.model.manifest import MANIFEST_COLUMNS, DatasetManifest, ManifestRecord

RATIO_TOLERANCE = 1e-9
SIDECAR_COLUMNS = ("image_id", "weight")


def _image_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        return []
    return sorted(
        path
        for path in directory.iterdir()
        if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES
    )


def _verify_image(path: Path) -> None:
    try:
        with Image.open(path) as image:
            image.verify()
    except (OSError, UnidentifiedImageError, SyntaxError) as err:
        raise DataError(f"Unreadable image {path}: {err}") from err


def scan(root: Union[str, Path], *, verify: bool = True) -> DatasetManifest:
    """Return an unsplit manifest of root/<class>/{normal,anomalous}/*.

    Records are ordered by relative path. A class directory without any image in
    its label directories is an offender; all offenders are reported together.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"Dataset root {root} is not a directory")

    class_dirs = sorted(path for path in root.iterdir() if path.is_dir())
    if not class_dirs:
        raise DataError(f"Dataset root {root} holds no class directories")

    records = []
    offenders = []
    for class_dir in class_dirs:
        found = 0
        for label_dir, label in sorted(LABEL_DIRS.items()):
            for path in _image_files(class_dir / label_dir):
                if verify:
                    _verify_image(path)
                records.append(
                    ManifestRecord(
                        image_id=f"{class_dir.name}/{label_dir}/{path.stem}",
                        path=path.relative_to(root).as_posix(),
                        class_name=class_dir.name,
                        label=label,
                    )
                )
                found += 1
        if not found:
            offenders.append(class_dir.name)

    if offenders:
        raise DataError(
            f"Class directories without normal/anomalous images: {', '.join(offenders)}"
        )

    records.sort(key=lambda record: record.path)
    LOGGER.info(
        "Scanned %s: %d images in %d classes", root, len(records), len(class_dirs)
    )
    return DatasetManifest(records, seed=None, source=str(root), root=root)


def split_counts(total: int, ratio: Sequence[float]) -> list[int]:
    """Return per-split counts: floor cal and test, leftovers to train.

    Train never exceeds its quota by a full item or more; any such excess goes back
    to cal or test by largest remainder (ties go to cal).
    """
    quotas = [total * part for part in ratio]
    counts = [0] + [math.floor(quota + RATIO_TOLERANCE) for quota in quotas[1:]]
    counts[0] = total - sum(counts)
    order = sorted(
        range(1, len(ratio)),
        key=lambda index: (-(quotas[index] - counts[index]), index),
    )
    for index in order:
        if counts[0] < quotas[0] + 1 - RATIO_TOLERANCE:
            break
        counts[0] -= 1
        counts[index] += 1
    return counts


def _check_ratio(ratio: Sequence[float]) -> None:
    if len(ratio) != len(SPLITS):
        raise ConfigError(f"Split ratio needs {len(SPLITS)} parts, got {list(ratio)}")
    if any(part < 0 for part in ratio):
        raise ConfigError(f"Split ratio parts must be >= 0, got {list(ratio)}")
    if abs(sum(ratio) - 1.0) > RATIO_TOLERANCE:
        raise ConfigError(f"Split ratio {list(ratio)} does not sum to 1")


def _strata(manifest: DatasetManifest) -> dict[tuple[str, int], list[int]]:
    strata: dict[tuple[str, int], list[int]] = {}
    for index, record in enumerate(manifest.records):
        strata.setdefault(record.stratum, []).append(index)
    return dict(sorted(strata.items()))


def split(
    manifest: DatasetManifest,
    ratio: Sequence[float] = DEFAULT_SPLIT_RATIO,
    seed: int = 0,
) -> DatasetManifest:
    """Return the manifest with a seeded split stratified by (class, label)."""
    _check_ratio(ratio)
    rng = np.random.default_rng(seed)
    assigned: list[Optional[str]] = [None] * len(manifest.records)

    for stratum, indices in _strata(manifest).items():
        order = rng.permutation(len(indices))
        counts = split_counts(len(indices), ratio)
        position = 0
        for name, count in zip(SPLITS, counts):
            for pick in order[position : position + count]:
                assigned[indices[pick]] = name
            position += count
        LOGGER.debug("Split stratum %s into %s", stratum, counts)

    return replace(
        manifest,
        records=[
            replace(record, split=name)
            for record, name in zip(manifest.records, assigned)
        ],
        seed=seed,
    )


def _per_class_allotment(
    class_names: list[str], n_anomalous: int, per_class: Optional[int]
) -> dict[str, int]:
    if per_class is not None:
        if per_class * len(class_names) != n_anomalous:
            raise ConfigError(
                f"{per_class} anomalous per class x {len(class_names)} classes "
                f"!= {n_anomalous}"
            )
        return {name: per_class for name in class_names}
    base, extra = divmod(n_anomalous, len(class_names))
    return {
        name: base + (1 if index < extra else 0)
        for index, name in enumerate(class_names)
    }


def ablation_sample(
    manifest: DatasetManifest,
    n_normal: int,
    n_anomalous: int,
    per_class_anomalous: Optional[int] = None,
    seed: int = 0,
) -> DatasetManifest:
    """Return a pooled, unsplit sample of n_normal plus n_anomalous images.

    Anomalous images are drawn per class (``per_class_anomalous`` each, or an even
    share when omitted); normal images are drawn from the pooled normal images.
    """
    if n_normal < 0 or n_anomalous < 0:
        raise ConfigError(f"Sample counts must be >= 0, got {n_normal}:{n_anomalous}")
    class_names = manifest.class_names
    if not class_names:
        raise DataError("Cannot sample from an empty manifest")

    pools: dict[str, list[int]] = {"normal (pooled)": []}
    requested = {"normal (pooled)": n_normal}
    allotment = _per_class_allotment(class_names, n_anomalous, per_class_anomalous)
    for name, count in allotment.items():
        pools[f"{name}/anomalous"] = []
        requested[f"{name}/anomalous"] = count
    for index, record in enumerate(manifest.records):
        key = (
            "normal (pooled)"
            if record.label == LABEL_NORMAL
            else f"{record.class_name}/anomalous"
        )
        pools[key].append(index)

    for stratum, count in requested.items():
        if count > len(pools[stratum]):
            raise ShortfallError(stratum, count, len(pools[stratum]))

    rng = np.random.default_rng(seed)
    chosen: set[int] = set()
    for stratum in sorted(pools):
        picks = rng.choice(len(pools[stratum]), size=requested[stratum], replace=False)
        chosen.update(pools[stratum][pick] for pick in picks)

    return replace(
        manifest,
        records=[
            replace(record, split=None)
            for index, record in enumerate(manifest.records)
            if index in chosen
        ],
        seed=seed,
    )


def filter_class(
    manifest: DatasetManifest, class_name: Optional[str]
) -> DatasetManifest:
    """Return only one class's records; None keeps every class."""
    if class_name is None:
        return manifest
    if class_name not in manifest.class_names:
        raise ConfigError(
            f"Class '{class_name}' not in dataset "
            f"(have {', '.join(manifest.class_names)})"
        )
    return manifest.select(class_name=class_name)


def load_hazard_weights(
    manifest: DatasetManifest, sidecar: Optional[Union[str, Path]]
) -> DatasetManifest:
    """Return the manifest with hazard weights matched by image id.

    Without a sidecar every weight is 1.0; images the sidecar does not name keep 1.0.
    """
    if sidecar is None:
        return manifest.with_records(
            replace(record, hazard_weight=1.0) for record in manifest.records
        )
    sidecar = Path(sidecar)
    if not sidecar.is_file():
        raise DataError(f"Hazard sidecar {sidecar} does not exist")

    weights: dict[str, float] = {}
    with sidecar.open(newline="", encoding="utf-8") as fptr:
        reader = csv.DictReader(fptr)
        columns = set(reader.fieldnames or ())
        if not set(SIDECAR_COLUMNS) <= columns:
            raise DataError(f"Hazard sidecar {sidecar} needs columns {SIDECAR_COLUMNS}")
        # Row 1 is the header.
        for row_number, row in enumerate(reader, start=2):
            image_id = row["image_id"]
            try:
                weight = float(row["weight"])
            except (TypeError, ValueError) as err:
                raise DataError(
                    f"{sidecar} row {row_number}: "
                    f"weight '{row['weight']}' is not numeric"
                ) from err
            if not (weight > 0 and math.isfinite(weight)):
                raise DataError(
                    f"{sidecar} row {row_number}: weight {weight} must be > 0"
                )
            if image_id in weights:
                raise DataError(
                    f"{sidecar} row {row_number}: duplicate image id '{image_id}'"
                )
            weights[image_id] = weight

    known = {record.image_id for record in manifest.records}
    unmatched = sorted(set(weights) - known)
    if unmatched:
        LOGGER.warning(
            "Hazard sidecar names %d images not in the manifest (first: %s)",
            len(unmatched),
            unmatched[0],
        )
    return manifest.with_records(
        replace(record, hazard_weight=weights.get(record.image_id, 1.0))
        for record in manifest.records
    )


def ground_truth_path(
    manifest: DatasetManifest, record: ManifestRecord
) -> Optional[Path]:
    """Return the blob mask of an anomalous image, if one sits beside it."""
    if record.label != LABEL_ANOMALOUS:
        return None
    image_path = manifest.resolve(record)
    mask = image_path.parent.parent / GROUND_TRUTH_DIR / f"{image_path.stem}.png"
    return mask if mask.is_file() else None


def write_manifest(path: Union[str, Path], manifest: DatasetManifest) -> Path:
    """Write the manifest CSV; image paths are stored relative to its directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    with path.open("w", newline="", encoding="utf-8") as fptr:
        fptr.write(f"# seed={manifest.seed} source={manifest.source}\n")
        writer = csv.DictWriter(fptr, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for record in manifest.records:
            relative = os.path.relpath(manifest.resolve(record).resolve(), base)
            writer.writerow({**record.as_dict(), "path": Path(relative).as_posix()})
    LOGGER.debug("Wrote manifest with %d records to %s", len(manifest), path)
    return path


def _parse_header(line: str) -> tuple[Optional[int], str]:
    seed: Optional[int] = None
    source = ""
    body = line.lstrip("#").strip()
    if "source=" in body:
        body, source = body.split("source=", 1)
    for part in body.split():
        key, _, value = part.partition("=")
        if key == "seed" and value not in ("", "None"):
            seed = int(value)
    return seed, source.strip()


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Read a manifest CSV written by write_manifest."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fptr:
            header = fptr.readline()
            if not header.startswith("#"):
                raise DataError(f"Manifest {path} lacks its '# seed=' header")
            seed, source = _parse_header(header)
            records = [ManifestRecord.from_dict(row) for row in csv.DictReader(fptr)]
    except OSError as err:
        raise DataError(f"Cannot read manifest {path}: {err}") from err
    except (KeyError, ValueError) as err:
        raise DataError(f"Malformed manifest {path}: {err}") from err
    return DatasetManifest(records, seed=seed, source=source, root=path.parent)
