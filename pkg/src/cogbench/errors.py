"""Exception hierarchy shared across the package.

Every error raised on bad input or bad data derives from CogError so the
CLI can map them to exit code 2 uniformly.
"""

from __future__ import annotations


class CogError(Exception):
    """Base class for all input/data errors raised by this package."""


# --- taxonomy ---------------------------------------------------------------


class MalformedLine(CogError):
    def __init__(self, line_no: int, line: str, reason: str):
        self.line_no = line_no
        self.line = line
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}: {line!r}")


class CycleDetected(CogError):
    def __init__(self, child: str, parent: str):
        self.edge = (child, parent)
        super().__init__(f"taxonomy contains a cycle through edge {child} -> {parent}")


class MultipleRoots(CogError):
    def __init__(self, roots: list[str]):
        self.roots = roots
        super().__init__(f"taxonomy has {len(roots)} parentless nodes: {', '.join(roots)}")


class EmptyTaxonomy(CogError):
    def __init__(self):
        super().__init__("taxonomy has no edges")


class UnknownConcept(CogError):
    def __init__(self, concept: str):
        self.concept = concept
        super().__init__(f"unknown concept: {concept!r}")


class UnknownConceptInMeta(CogError):
    def __init__(self, concepts: list[str]):
        self.concepts = concepts
        shown = ", ".join(concepts[:10])
        super().__init__(f"metadata references {len(concepts)} concepts not in the taxonomy: {shown}")


# --- semsim -----------------------------------------------------------------


class EmptySeenSet(CogError):
    def __init__(self):
        super().__init__("seen set is empty")


class ConceptInSeenSet(CogError):
    def __init__(self, concept: str):
        self.concept = concept
        super().__init__(f"concept {concept!r} is itself in the seen set")


class UnknownScoreConcept(CogError):
    def __init__(self, concepts: list[str]):
        self.concepts = concepts
        shown = ", ".join(concepts[:10])
        super().__init__(f"score table references {len(concepts)} concepts not in the taxonomy: {shown}")


class MissingScore(CogError):
    def __init__(self, concept: str):
        self.concept = concept
        super().__init__(f"no external score for concept {concept!r}")


# --- levels -----------------------------------------------------------------


class SeenNotInTaxonomy(CogError):
    def __init__(self, concepts: list[str]):
        self.concepts = concepts
        shown = ", ".join(concepts[:10])
        super().__init__(f"{len(concepts)} seen concepts not in the taxonomy: {shown}")


class BannedRootNotInTaxonomy(CogError):
    def __init__(self, concepts: list[str]):
        self.concepts = concepts
        shown = ", ".join(concepts[:10])
        super().__init__(f"{len(concepts)} banned subtree roots not in the taxonomy: {shown}")


class NotEnoughConcepts(CogError):
    def __init__(self, available: int, needed: int):
        self.available = available
        self.needed = needed
        super().__init__(f"ranked list has {available} concepts but K*S = {needed} are required")


class TooFewImages(CogError):
    def __init__(self, concept: str, available: int, needed: int):
        self.concept = concept
        self.available = available
        self.needed = needed
        super().__init__(f"concept {concept!r} has {available} images, needs at least {needed}")


# --- features ---------------------------------------------------------------


class BadMagic(CogError):
    def __init__(self, found: bytes):
        self.found = found
        super().__init__(f"not a COGF file (magic bytes {found!r})")


class UnsupportedVersion(CogError):
    def __init__(self, detail: str):
        super().__init__(f"unsupported COGF file: {detail}")


class InvalidHeader(CogError):
    def __init__(self, detail: str):
        super().__init__(f"invalid COGF header: {detail}")


class TruncatedPayload(CogError):
    def __init__(self, what: str, wanted: int, got: int):
        super().__init__(f"truncated COGF payload while reading {what}: wanted {wanted} bytes, got {got}")


class TrailingData(CogError):
    def __init__(self):
        super().__init__("COGF file has trailing bytes after the declared payload")


class LabelOutOfRange(CogError):
    def __init__(self, label: int, num_classes: int):
        self.label = label
        self.num_classes = num_classes
        super().__init__(f"label {label} out of range for {num_classes} classes")


class ImageIdsAbsent(CogError):
    def __init__(self):
        super().__init__("feature table has no image ids; cannot split by manifest")


class MissingImageId(CogError):
    def __init__(self, offenders: list[str], total: int):
        self.offenders = offenders
        self.total = total
        shown = ", ".join(offenders[:10])
        super().__init__(f"{total} manifest image ids missing from the feature table (first 10: {shown})")


class DuplicateImageId(CogError):
    def __init__(self, image_id: str, where: str):
        self.image_id = image_id
        super().__init__(f"duplicate image id {image_id!r} in {where}")


class EmptyManifest(CogError):
    def __init__(self):
        super().__init__("manifest contains no concepts")


# --- probe ------------------------------------------------------------------


class MissingClass(CogError):
    def __init__(self, missing: list[int]):
        self.missing = missing
        shown = ", ".join(str(m) for m in missing[:10])
        super().__init__(f"{len(missing)} classes absent from the training set: {shown}")


class DivergedLoss(CogError):
    def __init__(self, detail: str):
        super().__init__(f"training diverged: {detail}")


class DimensionMismatch(CogError):
    def __init__(self, model_dim: int, data_dim: int):
        super().__init__(f"model expects {model_dim}-dim features, data has {data_dim}")


class EmptyTestSet(CogError):
    def __init__(self):
        super().__init__("test set is empty")


# --- cli / report -----------------------------------------------------------


class ConfigError(CogError):
    """Bad or missing configuration value."""


class BaselineMissing(CogError):
    def __init__(self, baseline: str, known: list[str]):
        self.baseline = baseline
        super().__init__(f"baseline model {baseline!r} not among loaded results: {', '.join(known)}")


class SchemaMismatch(CogError):
    def __init__(self, detail: str):
        super().__init__(f"results files are not mergeable: {detail}")
